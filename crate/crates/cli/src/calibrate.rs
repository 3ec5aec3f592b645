use std::path::Path;

use cvtomo::calibrate::{fit_shot_noise, ingest, read_trace, BlockGeometry, CalibrationRecord, RawTrace, TraceHeader};
use serde_json::{json, Value};

use crate::config::{Flags, RunConfig};
use crate::io::{prepare_out, require_file, write_json};
use crate::{CliError, CliResult};

fn load_trace(path: &Path) -> CliResult<(RawTrace, TraceHeader)> {
    require_file(path, "trace")?;
    Ok(read_trace(path)?)
}

/// Writes `calibration.json` and, given a signal trace, `data.csv` (with
/// sidecar) and `ingest.json`.
pub fn run(cfg: &RunConfig, _flags: &Flags) -> CliResult<()> {
    let _ = cfg.out_dir()?;
    if cfg.vacuum.is_empty() {
        return Err(CliError::Config("no vacuum trace (--vacuum)".into()));
    }
    let default = BlockGeometry::default();
    let geometry = BlockGeometry {
        spacing: cfg.block_spacing.unwrap_or(default.spacing),
        group: cfg.block_group.unwrap_or(default.group),
    };
    let electronics = cfg.electronics.as_deref().map(load_trace).transpose()?;
    let signal = cfg.trace.as_deref().map(load_trace).transpose()?;

    let single = cfg.vacuum.len() == 1;
    let mut records = Vec::with_capacity(cfg.vacuum.len());
    for p in &cfg.vacuum {
        let (trace, header) = load_trace(p)?;
        let power = match header.lo_power_mw {
            Some(w) => w,
            None if single => 1.0,
            None => {
                return Err(CliError::Config(format!(
                    "{} has no LO power; needed when several vacuum traces are given",
                    p.display()
                )))
            }
        };
        records.push(CalibrationRecord::from_traces(&trace, electronics.as_ref().map(|t| &t.0), power, geometry)?);
    }
    let fit = if records.len() >= 2 { Some(fit_shot_noise(&records)?) } else { None };
    if let Some(fit) = &fit {
        for (c, f) in fit.iter().enumerate() {
            eprintln!("channel {c}: shot-noise variance vs LO power R^2 = {:.5}", f.r_squared);
            if f.nonlinear {
                eprintln!("warning: channel {c} shot noise is not linear in LO power");
            }
        }
    }

    // The record at the LO power closest to the signal's is used to normalize it.
    let target = signal.as_ref().and_then(|(_, h)| h.lo_power_mw);
    let chosen = match target {
        Some(w) => records
            .iter()
            .min_by(|a, b| (a.lo_power_mw - w).abs().total_cmp(&(b.lo_power_mw - w).abs()))
            .expect("at least one record"),
        None => &records[0],
    };
    let mut cal = chosen.clone();
    cal.fit = fit;

    let out = prepare_out(cfg)?;
    let mut doc = serde_json::to_value(&cal)?;
    if let Value::Object(m) = &mut doc {
        m.insert("powers".into(), serde_json::to_value(&records)?);
        m.insert("geometry".into(), serde_json::to_value(geometry)?);
        m.insert("config".into(), cfg.to_json());
    }
    write_json(&out.join("calibration.json"), &doc)?;

    if let Some((trace, header)) = &signal {
        let ramp = cfg.ramp_frequency.or(header.ramp_frequency_hz);
        let report = match ingest(trace, &cal, geometry, ramp) {
            Err(cvtomo::Error::NoMarkers) => {
                return Err(CliError::Config("signal trace carries no sync markers; phases cannot be assigned".into()))
            }
            r => r?,
        };
        let mut ds = report.dataset;
        ds.metadata.provenance = json!({ "ingest": ds.metadata.provenance, "config": cfg.to_json() });
        ds.save(&out.join("data.csv"))?;
        write_json(
            &out.join("ingest.json"),
            &json!({
                "scheme": ds.scheme(),
                "points": report.points,
                "kept": ds.len(),
                "dropped_before": report.dropped_before,
                "dropped_after": report.dropped_after,
                "sweeps": report.sweeps,
                "config": cfg.to_json(),
            }),
        )?;
        eprintln!("{} {} records from {} block points, {} sweeps", ds.len(), ds.scheme(), report.points, report.sweeps);
    }
    Ok(())
}
