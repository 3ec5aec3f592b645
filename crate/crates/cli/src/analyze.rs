use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use cvtomo::analysis::{
    cat_report, expected_coherent_alpha, expected_thermal_mu, fidelity_curve, write_curve_csv, Estimate,
    DEFAULT_ALPHA_MAX,
};
use cvtomo::fock::{fidelity, mean_photon, wigner, FidelityReference, GridSpec};
use cvtomo::measurement::QuadratureDataset;
use cvtomo::sampler::{bayesian_mean, PosteriorEnsemble};
use serde_json::{json, Value};

use crate::config::{Flags, RunConfig};
use crate::io::{prepare_out, read_density, require_file, write_json};
use crate::{CliError, CliResult};

const WIGNER_HALFWIDTH: f64 = 5.0;
const WIGNER_SPACING: f64 = 0.1;

fn load_ensembles(cfg: &RunConfig) -> CliResult<Vec<(PathBuf, PosteriorEnsemble)>> {
    cfg.ensembles
        .iter()
        .map(|p| {
            require_file(p, "ensemble")?;
            Ok((p.clone(), PosteriorEnsemble::load(p)?))
        })
        .collect()
}

/// Writes whichever reports the flags ask for, plus `summary.json`:
/// `wigner.csv`, `fidelity_curve.csv`, `cat_fit.json`, `estimators.json`.
pub fn run(cfg: &RunConfig, _flags: &Flags) -> CliResult<()> {
    let _ = cfg.out_dir()?;
    let ensembles = load_ensembles(cfg)?;
    let truth_key = if cfg.lossy_truth == Some(true) { "rho_lossy" } else { "rho" };
    let truth = cfg.truth.as_ref().map(|p| read_density(p, truth_key)).transpose()?;
    let rho_file = cfg.rho.as_ref().map(|p| read_density(p, "rho")).transpose()?;
    let data = match &cfg.data {
        Some(p) => {
            require_file(p, "dataset")?;
            Some(QuadratureDataset::load(p)?)
        }
        None => None,
    };
    let want_wigner = cfg.wigner == Some(true);
    let want_curve = cfg.fidelity_curve == Some(true);
    if ensembles.is_empty() && rho_file.is_none() && data.is_none() {
        return Err(CliError::Config("nothing to analyze (--ensemble, --rho or --data)".into()));
    }
    if want_curve && truth.is_none() {
        return Err(CliError::Config("--fidelity-curve needs --truth".into()));
    }
    if cfg.cat.is_some() && ensembles.len() != 1 {
        return Err(CliError::Config("--cat needs exactly one --ensemble".into()));
    }
    let out = prepare_out(cfg)?;
    let mut summary = serde_json::Map::new();

    if want_wigner {
        let rho = match (&rho_file, ensembles.first()) {
            (Some(r), _) => r.clone(),
            (None, Some((_, e))) => bayesian_mean(e)?,
            (None, None) => return Err(CliError::Config("--wigner needs --rho or --ensemble".into())),
        };
        let half = cfg.wigner_halfwidth.unwrap_or(WIGNER_HALFWIDTH);
        let grid = wigner(&rho, &GridSpec::square(half, cfg.wigner_spacing.unwrap_or(WIGNER_SPACING)))?;
        grid.write_csv(BufWriter::new(File::create(out.join("wigner.csv"))?))?;
        summary.insert("wigner_integral".into(), json!(grid.integral()));
    }

    if want_curve {
        let truth = truth.as_ref().expect("checked above");
        let mut entries = Vec::with_capacity(ensembles.len());
        for (p, e) in &ensembles {
            let k = e.meta.records.ok_or_else(|| {
                CliError::Config(format!("{} does not record how many data records it used", p.display()))
            })?;
            entries.push((k, e));
        }
        let rows = fidelity_curve(&entries, truth)?;
        write_curve_csv(&rows, BufWriter::new(File::create(out.join("fidelity_curve.csv"))?))?;
    }

    if let Some(parity) = cfg.cat {
        let (_, ens) = &ensembles[0];
        let fit = cat_report(ens, parity, cfg.alpha_max.unwrap_or(DEFAULT_ALPHA_MAX))?;
        let mut doc = serde_json::to_value(&fit)?;
        if let Value::Object(m) = &mut doc {
            m.insert("config".into(), cfg.to_json());
        }
        write_json(&out.join("cat_fit.json"), &doc)?;
        eprintln!("nearest {parity:?} cat: |alpha| = {}, F = {}", fit.alpha_abs, fit.fidelity);
    }

    if let Some(ds) = &data {
        let alpha = expected_coherent_alpha(ds)?;
        let mu = expected_thermal_mu(ds)?;
        write_json(
            &out.join("estimators.json"),
            &json!({
                "records": ds.len(),
                "alpha0": alpha,
                "alpha0_abs": alpha.norm(),
                "mu0": mu,
                "config": cfg.to_json(),
            }),
        )?;
    }

    let reference = truth.as_ref().map(FidelityReference::new).transpose()?;
    let mut per_ensemble = Vec::new();
    for (p, e) in &ensembles {
        let rho_b = bayesian_mean(e)?;
        let photons: Vec<f64> = e.densities().iter().map(mean_photon).collect();
        let mut entry = json!({
            "path": p,
            "records": e.meta.records,
            "samples": e.len(),
            "mean_photon": Estimate::from_values(&photons)?,
            "bayes_mean_photon": mean_photon(&rho_b),
        });
        if let Some(r) = &reference {
            check_dims(r.dim(), e.dim())?;
            let fids = e.densities().iter().map(|d| r.fidelity(d)).collect::<cvtomo::Result<Vec<_>>>()?;
            entry["fidelity"] = json!(Estimate::from_values(&fids)?);
            entry["bayes_mean_fidelity"] = json!(r.fidelity(&rho_b)?);
        }
        per_ensemble.push(entry);
    }
    if !per_ensemble.is_empty() {
        summary.insert("ensembles".into(), Value::Array(per_ensemble));
    }
    if let Some(rho) = &rho_file {
        let mut entry = json!({ "mean_photon": mean_photon(rho) });
        if let Some(t) = &truth {
            check_dims(t.dim(), rho.dim())?;
            entry["fidelity"] = json!(fidelity(t, rho)?);
        }
        summary.insert("rho".into(), entry);
    }
    summary.insert("config".into(), cfg.to_json());
    write_json(&out.join("summary.json"), &summary)?;
    Ok(())
}

fn check_dims(expected: usize, found: usize) -> CliResult<()> {
    if expected == found {
        Ok(())
    } else {
        Err(cvtomo::Error::DimensionMismatch { expected, found }.into())
    }
}
