use cvtomo::fock::{apply_loss, mean_photon};
use cvtomo::measurement::Scheme;
use cvtomo::simulate::{simulate_dataset, SimConfig, DEFAULT_RESOLUTION};
use serde_json::json;

use crate::config::{Flags, RunConfig};
use crate::io::{prepare_out, write_json};
use crate::{CliError, CliResult};

/// Writes `data.csv` (with its `data.json` sidecar), `truth.json` and `run.toml`.
pub fn run(cfg: &RunConfig, _flags: &Flags) -> CliResult<()> {
    let _ = cfg.out_dir()?;
    let spec = cfg.state.clone().ok_or_else(|| CliError::Config("no state (--state)".into()))?;
    let k = cfg.k.ok_or_else(|| CliError::Config("number of records not set (--K)".into()))?;
    let sim = SimConfig {
        spec,
        scheme: cfg.scheme.unwrap_or(Scheme::Homodyne),
        records: k,
        eta: cfg.eta.unwrap_or(1.0),
        cutoff: cfg.nc.unwrap_or(10),
        grid_resolution: cfg.grid_resolution.unwrap_or(DEFAULT_RESOLUTION),
        grid_halfwidth: cfg.grid_halfwidth,
        seed: cfg.seed.unwrap_or(0),
    };
    sim.validate()?;
    let out = prepare_out(cfg)?;

    let mut ds = simulate_dataset(&sim)?;
    ds.metadata.provenance = json!({ "simulation": sim, "config": cfg.to_json() });
    ds.save(&out.join("data.csv"))?;

    let truth = sim.truth()?;
    let lossy = apply_loss(&truth, sim.eta)?;
    let doc = json!({
        "state": sim.spec,
        "eta": sim.eta,
        "cutoff": sim.cutoff,
        "mean_photon": mean_photon(&truth),
        "rho": truth,
        "rho_lossy": lossy.state(),
        "config": cfg.to_json(),
    });
    write_json(&out.join("truth.json"), &doc)?;
    eprintln!("simulated {} {} records into {}", k, sim.scheme, out.display());
    Ok(())
}
