use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cvtomo::fock::mean_photon;
use cvtomo::measurement::{LikelihoodModel, MeasurementConfig, QuadratureDataset, Scheme};
use cvtomo::par::{map_indexed, Execution};
use cvtomo::sampler::{
    bayesian_mean, convergence_report, Chain, PosteriorEnsemble, SamplerConfig, StepSize, CHECKPOINT_EVERY,
    CONVERGENCE_TOL,
};
use serde_json::json;

use crate::config::{Flags, RunConfig};
use crate::io::{density_json, prepare_out, require_file, write_json};
use crate::{CliError, CliResult};

pub const DEFAULT_SAMPLES: usize = 1024;
pub const DEFAULT_THINNING: usize = 64;

fn checkpoint_path(out: &Path, chain: usize) -> PathBuf {
    out.join(format!("chain-{chain}.ckpt.json"))
}

/// Loads the dataset named by the config, applying `x_only` and the `K` prefix.
pub fn load_dataset(cfg: &RunConfig) -> CliResult<QuadratureDataset> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Config("no dataset (--data)".into()))?;
    require_file(path, "dataset")?;
    let mut ds = QuadratureDataset::load(path)?;
    if cfg.x_only == Some(true) {
        if ds.scheme() != Scheme::Heterodyne {
            return Err(CliError::Config("x-only projection needs heterodyne data".into()));
        }
        ds = ds.x_only();
    }
    if let Some(want) = cfg.scheme {
        if want != ds.scheme() {
            return Err(cvtomo::Error::SchemeMismatch(format!(
                "config asks for {want} but {} holds {} data",
                path.display(),
                ds.scheme()
            ))
            .into());
        }
    }
    if let Some(k) = cfg.k {
        if k == 0 || k > ds.len() {
            return Err(CliError::Config(format!("K={k} but the dataset has {} records", ds.len())));
        }
        ds = ds.prefix(k);
    }
    Ok(ds)
}

pub fn sampler_config(cfg: &RunConfig) -> CliResult<SamplerConfig> {
    let mut s = SamplerConfig::new(
        cfg.r.unwrap_or(DEFAULT_SAMPLES),
        cfg.t.unwrap_or(DEFAULT_THINNING),
        cfg.seed.unwrap_or(0),
    )
    .with_beta(cfg.beta.unwrap_or_else(StepSize::adaptive));
    if let Some(b) = cfg.burn_in {
        s = s.with_burn_in(b);
    }
    s.validate()?;
    Ok(s)
}

/// Writes `ensemble.jsonl` (+ `ensemble.meta.json`), `rho_b.json`,
/// `diagnostics.csv`, `convergence.json`, per-chain checkpoints and `run.toml`.
pub fn run(cfg: &RunConfig, flags: &Flags) -> CliResult<()> {
    let _ = cfg.out_dir()?;
    let ds = load_dataset(cfg)?;
    let m_cfg = MeasurementConfig::new(cfg.eta.unwrap_or(1.0), cfg.nc.unwrap_or(10))?;
    let s_cfg = sampler_config(cfg)?;
    let n_chains = cfg.chains.unwrap_or(1);
    if n_chains == 0 {
        return Err(CliError::Config("--chains must be >= 1".into()));
    }
    let every = cfg.checkpoint_every.unwrap_or(CHECKPOINT_EVERY);
    let out = prepare_out(cfg)?;
    let model = LikelihoodModel::new(&ds, &m_cfg)?;

    let outcomes = map_indexed(Execution::default(), n_chains, |i| -> CliResult<Option<PosteriorEnsemble>> {
        let c_cfg = s_cfg.with_stream(s_cfg.stream + i as u64);
        let ckpt = checkpoint_path(&out, i);
        let mut chain = if flags.resume && ckpt.exists() {
            let state = Chain::<LikelihoodModel>::load_checkpoint(&ckpt)?;
            if state.config != c_cfg || state.dim != m_cfg.dim() {
                return Err(CliError::Config(format!(
                    "checkpoint {} was written with a different configuration",
                    ckpt.display()
                )));
            }
            Chain::resume(&model, state)?
        } else {
            Chain::new(&model, c_cfg)?
        };
        if chain.run_with_checkpoints(&ckpt, every, flags.stop_after)? {
            Ok(Some(chain.into_ensemble()?))
        } else {
            eprintln!(
                "chain {i} stopped at step {} of {}; continue with --resume",
                chain.state().step,
                c_cfg.total_steps()
            );
            Ok(None)
        }
    });
    let mut parts = Vec::with_capacity(n_chains);
    for o in outcomes {
        match o? {
            Some(e) => parts.push(e),
            None => return Ok(()),
        }
    }
    let mut ens = PosteriorEnsemble::pool(parts)?;
    ens.meta.measurement = Some(m_cfg);
    ens.meta.records = Some(ds.len());
    ens.meta.provenance = cfg.to_json();
    ens.save(&out.join("ensemble.jsonl"))?;

    let photons: Vec<f64> = ens.densities().iter().map(mean_photon).collect();
    ens.write_diagnostics(&photons, BufWriter::new(File::create(out.join("diagnostics.csv"))?))?;
    let conv = convergence_report(&photons, CONVERGENCE_TOL);
    let converged = conv.converged && ens.distinct_fraction() >= 0.5;
    write_json(
        &out.join("convergence.json"),
        &json!({
            "functional": "mean_photon",
            "tolerance": CONVERGENCE_TOL,
            "first_half_mean": conv.first_half_mean,
            "second_half_mean": conv.second_half_mean,
            "first_half_std": conv.first_half_std,
            "second_half_std": conv.second_half_std,
            "distinct_fraction": ens.distinct_fraction(),
            "acceptance_rate": ens.meta.acceptance_rate,
            "converged": converged,
            "config": cfg.to_json(),
        }),
    )?;
    if !converged {
        eprintln!(
            "warning: half-chain mean photon numbers {:.4} and {:.4} differ by more than {CONVERGENCE_TOL}",
            conv.first_half_mean, conv.second_half_mean
        );
    }

    let rho_b = bayesian_mean(&ens)?;
    let meta = json!({
        "samples": ens.len(),
        "chains": ens.meta.chains,
        "records": ds.len(),
        "scheme": ds.scheme(),
        "eta": m_cfg.eta,
        "cutoff": m_cfg.cutoff,
        "mean_photon": mean_photon(&rho_b),
        "acceptance_rate": ens.meta.acceptance_rate,
        "config": cfg.to_json(),
    });
    write_json(&out.join("rho_b.json"), &density_json(&rho_b, meta)?)?;
    eprintln!(
        "{} samples from {} chain(s), acceptance {:.3}, <n> = {:.4}",
        ens.len(),
        ens.meta.chains,
        ens.meta.acceptance_rate,
        mean_photon(&rho_b)
    );
    Ok(())
}
