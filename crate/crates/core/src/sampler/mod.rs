//! Preconditioned Crank-Nicolson MCMC over Bures parameters.
//!
//! The proposal `z' = sqrt(1 - beta^2) z + beta xi`, `xi ~ N(0, I)`, is
//! reversible with respect to the Gaussian prior, so the Metropolis ratio
//! reduces to the likelihood ratio.

mod chain;
mod ensemble;

pub use chain::{Chain, ChainState};
pub use ensemble::{
    bayesian_mean, convergence_report, ensemble_convergence, estimate_functional, percentile,
    ConvergenceReport, EnsembleMeta, FunctionalStats, PosteriorEnsemble, SampleRecord, CONVERGENCE_TOL,
    RETENTION_RULE,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bures::{build_density, BuresParams};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::measurement::{LikelihoodModel, MeasurementConfig, QuadratureDataset};

/// Acceptance window targeted while adapting `beta` during burn-in.
pub const ADAPT_TARGET: (f64, f64) = (0.2, 0.3);
/// Burn-in steps per adaptation batch.
pub const ADAPT_BATCH: u64 = 50;
/// Default checkpoint interval in steps.
pub const CHECKPOINT_EVERY: u64 = 1 << 16;

/// pCN step parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// Tuned during burn-in towards [`ADAPT_TARGET`], then frozen.
    Adaptive { initial: f64 },
}

impl StepSize {
    pub fn adaptive() -> Self {
        StepSize::Adaptive { initial: 0.1 }
    }

    pub fn initial(&self) -> f64 {
        match *self {
            StepSize::Fixed(b) => b,
            StepSize::Adaptive { initial } => initial,
        }
    }
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            StepSize::Fixed(b) => s.serialize_f64(b),
            StepSize::Adaptive { initial } => {
                use serde::ser::SerializeMap;
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("adaptive", &initial)?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
            Map { adaptive: f64 },
        }
        match Raw::deserialize(de)? {
            Raw::Num(b) => Ok(StepSize::Fixed(b)),
            Raw::Word(w) => w.parse().map_err(D::Error::custom),
            Raw::Map { adaptive } => Ok(StepSize::Adaptive { initial: adaptive }),
        }
    }
}

impl std::str::FromStr for StepSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(StepSize::adaptive());
        }
        s.parse::<f64>()
            .map(StepSize::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("beta must be a number or \"adaptive\", got {s:?}")))
    }
}

/// Chain length and step settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Retained samples `R`.
    pub samples: usize,
    /// Thinning stride `T`.
    pub thinning: usize,
    /// Burn-in steps; `None` means `R * T / 8`.
    pub burn_in: Option<u64>,
    pub beta: StepSize,
    pub seed: u64,
    /// RNG stream, distinct per parallel chain.
    #[serde(default)]
    pub stream: u64,
}

impl SamplerConfig {
    pub fn new(samples: usize, thinning: usize, seed: u64) -> Self {
        Self { samples, thinning, burn_in: None, beta: StepSize::adaptive(), seed, stream: 0 }
    }

    pub fn with_burn_in(mut self, steps: u64) -> Self {
        self.burn_in = Some(steps);
        self
    }

    pub fn with_beta(mut self, beta: StepSize) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn burn_in_steps(&self) -> u64 {
        self.burn_in.unwrap_or((self.samples as u64 * self.thinning as u64) / 8)
    }

    /// Steps after burn-in, `R * T`.
    pub fn sampling_steps(&self) -> u64 {
        self.samples as u64 * self.thinning as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.burn_in_steps() + self.sampling_steps()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.thinning == 0 {
            return Err(Error::InvalidParameter("R and T must be >= 1".into()));
        }
        let b = self.beta.initial();
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta={b} outside (0, 1]")));
        }
        Ok(())
    }
}

/// Log-likelihood of a density matrix, the target the chain samples against.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;
    fn log_likelihood(&self, rho: &DensityMatrix) -> Result<f64>;
}

impl LogTarget for LikelihoodModel {
    fn dim(&self) -> usize {
        LikelihoodModel::dim(self)
    }

    fn log_likelihood(&self, rho: &DensityMatrix) -> Result<f64> {
        LikelihoodModel::log_likelihood(self, rho)
    }
}

/// Constant likelihood; the chain then samples the prior.
#[derive(Debug, Clone, Copy)]
pub struct FlatTarget {
    pub dim: usize,
}

impl LogTarget for FlatTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_likelihood(&self, _rho: &DensityMatrix) -> Result<f64> {
        Ok(0.0)
    }
}

/// Log-likelihood of parameters; measure-zero degenerate constructions count as impossible.
pub fn params_log_likelihood<T: LogTarget + ?Sized>(target: &T, z: &BuresParams) -> Result<f64> {
    match build_density(z) {
        Ok(rho) => target.log_likelihood(&rho),
        Err(Error::SingularMatrix) | Err(Error::DegenerateConstruction(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// One pCN Metropolis step. Returns the next state, its log-likelihood and
/// whether the proposal was accepted.
pub fn pcn_step<R, F>(
    current: &BuresParams,
    current_ll: f64,
    beta: f64,
    rng: &mut R,
    mut ll_fn: F,
) -> Result<(BuresParams, f64, bool)>
where
    R: Rng + ?Sized,
    F: FnMut(&BuresParams) -> Result<f64>,
{
    let proposal = current.pcn_proposal(beta, rng);
    let proposal_ll = ll_fn(&proposal)?;
    let u: f64 = rng.random();
    if proposal_ll.is_nan() {
        return Err(Error::NanLikelihood);
    }
    let accept = if proposal_ll == f64::NEG_INFINITY {
        false
    } else if current_ll == f64::NEG_INFINITY {
        true
    } else {
        u < (proposal_ll - current_ll).exp()
    };
    if accept {
        Ok((proposal, proposal_ll, true))
    } else {
        Ok((current.clone(), current_ll, false))
    }
}

/// Runs a full chain against a dataset and returns the thinned ensemble.
pub fn run_chain(
    data: &QuadratureDataset,
    cfg: &MeasurementConfig,
    s_cfg: &SamplerConfig,
) -> Result<PosteriorEnsemble> {
    let model = LikelihoodModel::new(data, cfg)?;
    let mut chain = Chain::new(&model, *s_cfg)?;
    chain.run_to_end()?;
    let mut ens = chain.into_ensemble()?;
    ens.meta.measurement = Some(*cfg);
    ens.meta.records = Some(data.len());
    Ok(ens)
}

/// Runs one chain per stream `0..n_chains` in parallel and pools them in stream order.
pub fn run_chains<T: LogTarget>(target: &T, s_cfg: &SamplerConfig, n_chains: usize) -> Result<PosteriorEnsemble> {
    let parts = crate::par::map_indexed(crate::par::Execution::default(), n_chains, |i| {
        let cfg = s_cfg.with_stream(s_cfg.stream + i as u64);
        let mut chain = Chain::new(target, cfg)?;
        chain.run_to_end()?;
        chain.into_ensemble()
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    PosteriorEnsemble::pool(parts)
}
