use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::{ll_serde, EnsembleMeta, PosteriorEnsemble, SampleRecord};
use super::{params_log_likelihood, pcn_step, LogTarget, SamplerConfig, StepSize, ADAPT_BATCH, ADAPT_TARGET};
use crate::bures::{sample_prior, BuresParams};
use crate::error::{Error, Result};

const BETA_MIN: f64 = 1e-8;

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub config: SamplerConfig,
    pub dim: usize,
    /// Steps taken so far, burn-in included.
    pub step: u64,
    pub current: BuresParams,
    #[serde(with = "ll_serde")]
    pub current_ll: f64,
    pub beta: f64,
    pub burn_in_accepted: u64,
    /// Accepted proposals after burn-in.
    pub accepted: u64,
    batch_accepted: u64,
    /// ChaCha word position, a `u128` kept as a decimal string.
    rng_word_pos: String,
    pub samples: Vec<SampleRecord>,
}

/// A single pCN chain bound to a likelihood target.
pub struct Chain<'a, T: LogTarget + ?Sized> {
    target: &'a T,
    state: ChainState,
    rng: ChaCha8Rng,
}

fn chain_rng(cfg: &SamplerConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    rng
}

impl<'a, T: LogTarget + ?Sized> Chain<'a, T> {
    /// Starts from a prior draw.
    pub fn new(target: &'a T, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let dim = target.dim();
        let mut rng = chain_rng(&config);
        let current = sample_prior(&mut rng, dim)?;
        let current_ll = params_log_likelihood(target, &current)?;
        if current_ll.is_nan() {
            return Err(Error::NanLikelihood);
        }
        let state = ChainState {
            config,
            dim,
            step: 0,
            current,
            current_ll,
            beta: config.beta.initial(),
            burn_in_accepted: 0,
            accepted: 0,
            batch_accepted: 0,
            rng_word_pos: String::new(),
            samples: Vec::with_capacity(config.samples),
        };
        Ok(Self { target, state, rng })
    }

    /// Continues from a saved state.
    pub fn resume(target: &'a T, state: ChainState) -> Result<Self> {
        state.config.validate()?;
        if state.dim != target.dim() || state.current.dim() != state.dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint dimension {} does not match model dimension {}",
                state.dim,
                target.dim()
            )));
        }
        let pos: u128 = state
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng position {:?}", state.rng_word_pos)))?;
        let mut rng = chain_rng(&state.config);
        rng.set_word_pos(pos);
        Ok(Self { target, state, rng })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Snapshot including the RNG position.
    pub fn snapshot(&self) -> ChainState {
        let mut s = self.state.clone();
        s.rng_word_pos = self.rng.get_word_pos().to_string();
        s
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.state.config.total_steps()
    }

    /// Takes up to `max_steps` steps; returns whether the chain has finished.
    pub fn advance(&mut self, max_steps: u64) -> Result<bool> {
        let cfg = self.state.config;
        let burn = cfg.burn_in_steps();
        let total = cfg.total_steps();
        let thin = cfg.thinning as u64;
        let adaptive = matches!(cfg.beta, StepSize::Adaptive { .. });
        let target = self.target;
        let mut taken = 0;
        while self.state.step < total && taken < max_steps {
            let s = &mut self.state;
            let (next, ll, acc) =
                pcn_step(&s.current, s.current_ll, s.beta, &mut self.rng, |z| params_log_likelihood(target, z))?;
            s.current = next;
            s.current_ll = ll;
            s.step += 1;
            taken += 1;
            if s.step <= burn {
                if acc {
                    s.burn_in_accepted += 1;
                    s.batch_accepted += 1;
                }
                if adaptive && s.step % ADAPT_BATCH == 0 {
                    let rate = s.batch_accepted as f64 / ADAPT_BATCH as f64;
                    if rate < ADAPT_TARGET.0 || rate > ADAPT_TARGET.1 {
                        s.beta = (s.beta * (2.0 * (rate - 0.25)).exp()).clamp(BETA_MIN, 1.0);
                    }
                    s.batch_accepted = 0;
                }
            } else {
                if acc {
                    s.accepted += 1;
                }
                let post = s.step - burn;
                if post % thin == 0 {
                    s.samples.push(SampleRecord {
                        chain: cfg.stream,
                        step: s.step,
                        log_likelihood: s.current_ll,
                        acceptance: s.accepted as f64 / post as f64,
                        params: s.current.clone(),
                    });
                }
            }
        }
        Ok(self.is_finished())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.advance(u64::MAX).map(|_| ())
    }

    /// Runs to completion (or until `stop_after` total steps), writing a
    /// checkpoint every `every` steps and once more when it stops.
    pub fn run_with_checkpoints(&mut self, path: &Path, every: u64, stop_after: Option<u64>) -> Result<bool> {
        let every = every.max(1);
        loop {
            let limit = stop_after.unwrap_or(u64::MAX);
            if self.state.step >= limit {
                self.save_checkpoint(path)?;
                return Ok(self.is_finished());
            }
            let n = every.min(limit - self.state.step);
            let done = self.advance(n)?;
            self.save_checkpoint(path)?;
            if done {
                return Ok(true);
            }
        }
    }

    /// Writes the snapshot atomically (temporary file, then rename).
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut f, &self.snapshot())?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<ChainState> {
        serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn into_ensemble(self) -> Result<PosteriorEnsemble> {
        if !self.is_finished() {
            return Err(Error::InvalidParameter(format!(
                "chain stopped at step {} of {}",
                self.state.step,
                self.state.config.total_steps()
            )));
        }
        let s = self.state;
        let cfg = s.config;
        let burn = cfg.burn_in_steps();
        let meta = EnsembleMeta {
            sampler: Some(cfg),
            chains: 1,
            dim: s.dim,
            acceptance_rate: s.accepted as f64 / cfg.sampling_steps() as f64,
            burn_in_acceptance: if burn == 0 { 0.0 } else { s.burn_in_accepted as f64 / burn as f64 },
            final_beta: vec![s.beta],
            burn_in_steps: burn,
            ..EnsembleMeta::default()
        };
        PosteriorEnsemble::new(s.samples, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::FlatTarget;

    #[test]
    fn bookkeeping_without_burn_in() {
        let target = FlatTarget { dim: 2 };
        let cfg = SamplerConfig::new(4, 2, 11).with_burn_in(0).with_beta(StepSize::Fixed(0.3));
        let mut chain = Chain::new(&target, cfg).unwrap();
        chain.run_to_end().unwrap();
        assert_eq!(chain.state().step, 8);
        let ens = chain.into_ensemble().unwrap();
        assert_eq!(ens.len(), 4);
        let steps: Vec<u64> = ens.records().iter().map(|r| r.step).collect();
        assert_eq!(steps, [2, 4, 6, 8]);
        assert_eq!(ens.meta.acceptance_rate, 1.0);
    }

    #[test]
    fn resume_is_bitwise_identical() {
        let target = FlatTarget { dim: 3 };
        let cfg = SamplerConfig::new(6, 5, 3).with_burn_in(40);
        let mut full = Chain::new(&target, cfg).unwrap();
        full.run_to_end().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut part = Chain::new(&target, cfg).unwrap();
        assert!(!part.run_with_checkpoints(&path, 7, Some(33)).unwrap());
        let state = Chain::<FlatTarget>::load_checkpoint(&path).unwrap();
        assert_eq!(state.step, 33);
        let mut resumed = Chain::resume(&target, state).unwrap();
        resumed.run_to_end().unwrap();
        assert_eq!(resumed.snapshot(), full.snapshot());
    }

    #[test]
    fn adaptive_beta_stays_in_range() {
        let target = FlatTarget { dim: 2 };
        let cfg = SamplerConfig::new(2, 1, 0).with_burn_in(500);
        let mut chain = Chain::new(&target, cfg).unwrap();
        chain.run_to_end().unwrap();
        // Flat target accepts everything, so beta only grows and saturates at 1.
        assert_eq!(chain.state().beta, 1.0);
    }

    #[test]
    fn unfinished_chain_has_no_ensemble() {
        let target = FlatTarget { dim: 2 };
        let mut chain = Chain::new(&target, SamplerConfig::new(3, 3, 0)).unwrap();
        chain.advance(2).unwrap();
        assert!(chain.into_ensemble().is_err());
    }
}
