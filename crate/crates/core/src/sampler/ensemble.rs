use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SamplerConfig;
use crate::bures::{build_density, BuresParams};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, C64};
use crate::measurement::MeasurementConfig;
use crate::par::{self, Execution};

/// Half-chain mean difference below which a functional counts as converged.
pub const CONVERGENCE_TOL: f64 = 0.01;

/// Description of where retained samples sit in the chain.
pub const RETENTION_RULE: &str =
    "steps counted from 1 after burn-in; the state after every T-th post-burn-in step is retained";

/// `-inf` log-likelihoods are stored as JSON `null`.
pub(crate) mod ll_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// One retained sample, a single line of the ensemble JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub chain: u64,
    /// Chain step (burn-in included) at which the state was retained.
    pub step: u64,
    #[serde(with = "ll_serde")]
    pub log_likelihood: f64,
    /// Post-burn-in acceptance rate up to this step.
    pub acceptance: f64,
    pub params: BuresParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub sampler: Option<SamplerConfig>,
    pub measurement: Option<MeasurementConfig>,
    /// Number of data records the chain conditioned on.
    pub records: Option<usize>,
    pub chains: usize,
    pub dim: usize,
    /// Post-burn-in acceptance rate, averaged over chains.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    /// Step parameter each chain ended burn-in with.
    pub final_beta: Vec<f64>,
    pub burn_in_steps: u64,
    pub retention: String,
    /// Resolved run configuration supplied by the caller.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl Default for EnsembleMeta {
    fn default() -> Self {
        Self {
            sampler: None,
            measurement: None,
            records: None,
            chains: 1,
            dim: 0,
            acceptance_rate: 0.0,
            burn_in_acceptance: 0.0,
            final_beta: Vec::new(),
            burn_in_steps: 0,
            retention: RETENTION_RULE.to_string(),
            provenance: serde_json::Value::Null,
        }
    }
}

/// Retained samples with their density matrices.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    records: Vec<SampleRecord>,
    densities: Vec<DensityMatrix>,
    pub meta: EnsembleMeta,
}

impl PosteriorEnsemble {
    pub fn new(records: Vec<SampleRecord>, mut meta: EnsembleMeta) -> Result<Self> {
        if let Some(r) = records.first() {
            meta.dim = r.params.dim();
        }
        if records.iter().any(|r| r.params.dim() != meta.dim) {
            return Err(Error::InvalidParameter("ensemble samples differ in dimension".into()));
        }
        if !(0.0..=1.0).contains(&meta.acceptance_rate) {
            return Err(Error::InvalidParameter(format!("acceptance rate {}", meta.acceptance_rate)));
        }
        let densities = par::map_indexed(Execution::default(), records.len(), |i| build_density(&records[i].params));
        let densities = densities.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self { records, densities, meta })
    }

    /// Ensemble of bare parameter vectors, e.g. for tests or prior draws.
    pub fn from_params(params: Vec<BuresParams>) -> Result<Self> {
        let records = params
            .into_iter()
            .enumerate()
            .map(|(i, p)| SampleRecord { chain: 0, step: i as u64 + 1, log_likelihood: 0.0, acceptance: 1.0, params: p })
            .collect();
        Self::new(records, EnsembleMeta::default())
    }

    /// Ordered merge: all samples of the first part, then the second, and so on.
    pub fn pool(parts: Vec<PosteriorEnsemble>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidParameter("nothing to pool".into()));
        };
        let mut meta = first.meta.clone();
        let n = parts.len() as f64;
        meta.chains = parts.iter().map(|p| p.meta.chains).sum();
        meta.acceptance_rate = parts.iter().map(|p| p.meta.acceptance_rate).sum::<f64>() / n;
        meta.burn_in_acceptance = parts.iter().map(|p| p.meta.burn_in_acceptance).sum::<f64>() / n;
        meta.final_beta = parts.iter().flat_map(|p| p.meta.final_beta.iter().copied()).collect();
        let mut records = Vec::new();
        let mut densities = Vec::new();
        for p in parts {
            if p.meta.dim != meta.dim {
                return Err(Error::DimensionMismatch { expected: meta.dim, found: p.meta.dim });
            }
            records.extend(p.records);
            densities.extend(p.densities);
        }
        Ok(Self { records, densities, meta })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn densities(&self) -> &[DensityMatrix] {
        &self.densities
    }

    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_likelihood).collect()
    }

    /// Fraction of retained samples that differ from their predecessor in the same chain.
    pub fn distinct_fraction(&self) -> f64 {
        if self.records.len() < 2 {
            return 1.0;
        }
        let mut pairs = 0usize;
        let mut moved = 0usize;
        for w in self.records.windows(2) {
            if w[0].chain == w[1].chain {
                pairs += 1;
                if w[0].params != w[1].params {
                    moved += 1;
                }
            }
        }
        if pairs == 0 {
            1.0
        } else {
            moved as f64 / pairs as f64
        }
    }

    /// Companion metadata path: `ensemble.jsonl` becomes `ensemble.meta.json`.
    pub fn meta_path(jsonl: &Path) -> PathBuf {
        jsonl.with_extension("meta.json")
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the JSONL samples and the metadata file next to it.
    pub fn save(&self, jsonl: &Path) -> Result<()> {
        self.write_jsonl(File::create(jsonl)?)?;
        let mut f = BufWriter::new(File::create(Self::meta_path(jsonl))?);
        serde_json::to_writer_pretty(&mut f, &self.meta)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(jsonl: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for line in BufReader::new(File::open(jsonl)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<SampleRecord>(&line)?);
        }
        let meta_path = Self::meta_path(jsonl);
        let meta = if meta_path.exists() {
            serde_json::from_reader(BufReader::new(File::open(meta_path)?))?
        } else {
            EnsembleMeta::default()
        };
        Self::new(records, meta)
    }

    /// Diagnostics CSV `step,acceptance,ll,running_mean,running_std` for a
    /// functional evaluated on each retained sample.
    pub fn write_diagnostics<W: Write>(&self, values: &[f64], out: W) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: values.len() });
        }
        let report = convergence_report(values, CONVERGENCE_TOL);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "acceptance", "ll", "running_mean", "running_std"])?;
        for (i, r) in self.records.iter().enumerate() {
            w.write_record(&[
                r.step.to_string(),
                r.acceptance.to_string(),
                r.log_likelihood.to_string(),
                report.running_mean[i].to_string(),
                report.running_std[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Elementwise average of the sample density matrices, in sample order.
pub fn bayesian_mean(ens: &PosteriorEnsemble) -> Result<DensityMatrix> {
    let dens = ens.densities();
    if dens.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let d = dens[0].dim();
    let mut acc = DMatrix::<C64>::zeros(d, d);
    for rho in dens {
        acc += rho.matrix();
    }
    Ok(DensityMatrix::from_matrix_unchecked(acc / C64::new(dens.len() as f64, 0.0)))
}

/// Linear interpolation between order statistics at `h = (n - 1) q`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalStats {
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); zero for a single sample.
    pub std: f64,
    pub p16: f64,
    pub p84: f64,
    pub values: Vec<f64>,
}

impl FunctionalStats {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("no values".into()));
        }
        let (mean, std) = mean_std(&values);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { mean, std, p16: percentile(&sorted, 0.16), p84: percentile(&sorted, 0.84), values })
    }
}

// Shifted by the first value so a constant sequence gives exactly zero spread.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let x0 = v[0];
    let s: f64 = v.iter().map(|x| x - x0).sum();
    let mean = x0 + s / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let d_mean = s / n;
    let var = v.iter().map(|x| (x - x0 - d_mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample statistics of `f` over the ensemble.
pub fn estimate_functional<F>(ens: &PosteriorEnsemble, f: F) -> Result<FunctionalStats>
where
    F: Fn(&DensityMatrix) -> f64 + Sync,
{
    let dens = ens.densities();
    let values = par::map_indexed(Execution::default(), dens.len(), |i| f(&dens[i]));
    FunctionalStats::from_values(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub running_mean: Vec<f64>,
    pub running_std: Vec<f64>,
    pub first_half_mean: f64,
    pub second_half_mean: f64,
    pub first_half_std: f64,
    pub second_half_std: f64,
    /// Fraction of retained samples that moved since the previous one.
    pub distinct_fraction: f64,
    pub converged: bool,
}

/// Running statistics and a half-chain comparison of a functional trace.
///
/// Converged when at least two values are present and the two half-chain
/// means differ by less than `tol`.
pub fn convergence_report(values: &[f64], tol: f64) -> ConvergenceReport {
    let n = values.len();
    let mut running_mean = Vec::with_capacity(n);
    let mut running_std = Vec::with_capacity(n);
    // Welford update.
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let k = (i + 1) as f64;
        let delta = v - mean;
        mean += delta / k;
        m2 += delta * (v - mean);
        running_mean.push(mean);
        running_std.push(if i == 0 { 0.0 } else { (m2 / (k - 1.0)).sqrt() });
    }
    let half = n / 2;
    let (a, b) = values.split_at(half);
    let (m1, s1) = if a.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(a) };
    let (m2h, s2) = if b.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(b) };
    let converged = n >= 2 && (m1 - m2h).abs() < tol;
    ConvergenceReport {
        running_mean,
        running_std,
        first_half_mean: m1,
        second_half_mean: m2h,
        first_half_std: s1,
        second_half_std: s2,
        distinct_fraction: 1.0,
        converged,
    }
}

/// [`convergence_report`] of `f` over an ensemble, also failing a chain in
/// which fewer than half of the retained samples moved.
pub fn ensemble_convergence<F>(ens: &PosteriorEnsemble, f: F, tol: f64) -> Result<ConvergenceReport>
where
    F: Fn(&DensityMatrix) -> f64 + Sync,
{
    let stats = estimate_functional(ens, f)?;
    let mut report = convergence_report(&stats.values, tol);
    report.distinct_fraction = ens.distinct_fraction();
    report.converged &= report.distinct_fraction >= 0.5;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bures::sample_prior;
    use crate::fock::{fidelity, mean_photon};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior_ensemble(dim: usize, n: usize, seed: u64) -> PosteriorEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..n).map(|_| sample_prior(&mut rng, dim).unwrap()).collect();
        PosteriorEnsemble::from_params(params).unwrap()
    }

    #[test]
    fn mean_of_one_and_two() {
        let ens = prior_ensemble(3, 2, 1);
        let one = PosteriorEnsemble::from_params(vec![ens.records()[0].params.clone()]).unwrap();
        assert_eq!(bayesian_mean(&one).unwrap(), ens.densities()[0]);
        let m = bayesian_mean(&ens).unwrap();
        let expect = (ens.densities()[0].matrix() + ens.densities()[1].matrix()) / C64::new(2.0, 0.0);
        assert!((m.matrix() - expect).iter().all(|c| c.norm() <= 1e-16));
        m.validate().unwrap();
    }

    #[test]
    fn functional_statistics() {
        let ens = prior_ensemble(3, 50, 2);
        let c = estimate_functional(&ens, |_| 0.3).unwrap();
        assert_eq!(c.std, 0.0);
        let tr = estimate_functional(&ens, |r| r.trace()).unwrap();
        assert!((tr.mean - 1.0).abs() <= 1e-12 && tr.std <= 1e-12);
        let n = estimate_functional(&ens, mean_photon).unwrap();
        assert!(n.p16 <= n.p84);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.16) - 1.64).abs() < 1e-12);
        assert!((percentile(&v, 0.84) - 4.36).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn convergence_flags() {
        let r = convergence_report(&[0.5, 0.5], CONVERGENCE_TOL);
        assert!(r.converged);
        let r = convergence_report(&[0.2, 0.4, 0.2, 0.4], CONVERGENCE_TOL);
        assert!(r.converged);
        assert_eq!(r.first_half_mean, r.second_half_mean);
        assert!(!convergence_report(&[0.1, 0.2, 0.5, 0.6], CONVERGENCE_TOL).converged);
        assert!(!convergence_report(&[0.5], CONVERGENCE_TOL).converged);
        let r = convergence_report(&[1.0, 3.0], 1.0);
        assert_eq!(r.running_mean, [1.0, 2.0]);
        assert!((r.running_std[1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stuck_chain_fails() {
        let ens = prior_ensemble(2, 1, 4);
        let p = ens.records()[0].params.clone();
        let stuck = PosteriorEnsemble::from_params(vec![p.clone(), p.clone(), p]).unwrap();
        let r = ensemble_convergence(&stuck, |_| 1.0, CONVERGENCE_TOL).unwrap();
        assert_eq!(r.distinct_fraction, 0.0);
        assert!(!r.converged);
    }

    #[test]
    fn jsonl_round_trip() {
        let ens = prior_ensemble(2, 5, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.jsonl");
        ens.save(&path).unwrap();
        assert!(dir.path().join("ensemble.meta.json").exists());
        let back = PosteriorEnsemble::load(&path).unwrap();
        assert_eq!(back.records(), ens.records());
        assert_eq!(back.densities(), ens.densities());

        let target = ens.densities()[0].clone();
        let values: Vec<f64> = ens.densities().iter().map(|r| fidelity(r, &target).unwrap()).collect();
        let mut buf = Vec::new();
        ens.write_diagnostics(&values, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,acceptance,ll,running_mean,running_std\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn pooling_preserves_order() {
        let a = prior_ensemble(2, 3, 7);
        let b = prior_ensemble(2, 2, 8);
        let pooled = PosteriorEnsemble::pool(vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(pooled.len(), 5);
        assert_eq!(pooled.records()[3], b.records()[0]);
        assert_eq!(pooled.meta.chains, 2);
    }
}
