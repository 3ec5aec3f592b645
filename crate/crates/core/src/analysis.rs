//! Reference estimators from raw data and posterior summaries.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::state::pure_ket;
use crate::fock::{pure_overlap, DensityMatrix, FidelityReference, Parity, StateSpec, C64};
use crate::measurement::{QuadratureDataset, Scheme};
use crate::par::{self, Execution};
use crate::sampler::{estimate_functional, percentile, PosteriorEnsemble};

/// Default search radius for [`nearest_cat`].
pub const DEFAULT_ALPHA_MAX: f64 = 4.0;
const ANGLES: usize = 64;
const RADII: usize = 32;
const REFINE_TOL: f64 = 1e-4;

fn require_heterodyne(data: &QuadratureDataset) -> Result<()> {
    if data.scheme() != Scheme::Heterodyne {
        return Err(Error::SchemeMismatch("estimator needs heterodyne data".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    Ok(())
}

/// Phase-corrected mean field `<x cos t - p sin t> + i <x sin t + p cos t>`.
pub fn expected_coherent_alpha(data: &QuadratureDataset) -> Result<C64> {
    require_heterodyne(data)?;
    let n = data.len() as f64;
    let mut acc = C64::new(0.0, 0.0);
    for r in data.records() {
        let p = r.p.unwrap_or(0.0);
        let (s, c) = r.theta.sin_cos();
        acc += C64::new(r.x * c - p * s, r.x * s + p * c);
    }
    Ok(acc / n)
}

/// `<x^2 + p^2> - 1`; may be slightly negative on vacuum-like data.
pub fn expected_thermal_mu(data: &QuadratureDataset) -> Result<f64> {
    require_heterodyne(data)?;
    let n = data.len() as f64;
    let s: f64 = data.records().iter().map(|r| r.x * r.x + r.p.unwrap_or(0.0).powi(2)).sum();
    Ok(s / n - 1.0)
}

/// Best-matching ideal cat for one density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestCat {
    pub alpha: C64,
    /// Overlap `<C(alpha)| rho |C(alpha)>` at the optimum.
    pub fidelity: f64,
}

fn cat_overlap(rho: &DensityMatrix, alpha: C64, parity: Parity) -> f64 {
    match pure_ket(&StateSpec::Cat { alpha, parity }, rho.cutoff()) {
        Ok(Some(ket)) => pure_overlap(&ket, rho),
        _ => f64::NEG_INFINITY,
    }
}

/// Maximizes the cat overlap over `|alpha| <= alpha_max`: a 64 x 32 polar
/// grid, then compass search until the step drops below `1e-4`.
///
/// `alpha` and `-alpha` describe the same cat; the returned representative
/// is whichever the search reaches.
pub fn nearest_cat(rho: &DensityMatrix, parity: Parity, alpha_max: f64) -> NearestCat {
    let mut best = NearestCat { alpha: C64::new(0.0, 0.0), fidelity: f64::NEG_INFINITY };
    let dr = alpha_max / RADII as f64;
    for i in 0..RADII {
        let r = (i as f64 + 0.5) * dr;
        for j in 0..ANGLES {
            let a = C64::from_polar(r, TAU * j as f64 / ANGLES as f64);
            let f = cat_overlap(rho, a, parity);
            if f > best.fidelity {
                best = NearestCat { alpha: a, fidelity: f };
            }
        }
    }
    let mut step = dr;
    let dirs = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0)];
    while step >= REFINE_TOL {
        let mut moved = false;
        for d in dirs {
            let a = best.alpha + d * step;
            if a.norm() > alpha_max {
                continue;
            }
            let f = cat_overlap(rho, a, parity);
            if f > best.fidelity {
                best = NearestCat { alpha: a, fidelity: f };
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best.fidelity = best.fidelity.clamp(0.0, 1.0);
    best
}

/// Posterior mean with 16th and 84th percentiles, reported as `B^{U-B}_{L-B}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("no values".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(Self { mean, lower: percentile(&sorted, 0.16), upper: percentile(&sorted, 0.84) })
    }

    pub fn plus(&self) -> f64 {
        self.upper - self.mean
    }

    pub fn minus(&self) -> f64 {
        self.lower - self.mean
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} (+{:.3}/{:.3})", self.mean, self.plus(), self.minus())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatSample {
    pub alpha: C64,
    pub fidelity: f64,
}

/// Nearest-cat summary over a posterior ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatFit {
    pub parity: Parity,
    pub alpha_abs: Estimate,
    pub fidelity: Estimate,
    pub samples: Vec<CatSample>,
}

pub fn cat_report(ens: &PosteriorEnsemble, parity: Parity, alpha_max: f64) -> Result<CatFit> {
    let dens = ens.densities();
    if dens.is_empty() {
        return Err(Error::InvalidParameter("empty ensemble".into()));
    }
    let fits = par::map_indexed(Execution::default(), dens.len(), |i| nearest_cat(&dens[i], parity, alpha_max));
    let abs: Vec<f64> = fits.iter().map(|f| f.alpha.norm()).collect();
    let fid: Vec<f64> = fits.iter().map(|f| f.fidelity).collect();
    Ok(CatFit {
        parity,
        alpha_abs: Estimate::from_values(&abs)?,
        fidelity: Estimate::from_values(&fid)?,
        samples: fits.iter().map(|f| CatSample { alpha: f.alpha, fidelity: f.fidelity }).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub fid_mean: f64,
    pub fid_std: f64,
}

/// Fidelity to `truth` per ensemble, in ascending `K`.
pub fn fidelity_curve(entries: &[(usize, &PosteriorEnsemble)], truth: &DensityMatrix) -> Result<Vec<CurveRow>> {
    let reference = FidelityReference::new(truth)?;
    let mut rows = Vec::with_capacity(entries.len());
    for &(k, ens) in entries {
        if ens.dim() != truth.dim() {
            return Err(Error::DimensionMismatch { expected: truth.dim(), found: ens.dim() });
        }
        let stats = estimate_functional(ens, |rho| reference.fidelity(rho).unwrap_or(f64::NAN))?;
        if stats.mean.is_nan() {
            return Err(Error::InvalidDensity("fidelity evaluation failed".into()));
        }
        rows.push(CurveRow { k, fid_mean: stats.mean, fid_std: stats.std });
    }
    rows.sort_by_key(|r| r.k);
    Ok(rows)
}

/// CSV `K,fid_mean,fid_std`.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "fid_mean", "fid_std"])?;
    for r in rows {
        w.write_record(&[r.k.to_string(), r.fid_mean.to_string(), r.fid_std.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bures::sample_prior;
    use crate::fock::make_state;
    use crate::measurement::QuadratureRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_record_estimators() {
        let d = QuadratureDataset::new(Scheme::Heterodyne, vec![QuadratureRecord::heterodyne(0.0, 1.0, 0.0)]).unwrap();
        let a = expected_coherent_alpha(&d).unwrap();
        assert!((a - C64::new(1.0, 0.0)).norm() < 1e-15);
        let d = QuadratureDataset::new(Scheme::Heterodyne, vec![QuadratureRecord::heterodyne(2.2, 1.0, 1.0)]).unwrap();
        assert!((expected_thermal_mu(&d).unwrap() - 1.0).abs() < 1e-15);
        let hom = QuadratureDataset::new(Scheme::Homodyne, vec![QuadratureRecord::homodyne(0.0, 1.0)]).unwrap();
        assert!(expected_coherent_alpha(&hom).is_err());
        assert!(expected_thermal_mu(&hom).is_err());
    }

    #[test]
    fn cat_self_overlap() {
        let alpha = C64::from_polar(1.3, 0.4);
        let rho = make_state(&StateSpec::Cat { alpha, parity: Parity::Even }, 10).unwrap();
        let fit = nearest_cat(&rho, Parity::Even, DEFAULT_ALPHA_MAX);
        assert!((fit.alpha.norm() - 1.3).abs() < 1e-3, "{}", fit.alpha);
        assert!((fit.fidelity - 1.0).abs() < 1e-6);
        let d = (fit.alpha - alpha).norm().min((fit.alpha + alpha).norm());
        assert!(d < 1e-3);
    }

    #[test]
    fn flat_landscape_for_mixed_state() {
        let rho = DensityMatrix::maximally_mixed(11);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..RADII {
            for j in 0..ANGLES {
                let a = C64::from_polar((i as f64 + 0.5) * DEFAULT_ALPHA_MAX / RADII as f64, TAU * j as f64 / ANGLES as f64);
                let f = cat_overlap(&rho, a, Parity::Even);
                lo = lo.min(f);
                hi = hi.max(f);
            }
        }
        assert!(hi - lo < 0.05, "{}", hi - lo);
    }

    #[test]
    fn identical_samples_have_zero_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_prior(&mut rng, 4).unwrap();
        let ens = PosteriorEnsemble::from_params(vec![p.clone(), p.clone(), p]).unwrap();
        let fit = cat_report(&ens, Parity::Odd, DEFAULT_ALPHA_MAX).unwrap();
        assert_eq!(fit.alpha_abs.lower, fit.alpha_abs.upper);
        assert_eq!(fit.fidelity.lower, fit.fidelity.upper);
        assert_eq!(fit.samples.len(), 3);
    }

    #[test]
    fn curve_rows_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens: Vec<PosteriorEnsemble> = (0..2)
            .map(|_| PosteriorEnsemble::from_params((0..4).map(|_| sample_prior(&mut rng, 3).unwrap()).collect()).unwrap())
            .collect();
        let truth = DensityMatrix::vacuum(3);
        let rows = fidelity_curve(&[(400, &ens[0]), (1, &ens[1])], &truth).unwrap();
        assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 400]);
        let mut buf = Vec::new();
        write_curve_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("K,fid_mean,fid_std\n"));
    }

    #[test]
    fn estimate_display() {
        let e = Estimate::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!(e.plus() > 0.0 && e.minus() < 0.0);
        assert_eq!(wrap_angle(3.0 * PI), PI);
    }
}
