//! Outcome densities for homodyne and heterodyne detection and the dataset
//! log-likelihood.
//!
//! Both densities are quadratic forms `f = v^dag rho~ v` in a per-outcome
//! vector `v`:
//!
//! * homodyne: `v_n = e^{i n theta} h_n(x)` with `h_n` the orthonormal Hermite
//!   functions;
//! * heterodyne: `v_n = e^{i n theta} (x + i p)^n e^{-(x^2+p^2)/2} / sqrt(pi n!)`.
//!
//! [`homodyne_pdf`], [`heterodyne_pdf`] and [`log_likelihood`] evaluate the
//! sums directly. [`LikelihoodModel`] precomputes per-record features for
//! the sampler's inner loop.

mod dataset;
mod model;

pub use dataset::{DatasetMetadata, QuadratureDataset, QuadratureRecord, Scheme};
pub use model::{hermitian_coords, LikelihoodModel};
pub use crate::special::hermite_weighted;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{apply_loss, DensityMatrix, LossyDensityMatrix, C64};
use crate::par::{self, Execution};
use crate::special::hermite_functions;

/// Imaginary residue or negativity tolerated (and discarded) in a density.
pub const DENSITY_TOL: f64 = 1e-9;
/// Floor applied to positive densities before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Inference-side measurement model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// Transmissivity absorbed into the model, in `(0, 1]`.
    pub eta: f64,
    /// Photon-number cutoff `n_c`.
    pub cutoff: usize,
}

impl MeasurementConfig {
    pub fn new(eta: f64, cutoff: usize) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("eta={eta} outside (0, 1]")));
        }
        Ok(Self { eta, cutoff })
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }
}

/// Outcome vector `v` for a homodyne record.
pub(crate) fn homodyne_vector(x: f64, theta: f64, dim: usize) -> Vec<C64> {
    hermite_functions(dim - 1, x)
        .into_iter()
        .enumerate()
        .map(|(n, h)| C64::from_polar(h, n as f64 * theta))
        .collect()
}

/// Outcome vector `v` for a heterodyne record.
pub(crate) fn heterodyne_vector(x: f64, p: f64, theta: f64, dim: usize) -> Vec<C64> {
    let z = C64::new(x, p);
    let rot = C64::from_polar(1.0, theta);
    let mut g = C64::new((-0.5 * z.norm_sqr()).exp() / std::f64::consts::PI.sqrt(), 0.0);
    let mut out = Vec::with_capacity(dim);
    for n in 0..dim {
        if n > 0 {
            g = g * z * rot / (n as f64).sqrt();
        }
        out.push(g);
    }
    out
}

fn quadratic_form(v: &[C64], rho: &DensityMatrix) -> Result<f64> {
    let d = rho.dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: v.len() });
    }
    let m = rho.matrix();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..d {
            row += m[(i, j)] * v[j];
        }
        acc += v[i].conj() * row;
    }
    if acc.im.abs() > DENSITY_TOL || acc.re < -DENSITY_TOL || !acc.re.is_finite() {
        return Err(Error::InvalidDensity(format!("outcome density {acc}")));
    }
    Ok(acc.re.max(0.0))
}

/// Homodyne density `f1(x | theta)`.
pub fn homodyne_pdf(x: f64, theta: f64, rho_tilde: &LossyDensityMatrix) -> Result<f64> {
    quadratic_form(&homodyne_vector(x, theta, rho_tilde.dim()), rho_tilde)
}

/// Heterodyne density `f2(x, p | theta)`; the Husimi Q function at `e^{i theta}(x + i p)`.
pub fn heterodyne_pdf(x: f64, p: f64, theta: f64, rho_tilde: &LossyDensityMatrix) -> Result<f64> {
    quadratic_form(&heterodyne_vector(x, p, theta, rho_tilde.dim()), rho_tilde)
}

fn record_density(r: &QuadratureRecord, rho_tilde: &LossyDensityMatrix) -> Result<f64> {
    match r.p {
        None => homodyne_pdf(r.x, r.theta, rho_tilde),
        Some(p) => heterodyne_pdf(r.x, p, r.theta, rho_tilde),
    }
}

/// `ln` of a record density with the zero sentinel and underflow floor.
pub(crate) fn ln_density(f: f64) -> f64 {
    if f == 0.0 {
        f64::NEG_INFINITY
    } else {
        f.max(DENSITY_FLOOR).ln()
    }
}

/// Dataset log-likelihood `sum_k ln f(record_k | L_eta(rho))`.
///
/// Returns `-inf` if any record has exactly zero density.
pub fn log_likelihood(data: &QuadratureDataset, rho: &DensityMatrix, cfg: &MeasurementConfig) -> Result<f64> {
    log_likelihood_with(data, rho, cfg, Execution::default())
}

pub fn log_likelihood_with(
    data: &QuadratureDataset,
    rho: &DensityMatrix,
    cfg: &MeasurementConfig,
    exec: Execution,
) -> Result<f64> {
    if rho.dim() != cfg.dim() {
        return Err(Error::DimensionMismatch { expected: cfg.dim(), found: rho.dim() });
    }
    let lossy = apply_loss(rho, cfg.eta)?;
    let recs = data.records();
    let chunks = recs.len().div_ceil(par::CHUNK);
    let partial = par::map_indexed(exec, chunks, |c| -> Result<f64> {
        let start = c * par::CHUNK;
        let end = (start + par::CHUNK).min(recs.len());
        let mut s = 0.0;
        for r in &recs[start..end] {
            s += ln_density(record_density(r, &lossy)?);
        }
        Ok(s)
    });
    let partial = partial.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(par::tree_sum(&partial))
}
