use nalgebra::DMatrix;

use super::{heterodyne_vector, homodyne_vector, MeasurementConfig, QuadratureDataset, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::fock::{adjoint_loss, DensityMatrix, C64};
use crate::par::{self, Execution};
use crate::special::{bernoulli_table, LogProduct};

/// Real coordinates of a Hermitian matrix: the diagonal, then `(Re, Im)` of
/// each upper-triangle element in row-major order. `dim^2` values.
pub fn hermitian_coords(m: &DMatrix<C64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    hermitian_coords_into(m, &mut out);
    out
}

pub(crate) fn hermitian_coords_into(m: &DMatrix<C64>, out: &mut Vec<f64>) {
    let d = m.nrows();
    out.clear();
    for i in 0..d {
        out.push(m[(i, i)].re);
    }
    for i in 0..d {
        for j in i + 1..d {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
}

/// Feature row such that `Tr(rho E) = features . hermitian_coords(rho)`.
fn effect_features(e: &DMatrix<C64>) -> Vec<f64> {
    let d = e.nrows();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        out.push(e[(i, i)].re);
    }
    for i in 0..d {
        for j in i + 1..d {
            out.push(2.0 * e[(i, j)].re);
            out.push(2.0 * e[(i, j)].im);
        }
    }
    out
}

/// Precomputed per-record features for fast likelihood evaluation.
///
/// Each record's effect `E_k = v_k v_k^dag` is pulled back through the loss
/// channel once, so a likelihood evaluation is `K` dot products of length
/// `dim^2` against the coordinates of `rho` (no loss map per call).
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    dim: usize,
    width: usize,
    n_records: usize,
    features: Vec<f64>,
    exec: Execution,
}

impl LikelihoodModel {
    pub fn new(data: &QuadratureDataset, cfg: &MeasurementConfig) -> Result<Self> {
        let dim = cfg.dim();
        let width = dim * dim;
        let table = (cfg.eta < 1.0).then(|| bernoulli_table(dim, cfg.eta));
        let rows = par::map_indexed(Execution::default(), data.len(), |k| {
            let r = &data.records()[k];
            let v = match r.p {
                None => homodyne_vector(r.x, r.theta, dim),
                Some(p) => heterodyne_vector(r.x, p, r.theta, dim),
            };
            let e = DMatrix::from_fn(dim, dim, |i, j| v[i] * v[j].conj());
            let e = match &table {
                Some(b) => adjoint_loss(&e, b),
                None => e,
            };
            effect_features(&e)
        });
        let mut features = Vec::with_capacity(width * data.len());
        for row in rows {
            features.extend_from_slice(&row);
        }
        Ok(Self { dim, width, n_records: data.len(), features, exec: Execution::default() })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n_records
    }

    pub fn is_empty(&self) -> bool {
        self.n_records == 0
    }

    /// Per-record densities `f_k` (unclamped).
    pub fn densities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let c = self.coords(rho)?;
        Ok(self.features.chunks_exact(self.width).map(|row| dot(row, &c)).collect())
    }

    fn coords(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho.dim() });
        }
        Ok(hermitian_coords(rho.matrix()))
    }

    /// Log-likelihood of the state (before loss).
    pub fn log_likelihood(&self, rho: &DensityMatrix) -> Result<f64> {
        let c = self.coords(rho)?;
        Ok(self.log_likelihood_coords(&c))
    }

    /// Log-likelihood from precomputed [`hermitian_coords`]; `-inf` if any
    /// record density is non-positive.
    pub fn log_likelihood_coords(&self, coords: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), self.width);
        par::chunked_sum(self.exec, self.n_records, |start, end| {
            let rows = &self.features[start * self.width..end * self.width];
            leaf_ln_sum(rows, coords, self.width)
        })
    }
}

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
fn leaf_body(rows: &[f64], c: &[f64], width: usize) -> f64 {
    let mut lp = LogProduct::default();
    for row in rows.chunks_exact(width) {
        let f = dot_body(row, c);
        if !(f > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp.push(f.max(DENSITY_FLOOR));
    }
    lp.ln()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn leaf_avx2(rows: &[f64], c: &[f64], width: usize) -> f64 {
    leaf_body(rows, c, width)
}

// Same operation order on every path: no FMA contraction, identical lane layout.
fn leaf_ln_sum(rows: &[f64], c: &[f64], width: usize) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { leaf_avx2(rows, c, width) };
        }
    }
    leaf_body(rows, c, width)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot_body(a, b)
}
