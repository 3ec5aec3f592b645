//! Density matrices on a truncated Fock space and the state algebra around them.

mod loss;
pub(crate) mod state;
mod wigner;

pub use loss::{adjoint_loss, apply_loss, apply_loss_matrix};
pub use state::{coherent_ket, make_state, truncation_error, Parity, StateSpec};
pub use wigner::{wigner, wigner_of_matrix, wigner_point, wigner_with, GridSpec, WignerGrid};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance on `|Tr rho - 1|`.
pub const TRACE_TOL: f64 = 1e-10;
/// Tolerance on Hermiticity of a raw matrix before it is symmetrized.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues in `[-NEG_EIG_CLAMP, 0)` count as roundoff.
pub const NEG_EIG_CLAMP: f64 = 1e-10;
/// Eigenvalues below `-NEG_EIG_ERROR` are a hard error in square roots.
pub const NEG_EIG_ERROR: f64 = 1e-6;

/// Complex Hermitian, positive semidefinite, unit-trace matrix in the Fock
/// basis `|0>, ..., |n_c>`.
///
/// Storage is exactly Hermitian: every constructor symmetrizes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: DMatrix<C64>,
}

fn hermitize(mut m: DMatrix<C64>) -> DMatrix<C64> {
    let d = m.nrows();
    for i in 0..d {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in i + 1..d {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    m
}

fn hermitian_residue(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

impl DensityMatrix {
    /// Validates and wraps a raw matrix.
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(Error::InvalidDensity(format!(
                "matrix must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let residue = hermitian_residue(&mat);
        if residue > HERMITIAN_TOL {
            return Err(Error::InvalidDensity(format!("not Hermitian (residue {residue:e})")));
        }
        let rho = Self { mat: hermitize(mat) };
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps a matrix known to be a density matrix by construction.
    pub(crate) fn from_matrix_unchecked(mat: DMatrix<C64>) -> Self {
        Self { mat: hermitize(mat) }
    }

    /// `|psi><psi|` of the normalized ket.
    pub fn from_ket(ket: &[C64]) -> Result<Self> {
        let norm_sq: f64 = ket.iter().map(|c| c.norm_sqr()).sum();
        if ket.is_empty() || !(norm_sq > 1e-28) || !norm_sq.is_finite() {
            return Err(Error::DegenerateState("ket has zero norm".into()));
        }
        let d = ket.len();
        let mat = DMatrix::from_fn(d, d, |m, n| ket[m] * ket[n].conj() / norm_sq);
        Ok(Self::from_matrix_unchecked(mat))
    }

    /// Diagonal state with the given (renormalized) populations.
    pub fn from_populations(pops: &[f64]) -> Result<Self> {
        let total: f64 = pops.iter().sum();
        if pops.is_empty() || pops.iter().any(|p| *p < 0.0 || !p.is_finite()) || !(total > 0.0) {
            return Err(Error::DegenerateState("populations must be non-negative with positive sum".into()));
        }
        let d = pops.len();
        let mut mat = DMatrix::zeros(d, d);
        for (i, p) in pops.iter().enumerate() {
            mat[(i, i)] = C64::new(p / total, 0.0);
        }
        Ok(Self { mat })
    }

    /// `I / dim`.
    pub fn maximally_mixed(dim: usize) -> Self {
        let mut mat = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            mat[(i, i)] = C64::new(1.0 / dim as f64, 0.0);
        }
        Self { mat }
    }

    /// `|0><0|` at the given dimension.
    pub fn vacuum(dim: usize) -> Self {
        let mut mat = DMatrix::zeros(dim, dim);
        mat[(0, 0)] = C64::new(1.0, 0.0);
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Photon-number cutoff `n_c = dim - 1`.
    pub fn cutoff(&self) -> usize {
        self.dim() - 1
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.mat[(m, n)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mat[(i, i)].re).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.mat.clone().symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Checks trace and positivity.
    pub fn validate(&self) -> Result<()> {
        if self.mat.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidDensity("non-finite element".into()));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidDensity(format!("trace {tr} differs from 1")));
        }
        let min = self.min_eigenvalue();
        if min < -NEG_EIG_CLAMP {
            return Err(Error::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Phase rotation by the number operator: `rho_mn -> rho_mn e^{i(n-m) delta}`.
    pub fn rotated(&self, delta: f64) -> Self {
        let d = self.dim();
        let mat = DMatrix::from_fn(d, d, |m, n| {
            self.mat[(m, n)] * C64::from_polar(1.0, (n as f64 - m as f64) * delta)
        });
        Self { mat }
    }

    /// Convex combination `sum w_i rho_i` with weights summing to one.
    pub fn mixture(states: &[&DensityMatrix], weights: &[f64]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty mixture".into()))?;
        let d = first.dim();
        let mut mat = DMatrix::<C64>::zeros(d, d);
        for (s, &w) in states.iter().zip(weights) {
            if s.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
            }
            mat += s.matrix() * C64::new(w, 0.0);
        }
        Ok(Self::from_matrix_unchecked(mat))
    }

    /// Maximum elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        self.mat
            .iter()
            .zip(other.mat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixJson {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for m in 0..d {
            for n in 0..d {
                re.push(self.mat[(m, n)].re);
                im.push(self.mat[(m, n)].im);
            }
        }
        DensityMatrixJson { dim: d, re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DensityMatrixJson::deserialize(de)?;
        let d = raw.dim;
        if raw.re.len() != d * d || raw.im.len() != d * d {
            return Err(D::Error::custom("re/im arrays must have dim^2 entries"));
        }
        let mat = DMatrix::from_fn(d, d, |m, n| C64::new(raw.re[m * d + n], raw.im[m * d + n]));
        DensityMatrix::new(mat).map_err(D::Error::custom)
    }
}

/// Density matrix after the loss channel, tagged with the transmissivity used.
#[derive(Debug, Clone, PartialEq)]
pub struct LossyDensityMatrix {
    state: DensityMatrix,
    eta: f64,
}

impl LossyDensityMatrix {
    /// A state taken as already lossy with `eta = 1`.
    pub fn lossless(state: DensityMatrix) -> Self {
        Self { state, eta: 1.0 }
    }

    pub(crate) fn new(state: DensityMatrix, eta: f64) -> Self {
        Self { state, eta }
    }

    pub fn state(&self) -> &DensityMatrix {
        &self.state
    }

    pub fn into_state(self) -> DensityMatrix {
        self.state
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl std::ops::Deref for LossyDensityMatrix {
    type Target = DensityMatrix;
    fn deref(&self) -> &DensityMatrix {
        &self.state
    }
}

/// `<n> = sum_n n rho_nn`.
pub fn mean_photon(rho: &DensityMatrix) -> f64 {
    (0..rho.dim()).map(|n| n as f64 * rho.mat[(n, n)].re).sum()
}

/// Eigenvalues at or below this are indistinguishable from roundoff in the
/// decomposition. Taking their square root would turn `1e-17` noise into
/// `3e-9` errors, so they count as zero.
fn noise_floor(eigenvalues: &[f64]) -> f64 {
    let max = eigenvalues.iter().copied().fold(0.0, f64::max);
    64.0 * f64::EPSILON * eigenvalues.len() as f64 * max
}

/// Square root of a Hermitian PSD matrix via eigendecomposition.
///
/// Negative eigenvalues down to `-NEG_EIG_ERROR` are clamped to zero, as
/// are positive ones below the roundoff floor.
pub fn psd_sqrt(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEG_EIG_ERROR {
        return Err(Error::InvalidDensity(format!("eigenvalue {min:e} below clamp threshold")));
    }
    let d = m.nrows();
    let v = &eig.eigenvectors;
    let floor = noise_floor(eig.eigenvalues.as_slice());
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| if l > floor { l.sqrt() } else { 0.0 }).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        (0..d).map(|k| v[(i, k)] * roots[k] * v[(j, k)].conj()).sum()
    }))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2`, clamped to `[0, 1]`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    FidelityReference::new(a)?.fidelity(b)
}

/// Fidelity against a fixed state, caching its square root.
#[derive(Debug, Clone)]
pub struct FidelityReference {
    sqrt: DMatrix<C64>,
}

impl FidelityReference {
    pub fn new(reference: &DensityMatrix) -> Result<Self> {
        Ok(Self { sqrt: psd_sqrt(reference.matrix())? })
    }

    pub fn dim(&self) -> usize {
        self.sqrt.nrows()
    }

    pub fn fidelity(&self, rho: &DensityMatrix) -> Result<f64> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rho.dim() });
        }
        let inner = hermitize(&self.sqrt * rho.matrix() * &self.sqrt);
        let eig = inner.symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -NEG_EIG_ERROR {
            return Err(Error::InvalidDensity(format!("eigenvalue {min:e} below clamp threshold")));
        }
        let floor = noise_floor(eig.eigenvalues.as_slice());
        let root_sum: f64 = eig.eigenvalues.iter().filter(|&&l| l > floor).map(|l| l.sqrt()).sum();
        Ok((root_sum * root_sum).clamp(0.0, 1.0))
    }
}

/// `<psi| rho |psi>` for a normalized ket; the fidelity against a pure state.
pub fn pure_overlap(ket: &[C64], rho: &DensityMatrix) -> f64 {
    let d = rho.dim();
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..d {
        let mut row = C64::new(0.0, 0.0);
        for n in 0..d {
            row += rho.mat[(m, n)] * ket[n];
        }
        acc += ket[m].conj() * row;
    }
    acc.re
}
