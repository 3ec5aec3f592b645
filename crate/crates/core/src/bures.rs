//! Bures-distributed density matrices from Gaussian parameters.
//!
//! A parameter vector holds `2 D^2` complex numbers. The first `D^2` fill
//! `G` row by row, the second `D^2` become a Haar unitary `U` through a
//! phase-corrected QR factorization, and
//! `rho = (I + U) G G^dag (I + U^dag) / Tr[...]`.
//! With every entry an independent complex normal, `rho` follows the Bures
//! measure on `D x D` density matrices.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, C64};

const SINGULAR_REL_TOL: f64 = 1e-13;
const DEGENERATE_TRACE: f64 = 1e-14;

/// Point in the `2 D^2`-dimensional complex parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct BuresParams {
    dim: usize,
    z: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for BuresParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsJson {
            dim: self.dim,
            re: self.z.iter().map(|c| c.re).collect(),
            im: self.z.iter().map(|c| c.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BuresParams {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ParamsJson::deserialize(de)?;
        if raw.re.len() != raw.im.len() {
            return Err(D::Error::custom("re/im length mismatch"));
        }
        let z = raw.re.iter().zip(&raw.im).map(|(&r, &i)| C64::new(r, i)).collect();
        BuresParams::new(raw.dim, z).map_err(D::Error::custom)
    }
}

impl BuresParams {
    pub fn new(dim: usize, z: Vec<C64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if z.len() != 2 * dim * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} parameters for dim {dim}, got {}",
                2 * dim * dim,
                z.len()
            )));
        }
        if z.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(Self { dim, z })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[C64] {
        &self.z
    }

    /// Entries forming `G`.
    pub fn g_part(&self) -> &[C64] {
        &self.z[..self.dim * self.dim]
    }

    /// Entries forming the matrix that becomes `U`.
    pub fn u_part(&self) -> &[C64] {
        &self.z[self.dim * self.dim..]
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Preconditioned Crank-Nicolson proposal `sqrt(1 - beta^2) z + beta xi`, `xi` from the prior.
    pub fn pcn_proposal<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Self {
        let keep = (1.0 - beta * beta).sqrt();
        let z = self
            .z
            .iter()
            .map(|c| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                c * keep + C64::new(re, im) * beta
            })
            .collect();
        Self { dim: self.dim, z }
    }
}

/// Draws parameters with independent standard-normal real and imaginary parts,
/// i.e. density `prod_j exp(-|z_j|^2 / 2)`.
pub fn sample_prior<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<BuresParams> {
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let z = (0..2 * dim * dim)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im)
        })
        .collect();
    Ok(BuresParams { dim, z })
}

fn square_from(values: &[C64]) -> Result<DMatrix<C64>> {
    let d = (values.len() as f64).sqrt().round() as usize;
    if d == 0 || d * d != values.len() {
        return Err(Error::InvalidParameter(format!("{} values do not form a square matrix", values.len())));
    }
    Ok(DMatrix::from_row_slice(d, d, values))
}

/// Haar-random unitary from `D^2` complex values (row-major): `Q` of the QR
/// factorization with each column multiplied by the phase of `R`'s diagonal.
pub fn haar_unitary(z_half: &[C64]) -> Result<DMatrix<C64>> {
    let m = square_from(z_half)?;
    let d = m.nrows();
    let qr = m.qr();
    let r = qr.r();
    let scale = (0..d).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        let mag = rjj.norm();
        if !(mag > SINGULAR_REL_TOL * scale) || mag == 0.0 {
            return Err(Error::SingularMatrix);
        }
        let phase = rjj / mag;
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// Density matrix `(I + U) G G^dag (I + U^dag)` normalized to unit trace.
pub fn build_density(params: &BuresParams) -> Result<DensityMatrix> {
    let d = params.dim;
    let g = DMatrix::from_row_slice(d, d, params.g_part());
    let mut i_plus_u = haar_unitary(params.u_part())?;
    for i in 0..d {
        i_plus_u[(i, i)] += C64::new(1.0, 0.0);
    }
    let a = i_plus_u * g;
    let tr: f64 = a.iter().map(|c| c.norm_sqr()).sum();
    if !(tr >= DEGENERATE_TRACE) {
        return Err(Error::DegenerateConstruction(tr));
    }
    let rho = (&a * a.adjoint()) / C64::new(tr, 0.0);
    Ok(DensityMatrix::from_matrix_unchecked(rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_prior(&mut rng, 1).unwrap().values().len(), 2);
        assert_eq!(sample_prior(&mut rng, 3).unwrap().values().len(), 18);
        assert!(BuresParams::new(2, vec![C64::new(0.0, 0.0); 7]).is_err());
        assert!(sample_prior(&mut rng, 0).is_err());
    }

    #[test]
    fn one_by_one_unitary_is_phase() {
        let phi = 2.1;
        let u = haar_unitary(&[C64::from_polar(0.7, phi)]).unwrap();
        let expect = C64::from_polar(1.0, phi);
        assert!((u[(0, 0)] - expect).norm() < 1e-15);
    }

    #[test]
    fn singular_input_rejected() {
        assert!(matches!(haar_unitary(&[C64::new(0.0, 0.0); 4]), Err(Error::SingularMatrix)));
        let rank_one = [C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(2.0, 0.0), C64::new(4.0, 0.0)];
        assert!(matches!(haar_unitary(&rank_one), Err(Error::SingularMatrix)));
    }

    #[test]
    fn unitarity_and_density_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in [1, 2, 5, 11] {
            let p = sample_prior(&mut rng, d).unwrap();
            let u = haar_unitary(p.u_part()).unwrap();
            let dev = (u.adjoint() * &u - DMatrix::<C64>::identity(d, d))
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
            assert!(dev <= 1e-12, "{dev}");
            let rho = build_density(&p).unwrap();
            assert!((rho.trace() - 1.0).abs() <= 1e-12);
            assert!(rho.min_eigenvalue() >= -1e-12);
        }
    }

    #[test]
    fn degenerate_when_g_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_prior(&mut rng, 2).unwrap();
        let mut z = p.values().to_vec();
        for c in z.iter_mut().take(4) {
            *c = C64::new(0.0, 0.0);
        }
        let p = BuresParams::new(2, z).unwrap();
        assert!(matches!(build_density(&p), Err(Error::DegenerateConstruction(_))));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sample_prior(&mut rng, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: BuresParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
