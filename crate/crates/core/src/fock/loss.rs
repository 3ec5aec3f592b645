use nalgebra::DMatrix;

use super::{DensityMatrix, LossyDensityMatrix, C64};
use crate::error::{Error, Result};
use crate::special::bernoulli_table;

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("eta={eta} outside [0, 1]")));
    }
    Ok(())
}

/// Loss channel on a raw matrix given a precomputed Bernoulli table
/// (`b[j][i] = B_{j,i}(eta)`):
/// `out_mn = sum_k B_{m+k,m} B_{n+k,n} in_{(m+k)(n+k)}`.
pub fn apply_loss_matrix(m: &DMatrix<C64>, b: &[Vec<f64>]) -> DMatrix<C64> {
    let d = m.nrows();
    DMatrix::from_fn(d, d, |r, c| {
        let kmax = (d - 1 - r).min(d - 1 - c);
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=kmax {
            acc += m[(r + k, c + k)] * (b[r + k][r] * b[c + k][c]);
        }
        acc
    })
}

/// Adjoint of the loss channel, acting on measurement effects:
/// `Tr(L(rho) E) = Tr(rho L^dag(E))`.
pub fn adjoint_loss(e: &DMatrix<C64>, b: &[Vec<f64>]) -> DMatrix<C64> {
    let d = e.nrows();
    DMatrix::from_fn(d, d, |p, q| {
        let kmax = p.min(q);
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=kmax {
            acc += e[(p - k, q - k)] * (b[p][p - k] * b[q][q - k]);
        }
        acc
    })
}

/// Applies photon loss with transmissivity `eta`.
pub fn apply_loss(rho: &DensityMatrix, eta: f64) -> Result<LossyDensityMatrix> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Ok(LossyDensityMatrix::new(rho.clone(), 1.0));
    }
    let b = bernoulli_table(rho.dim(), eta);
    let out = apply_loss_matrix(rho.matrix(), &b);
    Ok(LossyDensityMatrix::new(DensityMatrix::from_matrix_unchecked(out), eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_state, StateSpec};
    use approx::assert_relative_eq;

    #[test]
    fn single_photon_loss() {
        let one = DensityMatrix::from_populations(&[0.0, 1.0, 0.0]).unwrap();
        let out = apply_loss(&one, 0.6).unwrap();
        assert_relative_eq!(out.get(1, 1).re, 0.6, epsilon = 1e-15);
        assert_relative_eq!(out.get(0, 0).re, 0.4, epsilon = 1e-15);
        assert_eq!(out.get(2, 2).re, 0.0);
        assert_eq!(out.eta(), 0.6);
    }

    #[test]
    fn unit_eta_identity_and_zero_eta_vacuum() {
        let rho = make_state(&StateSpec::Coherent { alpha: C64::new(0.8, -0.3) }, 8).unwrap();
        assert_eq!(apply_loss(&rho, 1.0).unwrap().state(), &rho);
        let vac = apply_loss(&rho, 0.0).unwrap();
        assert!(vac.max_abs_diff(&DensityMatrix::vacuum(9)) < 1e-14);
    }

    #[test]
    fn rejects_eta_out_of_range() {
        let rho = DensityMatrix::vacuum(3);
        assert!(apply_loss(&rho, 1.2).is_err());
        assert!(apply_loss(&rho, -0.1).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let rho = make_state(&StateSpec::Coherent { alpha: C64::new(0.5, 0.4) }, 6).unwrap();
        let e = make_state(&StateSpec::Thermal { mu: 0.7 }, 6).unwrap().rotated(0.3);
        let mut e = e.into_matrix();
        e[(1, 3)] = C64::new(0.05, 0.02);
        e[(3, 1)] = C64::new(0.05, -0.02);
        let b = bernoulli_table(7, 0.37);
        let lhs = (apply_loss_matrix(rho.matrix(), &b) * &e).trace();
        let rhs = (rho.matrix() * adjoint_loss(&e, &b)).trace();
        assert_relative_eq!(lhs.re, rhs.re, epsilon = 1e-14);
        assert_relative_eq!(lhs.im, rhs.im, epsilon = 1e-14);
    }
}
