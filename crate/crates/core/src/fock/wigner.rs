use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{DensityMatrix, C64};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::special::{laguerre_sequence, ln_factorial, SignedLn};

/// Imaginary residue above which the input is treated as non-Hermitian.
const IMAG_RESIDUE_ERROR: f64 = 1e-6;

/// Uniform phase-space grid, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub n_p: usize,
}

impl GridSpec {
    /// Square grid on `[-half, half]^2` with the given spacing.
    pub fn square(half: f64, spacing: f64) -> Self {
        let n = (2.0 * half / spacing).round() as usize + 1;
        Self { x_min: -half, x_max: half, n_x: n, p_min: -half, p_max: half, n_p: n }
    }

    fn check(&self) -> Result<()> {
        let ok = self.n_x >= 2
            && self.n_p >= 2
            && self.x_max > self.x_min
            && self.p_max > self.p_min
            && [self.x_min, self.x_max, self.p_min, self.p_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Wigner grid {self:?}")))
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_p - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }
}

/// Sampled Wigner function, `values[i * n_p + j] = W(x_i, p_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_p + j]
    }

    /// Riemann sum `sum W dx dp`.
    pub fn integral(&self) -> f64 {
        par::tree_sum(&self.values) * self.grid.dx() * self.grid.dp()
    }

    /// Writes `x,p,w` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "p", "w"])?;
        for i in 0..self.grid.n_x {
            for j in 0..self.grid.n_p {
                w.write_record(&[
                    self.grid.x(i).to_string(),
                    self.grid.p(j).to_string(),
                    self.at(i, j).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `W(x, p)` of a raw matrix, hbar = 1.
///
/// For `m >= n`, `k = m - n`, the `|m><n|` kernel is
/// `(-1)^n / pi * sqrt(n!/m!) * (sqrt2 (x - i p))^k * e^{-r^2} * L_n^k(2 r^2)`
/// and the `|n><m|` kernel is its conjugate. Magnitudes are assembled in logs.
pub fn wigner_of_matrix(rho: &DMatrix<C64>, x: f64, p: f64) -> Result<f64> {
    let d = rho.nrows();
    let r2 = x * x + p * p;
    let y = 2.0 * r2;
    let ln_sqrt2r = if r2 > 0.0 { 0.5 * (2.0 * r2).ln() } else { f64::NEG_INFINITY };
    let unit = if r2 > 0.0 { C64::new(x, -p) / r2.sqrt() } else { C64::new(1.0, 0.0) };
    let ln_pi = std::f64::consts::PI.ln();

    let mut acc = C64::new(0.0, 0.0);
    let mut phase = C64::new(1.0, 0.0);
    for k in 0..d {
        if k > 0 {
            phase *= unit;
            if r2 == 0.0 {
                break;
            }
        }
        let lag = laguerre_sequence(d - 1 - k, k as f64, y);
        for n in 0..d - k {
            let m = n + k;
            let l = SignedLn::from_value(lag[n]);
            if l.sign == 0.0 {
                continue;
            }
            let radial = if k == 0 { 0.0 } else { k as f64 * ln_sqrt2r };
            let ln_mag = 0.5 * (ln_factorial(n) - ln_factorial(m)) + radial - r2 - ln_pi + l.ln_abs;
            let sign = if n % 2 == 0 { l.sign } else { -l.sign };
            let kernel = phase * (sign * ln_mag.exp());
            if k == 0 {
                acc += rho[(n, n)] * kernel;
            } else {
                acc += rho[(m, n)] * kernel + rho[(n, m)] * kernel.conj();
            }
        }
    }
    if acc.im.abs() > IMAG_RESIDUE_ERROR {
        return Err(Error::InvalidDensity(format!(
            "Wigner imaginary residue {:e} at ({x}, {p})",
            acc.im.abs()
        )));
    }
    Ok(acc.re)
}

/// `W(x, p)` of a density matrix.
pub fn wigner_point(rho: &DensityMatrix, x: f64, p: f64) -> Result<f64> {
    wigner_of_matrix(rho.matrix(), x, p)
}

/// Wigner function on a grid; points are independent and evaluated in parallel.
pub fn wigner(rho: &DensityMatrix, grid: &GridSpec) -> Result<WignerGrid> {
    wigner_with(rho, grid, Execution::default())
}

pub fn wigner_with(rho: &DensityMatrix, grid: &GridSpec, exec: Execution) -> Result<WignerGrid> {
    grid.check()?;
    let n = grid.n_x * grid.n_p;
    let vals = par::map_indexed(exec, n, |idx| {
        let (i, j) = (idx / grid.n_p, idx % grid.n_p);
        wigner_of_matrix(rho.matrix(), grid.x(i), grid.p(j))
    });
    let values = vals.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(WignerGrid { grid: *grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_state, StateSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn vacuum_and_single_photon_origin() {
        let v = DensityMatrix::vacuum(11);
        assert_relative_eq!(wigner_point(&v, 0.0, 0.0).unwrap(), 1.0 / PI, epsilon = 1e-14);
        let one = make_state(&StateSpec::Fock { n: 1 }, 10).unwrap();
        assert_relative_eq!(wigner_point(&one, 0.0, 0.0).unwrap(), -1.0 / PI, epsilon = 1e-14);
    }

    #[test]
    fn coherent_is_displaced_gaussian() {
        // W = exp(-(x - sqrt2 Re a)^2 - (p - sqrt2 Im a)^2) / pi
        let a = C64::new(0.6, -0.4);
        let rho = make_state(&StateSpec::Coherent { alpha: a }, 30).unwrap();
        for &(x, p) in &[(0.0, 0.0), (0.85, -0.56), (1.5, 0.2), (-0.7, -1.1)] {
            let expect = (-(x - 2f64.sqrt() * a.re).powi(2) - (p - 2f64.sqrt() * a.im).powi(2)).exp() / PI;
            assert_relative_eq!(wigner_point(&rho, x, p).unwrap(), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = DMatrix::<C64>::zeros(2, 2);
        m[(0, 0)] = C64::new(0.5, 0.0);
        m[(1, 1)] = C64::new(0.5, 0.0);
        m[(1, 0)] = C64::new(0.0, 0.3);
        m[(0, 1)] = C64::new(0.0, 0.3);
        assert!(wigner_of_matrix(&m, 0.4, 0.2).is_err());
    }

    #[test]
    fn csv_header() {
        let g = GridSpec::square(1.0, 0.5);
        let w = wigner(&DensityMatrix::vacuum(2), &g).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,p,w\n"));
        assert_eq!(s.lines().count(), 1 + 25);
    }
}
