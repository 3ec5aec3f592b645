use serde::{Deserialize, Serialize};

use super::{DensityMatrix, C64};
use crate::error::{Error, Result};
use crate::special::ln_factorial;

/// Cat-state parity: even `|a> + |-a>`, odd `|a> - |-a>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl std::str::FromStr for Parity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" | "+" => Ok(Parity::Even),
            "odd" | "-" => Ok(Parity::Odd),
            other => Err(Error::InvalidParameter(format!("unknown parity {other:?}"))),
        }
    }
}

/// Reference states used as ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    Coherent { alpha: C64 },
    Thermal { mu: f64 },
    SqueezedVacuum { r: f64 },
    Fock { n: usize },
    Cat { alpha: C64, parity: Parity },
}

impl StateSpec {
    pub fn vacuum() -> Self {
        StateSpec::Coherent { alpha: C64::new(0.0, 0.0) }
    }

    /// Member of the state's family with the given (untruncated) mean photon number.
    /// Coherent amplitudes are real; Fock states round to the nearest integer.
    pub fn with_mean_photon(family: &str, mean: f64) -> Result<Self> {
        if !(mean >= 0.0) {
            return Err(Error::InvalidParameter(format!("mean photon number {mean} < 0")));
        }
        Ok(match family {
            "coherent" => StateSpec::Coherent { alpha: C64::new(mean.sqrt(), 0.0) },
            "thermal" => StateSpec::Thermal { mu: mean },
            "squeezed" | "squeezed_vacuum" => StateSpec::SqueezedVacuum { r: mean.sqrt().asinh() },
            "fock" => StateSpec::Fock { n: mean.round() as usize },
            other => return Err(Error::InvalidParameter(format!("unknown state family {other:?}"))),
        })
    }

    /// Short label for tables.
    pub fn family(&self) -> &'static str {
        match self {
            StateSpec::Coherent { .. } => "coherent",
            StateSpec::Thermal { .. } => "thermal",
            StateSpec::SqueezedVacuum { .. } => "squeezed",
            StateSpec::Fock { .. } => "fock",
            StateSpec::Cat { .. } => "cat",
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            StateSpec::Coherent { alpha } | StateSpec::Cat { alpha, .. } => {
                if !alpha.re.is_finite() || !alpha.im.is_finite() {
                    return Err(Error::InvalidParameter("non-finite amplitude".into()));
                }
            }
            StateSpec::Thermal { mu } => {
                if !(*mu >= 0.0) || !mu.is_finite() {
                    return Err(Error::InvalidParameter(format!("thermal mu={mu} must be >= 0")));
                }
            }
            StateSpec::SqueezedVacuum { r } => {
                if !r.is_finite() {
                    return Err(Error::InvalidParameter("non-finite squeezing".into()));
                }
            }
            StateSpec::Fock { .. } => {}
        }
        Ok(())
    }
}

/// Truncated coherent-state amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)`, not renormalized.
pub fn coherent_ket(alpha: C64, dim: usize) -> Vec<C64> {
    let mut ket = Vec::with_capacity(dim);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..dim {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        ket.push(c);
    }
    ket
}

fn squeezed_ket(r: f64, dim: usize) -> Vec<C64> {
    let t = r.tanh();
    let ln_pref = -0.5 * r.cosh().ln();
    let mut ket = vec![C64::new(0.0, 0.0); dim];
    for (k, slot) in ket.iter_mut().enumerate().step_by(2) {
        let n = k / 2;
        if n == 0 {
            *slot = C64::new(ln_pref.exp(), 0.0);
            continue;
        }
        if t == 0.0 {
            continue;
        }
        // sqrt((2n)!) / (2^n n!) * tanh^n r
        let ln_mag = ln_pref + 0.5 * ln_factorial(2 * n) - n as f64 * std::f64::consts::LN_2
            - ln_factorial(n)
            + n as f64 * t.abs().ln();
        let sign = if t < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 };
        *slot = C64::new(sign * ln_mag.exp(), 0.0);
    }
    ket
}

fn cat_ket(alpha: C64, parity: Parity, dim: usize) -> Vec<C64> {
    coherent_ket(alpha, dim)
        .into_iter()
        .enumerate()
        .map(|(n, c)| {
            let keep = match parity {
                Parity::Even => n % 2 == 0,
                Parity::Odd => n % 2 == 1,
            };
            if keep {
                c * 2.0
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Normalized truncated ket of a pure spec; `None` for mixed specs.
pub(crate) fn pure_ket(spec: &StateSpec, cutoff: usize) -> Result<Option<Vec<C64>>> {
    let dim = cutoff + 1;
    let raw = match *spec {
        StateSpec::Coherent { alpha } => coherent_ket(alpha, dim),
        StateSpec::SqueezedVacuum { r } => squeezed_ket(r, dim),
        StateSpec::Cat { alpha, parity } => cat_ket(alpha, parity, dim),
        StateSpec::Fock { n } => {
            if n > cutoff {
                return Err(Error::InvalidParameter(format!("Fock n={n} exceeds cutoff {cutoff}")));
            }
            let mut k = vec![C64::new(0.0, 0.0); dim];
            k[n] = C64::new(1.0, 0.0);
            k
        }
        StateSpec::Thermal { .. } => return Ok(None),
    };
    let norm_sq: f64 = raw.iter().map(|c| c.norm_sqr()).sum();
    if !(norm_sq > 1e-28) {
        return Err(Error::DegenerateState(format!(
            "{} state has zero norm after truncation at n_c={cutoff}",
            spec.family()
        )));
    }
    let norm = norm_sq.sqrt();
    Ok(Some(raw.into_iter().map(|c| c / norm).collect()))
}

/// Builds the spec's state on `|0>..|cutoff>`, renormalized to unit trace.
pub fn make_state(spec: &StateSpec, cutoff: usize) -> Result<DensityMatrix> {
    spec.check()?;
    if let Some(ket) = pure_ket(spec, cutoff)? {
        return DensityMatrix::from_ket(&ket);
    }
    match *spec {
        StateSpec::Thermal { mu } => {
            // mu^n / (1+mu)^{n+1}, in logs so mu = 0 and large n stay finite.
            let pops: Vec<f64> = (0..=cutoff)
                .map(|n| {
                    if n == 0 {
                        1.0 / (1.0 + mu)
                    } else if mu == 0.0 {
                        0.0
                    } else {
                        (n as f64 * mu.ln() - (n as f64 + 1.0) * (1.0 + mu).ln()).exp()
                    }
                })
                .collect();
            DensityMatrix::from_populations(&pops)
        }
        _ => unreachable!("pure specs handled above"),
    }
}

/// Probability mass of the spec's state above photon number `cutoff`,
/// using a much larger internal cutoff as a stand-in for the infinite space.
pub fn truncation_error(spec: &StateSpec, cutoff: usize) -> Result<f64> {
    if let StateSpec::Fock { n } = *spec {
        return Ok(if n <= cutoff { 0.0 } else { 1.0 });
    }
    let big = (4 * cutoff).max(cutoff + 40);
    let rho = make_state(spec, big)?;
    let kept: f64 = rho.populations()[..=cutoff].iter().sum();
    Ok((1.0 - kept).clamp(0.0, 1.0))
}
