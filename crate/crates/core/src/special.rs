//! Special functions used by the Fock-basis formulas.
//!
//! Factorials and binomials are only ever handled as logarithms; Hermite and
//! Laguerre values come from three-term recurrences.

use std::f64::consts::PI;
use std::sync::OnceLock;

const LN_FACT_TABLE: usize = 512;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACT_TABLE);
        let mut acc = 0.0f64;
        t.push(0.0);
        for k in 1..LN_FACT_TABLE {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// `ln(n!)`.
pub fn ln_factorial(n: usize) -> f64 {
    let t = ln_fact_table();
    if n < t.len() {
        t[n]
    } else {
        // Stirling with two correction terms; only reached far past any cutoff in use.
        let x = n as f64;
        x * x.ln() - x + 0.5 * (2.0 * PI * x).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
    }
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Bernoulli loss amplitude `sqrt(C(j + jp, j) eta^j (1 - eta)^jp)`.
pub fn bernoulli_amplitude(j: usize, jp: usize, eta: f64) -> f64 {
    // 0^0 = 1 at the endpoints.
    let ln_eta_term = if j == 0 { 0.0 } else { j as f64 * eta.ln() };
    let ln_loss_term = if jp == 0 {
        0.0
    } else {
        jp as f64 * (1.0 - eta).ln()
    };
    let ln = ln_binomial(j + jp, j) + ln_eta_term + ln_loss_term;
    if ln == f64::NEG_INFINITY {
        0.0
    } else {
        (0.5 * ln).exp()
    }
}

/// Table `b[j][i] = B_{j,i}(eta)` for `0 <= i <= j < dim`, zero above the diagonal.
pub fn bernoulli_table(dim: usize, eta: f64) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|j| {
            (0..dim)
                .map(|i| if i <= j { bernoulli_amplitude(i, j - i, eta) } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Orthonormal Hermite functions `h_0(x) ..= h_{n_max}(x)`,
/// `h_n(x) = H_n(x) exp(-x^2/2) / sqrt(2^n n! sqrt(pi))`.
pub fn hermite_functions(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    hermite_functions_into(x, n_max + 1, &mut out);
    out
}

/// Fills `out` with the first `len` Hermite functions at `x`.
pub fn hermite_functions_into(x: f64, len: usize, out: &mut Vec<f64>) {
    out.clear();
    if len == 0 {
        return;
    }
    let h0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(h0);
    if len == 1 {
        return;
    }
    out.push(std::f64::consts::SQRT_2 * x * h0);
    for n in 1..len - 1 {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
}

/// Single orthonormal Hermite function `h_n(x)`.
pub fn hermite_weighted(n: usize, x: f64) -> f64 {
    hermite_functions(n, x)[n]
}

/// Generalized Laguerre polynomials `L_0^alpha(y) ..= L_{n_max}^alpha(y)`.
pub fn laguerre_sequence(n_max: usize, alpha: f64, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    if n_max == 0 {
        return out;
    }
    out.push(1.0 + alpha - y);
    for k in 1..n_max {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - y) * out[k] - (kf + alpha) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// A real number held as `sign * exp(ln_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLn {
    pub ln_abs: f64,
    pub sign: f64,
}

impl SignedLn {
    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Self { ln_abs: f64::NEG_INFINITY, sign: 0.0 }
        } else {
            Self { ln_abs: v.abs().ln(), sign: v.signum() }
        }
    }

    pub fn value(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }
}

/// Splits `f = mantissa * 2^exponent` with mantissa in `[1, 2)`; `f` must be positive and normal.
#[inline(always)]
fn split_exponent(f: f64) -> (f64, i64) {
    const MANT_MASK: u64 = (1u64 << 52) - 1;
    const ONE_EXP: u64 = 1023u64 << 52;
    let bits = f.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i64 - 1023;
    (f64::from_bits((bits & MANT_MASK) | ONE_EXP), e)
}

/// Accumulates `sum(ln f_i)` by multiplying mantissas and adding exponents,
/// taking a single logarithm at the end.
#[derive(Debug, Clone, Copy)]
pub struct LogProduct {
    mantissa: f64,
    exponent: i64,
    pending: u32,
}

impl Default for LogProduct {
    fn default() -> Self {
        Self { mantissa: 1.0, exponent: 0, pending: 0 }
    }
}

impl LogProduct {
    /// `f` must be positive and normal.
    #[inline(always)]
    pub fn push(&mut self, f: f64) {
        let (m, e) = split_exponent(f);
        self.mantissa *= m;
        self.exponent += e;
        self.pending += 1;
        // mantissa < 2^pending; renormalize well before overflow.
        if self.pending == 512 {
            self.renormalize();
        }
    }

    fn renormalize(&mut self) {
        let (m, e) = split_exponent(self.mantissa);
        self.mantissa = m;
        self.exponent += e;
        self.pending = 0;
    }

    pub fn ln(mut self) -> f64 {
        self.renormalize();
        self.mantissa.ln() + self.exponent as f64 * std::f64::consts::LN_2
    }
}
