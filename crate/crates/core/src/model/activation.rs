//! Activations together with their Taylor data at an analyticity point.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A pointwise activation `psi`, real analytic at `eta` with radius of
/// convergence `radius` there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Logistic,
    Arctan,
    Gelu,
    /// `sin`, expanded at `eta`. Entire, so every scale is admissible.
    Sine { eta: f64 },
    /// `sum_k coeffs[k] x^k`, expanded at zero.
    Polynomial { coeffs: Vec<f64> },
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Power series of `tanh` at zero from `T' = 1 - T^2`.
fn tanh_series(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n.max(1)];
    for k in 0..n.saturating_sub(1) {
        let conv: f64 = (0..=k).map(|i| t[i] * t[k - i]).sum();
        let rhs = if k == 0 { 1.0 } else { 0.0 } - conv;
        t[k + 1] = rhs / (k + 1) as f64;
    }
    t.truncate(n);
    t
}

/// Power series of the logistic function at zero from `s' = s - s^2`.
fn logistic_series(n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n.max(1)];
    s[0] = 0.5;
    for k in 0..n.saturating_sub(1) {
        let conv: f64 = (0..=k).map(|i| s[i] * s[k - i]).sum();
        s[k + 1] = (s[k] - conv) / (k + 1) as f64;
    }
    s.truncate(n);
    s
}

impl Activation {
    pub fn sine() -> Self {
        Activation::Sine { eta: 0.0 }
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Tanh => "tanh".into(),
            Activation::Logistic => "logistic".into(),
            Activation::Arctan => "arctan".into(),
            Activation::Gelu => "gelu".into(),
            Activation::Sine { eta } if *eta == 0.0 => "sin".into(),
            Activation::Sine { eta } => format!("sin@{eta}"),
            Activation::Polynomial { coeffs } => {
                let c: Vec<String> = coeffs.iter().map(f64::to_string).collect();
                format!("poly:{}", c.join(","))
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-x).exp()),
            Activation::Arctan => x.atan(),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2)),
            Activation::Sine { .. } => x.sin(),
            Activation::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Logistic => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Arctan => 1.0 / (1.0 + x * x),
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
                cdf + x * pdf
            }
            Activation::Sine { .. } => x.cos(),
            Activation::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c),
        }
    }

    /// Expansion point.
    pub fn eta(&self) -> f64 {
        match self {
            Activation::Sine { eta } => *eta,
            _ => 0.0,
        }
    }

    /// Radius of convergence of the Taylor series at [`eta`](Self::eta).
    pub fn radius(&self) -> f64 {
        match self {
            Activation::Tanh => PI / 2.0,
            Activation::Logistic => PI,
            Activation::Arctan => 1.0,
            Activation::Gelu | Activation::Sine { .. } | Activation::Polynomial { .. } => f64::INFINITY,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, Activation::Polynomial { .. })
    }

    /// First `n` Taylor coefficients at `eta`.
    pub fn taylor_coeffs(&self, n: usize) -> Vec<f64> {
        match self {
            Activation::Tanh => tanh_series(n),
            Activation::Logistic => logistic_series(n),
            _ => (0..n).map(|k| self.taylor_coeff(k)).collect(),
        }
    }

    /// Taylor coefficient `c_k` at `eta`. Exact zeros are exact.
    pub fn taylor_coeff(&self, k: usize) -> f64 {
        match self {
            Activation::Tanh => tanh_series(k + 1)[k],
            Activation::Logistic => logistic_series(k + 1)[k],
            Activation::Arctan => {
                if k % 2 == 1 {
                    let n = (k - 1) / 2;
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    sign / k as f64
                } else {
                    0.0
                }
            }
            Activation::Gelu => match k {
                1 => 0.5,
                k if k >= 2 && k % 2 == 0 => {
                    // x * erf(x / sqrt 2) / 2 contributes x^(2n+2)
                    let n = (k - 2) / 2;
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    sign / ((2.0 * PI).sqrt() * 2f64.powi(n as i32) * factorial(n) * (2 * n + 1) as f64)
                }
                _ => 0.0,
            },
            Activation::Sine { eta } => {
                let d = match k % 4 {
                    0 => eta.sin(),
                    1 => eta.cos(),
                    2 => -eta.sin(),
                    _ => -eta.cos(),
                };
                d / factorial(k)
            }
            Activation::Polynomial { coeffs } => coeffs.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Membership of `k` in the index set `K` of nonzero coefficients.
    pub fn is_nonzero_coeff(&self, k: usize) -> bool {
        self.taylor_coeff(k) != 0.0
    }

    /// `K` restricted to `0..limit`.
    pub fn nonzero_indices(&self, limit: usize) -> Vec<usize> {
        self.taylor_coeffs(limit)
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    /// `|K|` when it is finite.
    pub fn support_size(&self) -> Option<usize> {
        match self {
            Activation::Polynomial { coeffs } => Some(coeffs.iter().filter(|&&c| c != 0.0).count()),
            _ => None,
        }
    }

    /// `psi(x) - sum_{k < terms} c_k (x - eta)^k`.
    pub fn taylor_residual(&self, x: f64, terms: usize) -> f64 {
        let h = x - self.eta();
        let series = self
            .taylor_coeffs(terms)
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * h + c);
        self.eval(x) - series
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    /// `tanh`, `logistic`, `arctan`, `gelu`, `sin`, `sin@ETA`, `poly:c0,c1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse(msg);
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            "arctan" | "atan" => Ok(Activation::Arctan),
            "gelu" => Ok(Activation::Gelu),
            "sin" | "sine" => Ok(Activation::sine()),
            _ => {
                if let Some(eta) = s.strip_prefix("sin@") {
                    let eta = eta.parse().map_err(|e| bad(format!("sin@: {e}")))?;
                    Ok(Activation::Sine { eta })
                } else if let Some(cs) = s.strip_prefix("poly:") {
                    let coeffs = cs
                        .split(',')
                        .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("poly: {e}"))))
                        .collect::<Result<Vec<_>>>()?;
                    if coeffs.iter().all(|&c| c == 0.0) {
                        return Err(bad("polynomial activation must be nonzero".into()));
                    }
                    Ok(Activation::Polynomial { coeffs })
                } else {
                    Err(bad(format!("unknown activation `{s}`")))
                }
            }
        }
    }
}
