//! Parameter counting and the capacity bounds built from it.

use serde::Serialize;

use super::params::Dims;
use crate::{Error, Result};

/// Which arrays a parameter count includes.
///
/// The general layout counts the matrices of the model with `positional`
/// learned position columns. The experiment layout matches the trained
/// reference implementation: fixed sinusoidal positions (no positional
/// parameters), a bias on every attention projection and on `W0`, and a
/// bias on the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    pub positional: usize,
    pub attention_bias: bool,
    pub output_bias: bool,
}

impl ParamLayout {
    pub fn general(t: usize) -> Self {
        ParamLayout { positional: t, attention_bias: false, output_bias: false }
    }

    pub fn experiment() -> Self {
        ParamLayout { positional: 0, attention_bias: true, output_bias: true }
    }

    /// Embedding width, head count and head widths of the trained model.
    pub fn experiment_dims(omega: usize, m: usize) -> Dims {
        Dims { d: 16, heads: 1, d0: 16, dr: 16, m, omega, t_max: 10 }
    }

    /// Name and size of every counted array.
    pub fn arrays(&self, dims: &Dims) -> Vec<(String, usize)> {
        let Dims { d, heads, d0, dr, m, omega, .. } = *dims;
        let mut out = vec![("Z".to_string(), d * omega)];
        if self.positional > 0 {
            out.push(("U".into(), d * self.positional));
        }
        for r in 0..heads {
            out.push((format!("W1[{r}]"), d * dr));
            out.push((format!("W2[{r}]"), d * dr));
            out.push((format!("W3[{r}]"), d * d0));
            if self.attention_bias {
                out.push((format!("b1[{r}]"), dr));
                out.push((format!("b2[{r}]"), dr));
                out.push((format!("b3[{r}]"), d0));
            }
        }
        out.push(("W0".into(), heads * d0 * d));
        if self.attention_bias {
            out.push(("b0".into(), d));
        }
        out.push(("W".into(), d * m));
        out.push(("b".into(), m));
        out.push(("V".into(), m * omega));
        if self.output_bias {
            out.push(("c".into(), omega));
        }
        out
    }

    pub fn count(&self, dims: &Dims) -> usize {
        self.arrays(dims).iter().map(|(_, n)| n).sum()
    }
}

/// `omega m + m (d + 1) + 2 m0 (d0 + dr) d + (omega + t) d`.
pub fn param_count(dims: &Dims, t: usize) -> usize {
    let Dims { d, heads, d0, dr, m, omega, .. } = *dims;
    omega * m + m * (d + 1) + 2 * heads * (d0 + dr) * d + (omega + t) * d
}

/// Ratio of the parameter-count upper bound to the lower bound `m`.
pub fn bound_ratio(dims: &Dims, t: usize) -> f64 {
    let Dims { d, heads, d0, dr, m, omega, .. } = *dims;
    let (w1, mf) = ((omega - 1) as f64, m as f64);
    1.0 + (d + 2) as f64 / w1 + (2 * heads * (d0 + dr) * d) as f64 / (w1 * mf) + ((omega + t) * d) as f64 / (w1 * mf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityBounds {
    pub k: usize,
    pub omega: usize,
    pub general_upper: f64,
    pub empirical_upper: f64,
    pub lower: usize,
    /// `general_upper / lower`.
    pub ratio: f64,
}

/// Upper bounds on (empirical) capacity from `k` parameters, and the lower
/// bound `m` from the interpolation construction.
pub fn capacity_bounds(k: usize, omega: usize, m: usize) -> Result<CapacityBounds> {
    if omega < 2 {
        return Err(Error::InvalidArgument("omega must be at least 2".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let w1 = (omega - 1) as f64;
    let general_upper = k as f64 / w1;
    Ok(CapacityBounds {
        k,
        omega,
        general_upper,
        empirical_upper: (2.0 + 1.0 / w1) * general_upper + 2.0,
        lower: m,
        ratio: general_upper / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(d: usize, heads: usize, d0: usize, dr: usize, m: usize, omega: usize) -> Dims {
        Dims { d, heads, d0, dr, m, omega, t_max: 1 }
    }

    #[test]
    fn general_formula_small() {
        for omega in 2..7 {
            for m in 1..5 {
                let k = param_count(&dims(1, 1, 1, 1, m, omega), 1);
                assert_eq!(k, omega * m + 2 * m + 2 + omega + 1 + 2);
                assert_eq!(k, ParamLayout::general(1).count(&dims(1, 1, 1, 1, m, omega)));
            }
        }
    }

    #[test]
    fn experiment_example() {
        let k = ParamLayout::experiment().count(&ParamLayout::experiment_dims(182, 4));
        assert_eq!(k, 4978);
    }

    #[test]
    fn doubling_m_doubles_output_term() {
        let a = param_count(&dims(3, 2, 2, 2, 5, 7), 4);
        let b = param_count(&dims(3, 2, 2, 2, 10, 7), 4);
        assert_eq!(b - a, 7 * 5 + 5 * 4);
    }

    #[test]
    fn bounds_examples() {
        let cb = capacity_bounds(100, 5, 10).unwrap();
        assert_eq!(cb.general_upper, 25.0);
        assert_eq!(cb.lower, 10);
        assert!((cb.empirical_upper - (2.25 * 25.0 + 2.0)).abs() < 1e-12);
        assert!(capacity_bounds(100, 1, 10).is_err());
    }

    #[test]
    fn ratio_matches_count() {
        for omega in [2, 5, 40] {
            for m in [1, 3, 64] {
                let dm = dims(1, 1, 1, 1, m, omega);
                let (w1, mf) = ((omega - 1) as f64, m as f64);
                let hand = 1.0 + 3.0 / w1 + 4.0 / (w1 * mf) + (omega + 1) as f64 / (w1 * mf);
                assert!((bound_ratio(&dm, 1) - hand).abs() < 1e-12);
                let cb = capacity_bounds(param_count(&dm, 1), omega, m).unwrap();
                assert!((cb.ratio - hand).abs() < 1e-12);
            }
        }
    }
}
