//! Rank, Kruskal rank and injectivity checks on small instances.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::interpolate::separation;
use crate::langspace::sequences_of_len;
use crate::linalg::{numeric_rank, singular_values};
use crate::model::{Activation, Variant};
use crate::rng;
use crate::{Error, Result, Token};

/// Largest column count accepted by [`kruskal_rank`].
pub const KRUSKAL_MAX_COLS: usize = 12;

/// Largest context count accepted by [`injectivity_test`].
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// `psi(a b^T)`.
pub fn feature_matrix(a: &[f64], b: &[f64], act: &Activation) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| act.eval(a[i] * b[j]))
}

/// Largest `k` such that every `k` columns are independent at relative
/// tolerance `tol`, by exhaustive enumeration.
pub fn kruskal_rank(a: &DMatrix<f64>, tol: f64) -> Result<usize> {
    let n = a.ncols();
    if n > KRUSKAL_MAX_COLS {
        return Err(Error::EnumerationBoundExceeded { size: n, limit: KRUSKAL_MAX_COLS });
    }
    let mut best = 0;
    for k in 1..=n.min(a.nrows()) {
        let all = (0u32..1 << n).filter(|s| s.count_ones() as usize == k).all(|s| {
            let cols: Vec<usize> = (0..n).filter(|j| s >> j & 1 == 1).collect();
            numeric_rank(&a.select_columns(&cols), tol) == k
        });
        if !all {
            break;
        }
        best = k;
    }
    Ok(best)
}

pub fn polynomial_rank_oracle(m: usize, n: usize, k: &[usize]) -> usize {
    m.min(n).min(k.len())
}

pub fn analytic_rank_oracle(m: usize, n: usize) -> usize {
    m.min(n)
}

/// How the row nodes `a` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSampler {
    Gaussian,
    /// Random sign times `U(lo, hi)`.
    SignedUniform { lo: f64, hi: f64 },
    /// One uniform draw from each of `m` equal strata of `(lo, hi)`.
    Stratified { lo: f64, hi: f64 },
    /// `Stratified` magnitudes with independent random signs.
    SignedStratified { lo: f64, hi: f64 },
}

impl NodeSampler {
    /// Polynomials: signed strata of `(0.5, 2)`. Analytic `psi`: strata of
    /// `(0.1 R, R)` with `R` just inside `rho / max|b|`, so every
    /// `|a_i b_j| < rho`.
    pub fn default_for(act: &Activation, b: &[f64]) -> Self {
        let rho = act.radius();
        if act.is_polynomial() || !rho.is_finite() {
            return NodeSampler::SignedStratified { lo: 0.5, hi: 2.0 };
        }
        let bmax = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let r = 0.999 * rho / bmax;
        NodeSampler::Stratified { lo: 0.1 * r, hi: r }
    }

    pub fn sample(&self, rng: &mut rng::Rng, m: usize) -> Vec<f64> {
        match *self {
            NodeSampler::Gaussian => rng::gaussian_vec(rng, m),
            NodeSampler::SignedUniform { lo, hi } => (0..m)
                .map(|_| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * rng.random_range(lo..hi)
                })
                .collect(),
            NodeSampler::Stratified { lo, hi } => {
                let h = (hi - lo) / m as f64;
                (0..m).map(|i| lo + h * (i as f64 + rng.random::<f64>())).collect()
            }
            NodeSampler::SignedStratified { lo, hi } => {
                let h = (hi - lo) / m as f64;
                (0..m)
                    .map(|i| {
                        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        s * (lo + h * (i as f64 + rng.random::<f64>()))
                    })
                    .collect()
            }
        }
    }
}

/// One measured feature matrix.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub kruskal: Option<usize>,
    pub predicted: usize,
    pub tol: f64,
    /// `s_rank / s_(rank+1)`; infinite when the rank is full.
    pub sv_gap: f64,
    pub agree: bool,
    pub seed: u64,
}

/// Predicted generic rank of `psi(a b^T)`.
pub fn predicted_rank(act: &Activation, m: usize, n: usize) -> usize {
    match act {
        Activation::Polynomial { .. } => m.min(n).min(act.support_size().unwrap_or(usize::MAX)),
        _ => analytic_rank_oracle(m, n),
    }
}

pub fn measure_rank(a: &[f64], b: &[f64], act: &Activation, tol: f64, seed: u64) -> Result<RankReport> {
    let (m, n) = (a.len(), b.len());
    let fm = feature_matrix(a, b, act);
    let rank = numeric_rank(&fm, tol);
    let kruskal = if n <= KRUSKAL_MAX_COLS { Some(kruskal_rank(&fm, tol)?) } else { None };
    let s = singular_values(&fm);
    let sv_gap = match (rank.checked_sub(1).map(|i| s[i]), s.get(rank)) {
        (Some(hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    };
    let predicted = predicted_rank(act, m, n);
    let agree = rank == predicted && kruskal.is_none_or(|k| k == predicted);
    Ok(RankReport { m, n, rank, kruskal, predicted, tol, sv_gap, agree, seed })
}

#[derive(Debug, Clone, Serialize)]
pub struct RankExperiment {
    pub activation: String,
    pub m: usize,
    pub n: usize,
    pub sampler: NodeSampler,
    pub trials: Vec<RankReport>,
    pub agreement_rate: f64,
}

impl RankExperiment {
    pub const CSV_HEADER: &'static str = "psi,m,n,predicted,measured_rank,measured_kruskal,agree,seed";

    pub fn csv_rows(&self) -> String {
        self.trials
            .iter()
            .map(|r| {
                let k = r.kruskal.map(|k| k.to_string()).unwrap_or_default();
                format!(
                    "{},{},{},{},{},{},{},{}\n",
                    self.activation, r.m, r.n, r.predicted, r.rank, k, r.agree as u8, r.seed
                )
            })
            .collect()
    }
}

/// Samples `a` `trials` times against fixed `b` and compares the measured
/// ranks to the oracle. `b` must have nonzero, pairwise distinct entries.
pub fn rank_experiment(
    act: &Activation,
    m: usize,
    b: &[f64],
    trials: usize,
    seed: u64,
    sampler: Option<NodeSampler>,
    tol: f64,
) -> Result<RankExperiment> {
    let (min_abs, min_gap) = separation(b);
    if b.is_empty() || min_abs == 0.0 || min_gap == 0.0 {
        return Err(Error::DegenerateB);
    }
    let sampler = sampler.unwrap_or_else(|| NodeSampler::default_for(act, b));
    let reports = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::seeded(seed, t as u64);
            let a = sampler.sample(&mut r, m);
            measure_rank(&a, b, act, tol, seed.wrapping_add(t as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let agreement_rate = if trials == 0 {
        1.0
    } else {
        reports.iter().filter(|r| r.agree).count() as f64 / trials as f64
    };
    Ok(RankExperiment { activation: act.name(), m, n: b.len(), sampler, trials: reports, agreement_rate })
}

/// `(1, ..., n) * scale / n`.
pub fn default_b(n: usize, scale: f64) -> Vec<f64> {
    (1..=n).map(|i| scale * i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectivityReport {
    pub omega: usize,
    pub t: usize,
    pub variant: Variant,
    pub contexts: usize,
    pub min_abs: f64,
    pub min_gap: f64,
    /// Contexts with `|f| <= tol`.
    pub zeros: usize,
    /// Adjacent pairs in sorted order with gap `<= tol`.
    pub collisions: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Every nonempty context of length at most `t`, shortest first.
pub fn all_contexts(omega: usize, t: usize) -> Result<Vec<Vec<Token>>> {
    let mut size = 0usize;
    for len in 1..=t {
        size = omega
            .checked_pow(len as u32)
            .and_then(|s| s.checked_add(size))
            .filter(|&s| s <= ENUMERATION_LIMIT)
            .ok_or(Error::EnumerationBoundExceeded { size: usize::MAX, limit: ENUMERATION_LIMIT })?;
    }
    Ok((1..=t).flat_map(|len| sequences_of_len(omega, len)).collect())
}

/// Scalar map values at every nonempty context of length at most `t`.
pub fn scalar_values(variant: Variant, omega: usize, t: usize, z: &[f64], u: &[f64]) -> Result<(Vec<Vec<Token>>, Vec<f64>)> {
    if z.len() != omega || u.len() < t {
        return Err(Error::Shape(format!("need z of length {omega} and u of length >= {t}")));
    }
    let contexts = all_contexts(omega, t)?;
    let f = contexts.iter().map(|c| variant.scalar_map(z, u, c)).collect::<Result<Vec<_>>>()?;
    Ok((contexts, f))
}

pub fn injectivity_test(variant: Variant, omega: usize, t: usize, z: &[f64], u: &[f64], tol: f64) -> Result<InjectivityReport> {
    let (contexts, f) = scalar_values(variant, omega, t, z, u)?;
    let (min_abs, min_gap) = separation(&f);
    let mut sorted = f.clone();
    sorted.sort_by(f64::total_cmp);
    let collisions = sorted.windows(2).filter(|w| w[1] - w[0] <= tol).count();
    let zeros = f.iter().filter(|v| v.abs() <= tol).count();
    Ok(InjectivityReport {
        omega,
        t,
        variant,
        contexts: contexts.len(),
        min_abs,
        min_gap,
        zeros,
        collisions,
        tol,
        pass: min_abs > tol && min_gap > tol,
    })
}

/// Every pair of contexts whose values are within `tol`.
pub fn colliding_pairs(contexts: &[Vec<Token>], f: &[f64], tol: f64) -> Vec<(Vec<Token>, Vec<Token>)> {
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&i, &j| f[i].total_cmp(&f[j]));
    let mut out = Vec::new();
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            if f[j] - f[i] > tol {
                break;
            }
            out.push((contexts[i].clone(), contexts[j].clone()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RANK_TOL;

    #[test]
    fn feature_matrix_examples() {
        let id = Activation::Polynomial { coeffs: vec![0.0, 1.0] };
        let fm = feature_matrix(&[1.0, 2.0], &[3.0, -1.0, 0.5], &id);
        assert_eq!(numeric_rank(&fm, RANK_TOL), 1);
        assert!(feature_matrix(&[0.0; 3], &[1.0, 2.0], &Activation::Tanh).iter().all(|&x| x == 0.0));

        let quad = Activation::Polynomial { coeffs: vec![1.0, 1.0, 1.0] };
        let a = [0.1, 0.2, 0.3];
        let b = [1.0, 2.0, 3.0];
        let fm = feature_matrix(&a, &b, &quad);
        let mut sum = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let ak = DMatrix::from_fn(3, 1, |i, _| a[i].powi(k));
            let bk = DMatrix::from_fn(1, 3, |_, j| b[j].powi(k));
            sum += ak * bk;
        }
        assert!((fm - sum).amax() < 1e-14);
    }

    #[test]
    fn kruskal_examples() {
        assert_eq!(kruskal_rank(&DMatrix::identity(3, 3), RANK_TOL).unwrap(), 3);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(kruskal_rank(&a, RANK_TOL).unwrap(), 2);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert_eq!(kruskal_rank(&z, RANK_TOL).unwrap(), 0);
        assert!(kruskal_rank(&DMatrix::zeros(2, 13), RANK_TOL).is_err());
    }

    #[test]
    fn oracles() {
        assert_eq!(polynomial_rank_oracle(3, 3, &[0, 1, 2]), 3);
        assert_eq!(polynomial_rank_oracle(5, 3, &[1]), 1);
        assert_eq!(polynomial_rank_oracle(2, 9, &[0, 1, 2, 3]), 2);
        assert_eq!(analytic_rank_oracle(4, 3), 3);
        assert_eq!(analytic_rank_oracle(1, 1), 1);
        assert_eq!(analytic_rank_oracle(6, 6), 6);
    }

    #[test]
    fn experiment_examples() {
        let ex = rank_experiment(&Activation::Tanh, 4, &[0.1, 0.2, 0.3, 0.4], 100, 0, None, RANK_TOL).unwrap();
        assert!(ex.agreement_rate >= 0.99);
        let affine = Activation::Polynomial { coeffs: vec![1.0, 1.0] };
        let ex = rank_experiment(&affine, 3, &default_b(3, 1.0), 100, 0, None, RANK_TOL).unwrap();
        assert!(ex.trials.iter().filter(|r| r.rank == 2).count() >= 99);
        assert!(matches!(
            rank_experiment(&Activation::Tanh, 3, &[0.1, 0.1, 0.2], 5, 0, None, RANK_TOL),
            Err(Error::DegenerateB)
        ));
        assert_eq!(ex.csv_rows().lines().count(), 100);
    }

    #[test]
    fn injectivity_examples() {
        let mut r = rng::seeded(0, 0);
        let z = rng::gaussian_vec(&mut r, 3);
        let u = rng::gaussian_vec(&mut r, 4);
        for v in [Variant::SelfAttention, Variant::TokenAverage] {
            let rep = injectivity_test(v, 3, 4, &z, &u, 1e-9).unwrap();
            assert_eq!(rep.contexts, 120);
            assert!(rep.pass, "{v}");
        }
        let rep = injectivity_test(Variant::SelfAttention, 3, 4, &[0.0; 3], &[0.0; 4], 1e-9).unwrap();
        assert!(!rep.pass && rep.zeros == 120);
        let rep = injectivity_test(Variant::TokenAverage, 3, 4, &z, &[0.0; 4], 1e-9).unwrap();
        assert!(!rep.pass);
        assert!(matches!(all_contexts(10, 6), Err(Error::EnumerationBoundExceeded { .. })));
    }
}
