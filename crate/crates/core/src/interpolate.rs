//! Exact interpolation of `n` distinct contexts to `n` interior next-token
//! distributions with `m >= n` hidden neurons.
//!
//! The construction works in the scalar reduction: a generic `(z, u)` makes
//! the scalar map injective and nonzero on the contexts, a generic `w`
//! scaled by `epsilon` makes the hidden feature matrix full rank, and the
//! output layer is then a single linear solve against the logits `ln y'`.
//! The result lifts to full width by rank-one parameter matrices.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextTrie, NextTokenTable};
use crate::linalg::{min_norm_transpose_solve, RANK_TOL};
use crate::model::{
    lift_scalar, lift_scalar_token_average, Activation, NextTokenModel, ScalarModel, ScalarParams,
    TokenAverageParams, TransformerParams, Variant,
};
use crate::rng;
use crate::{Error, Result, Token};

/// Tolerance on the sum of a user-supplied target.
pub const TARGET_SUM_TOL: f64 = 1e-9;

/// `ln y'`; one preimage of `y'` under softmax.
pub fn logit_lift(y: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::BoundaryTarget { index, value });
    }
    Ok(y.iter().map(|v| v.ln()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub context: Vec<Token>,
    pub target: Vec<f64>,
}

/// Distinct contexts paired with interior target distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    omega: usize,
    items: Vec<Target>,
}

impl TargetSet {
    pub fn new(items: Vec<Target>) -> Result<Self> {
        let omega = items
            .first()
            .map(|t| t.target.len())
            .ok_or_else(|| Error::InvalidArgument("target set is empty".into()))?;
        if omega < 2 {
            return Err(Error::InvalidArgument("targets need at least two tokens".into()));
        }
        let mut seen = HashSet::new();
        for it in &items {
            if it.target.len() != omega {
                return Err(Error::Shape(format!("target of length {}, expected {omega}", it.target.len())));
            }
            logit_lift(&it.target)?;
            let s: f64 = it.target.iter().sum();
            if (s - 1.0).abs() > TARGET_SUM_TOL {
                return Err(Error::InvalidArgument(format!("target for {:?} sums to {s}", it.context)));
            }
            if let Some(&token) = it.context.iter().find(|&&t| t == 0 || t as usize > omega) {
                return Err(Error::TokenOutOfRange { token, omega });
            }
            if !seen.insert(it.context.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate context {:?}", it.context)));
            }
        }
        Ok(TargetSet { omega, items })
    }

    /// `n` distinct random nonempty contexts of length at most `max_len`
    /// with Dirichlet(1) targets.
    pub fn random(omega: usize, n: usize, max_len: usize, seed: u64) -> Result<Self> {
        if omega < 2 || max_len == 0 {
            return Err(Error::InvalidArgument("need omega >= 2 and max_len >= 1".into()));
        }
        let total: usize = (1..=max_len).map(|t| omega.pow(t as u32)).sum();
        if n > total {
            return Err(Error::InvalidArgument(format!("only {total} contexts of length <= {max_len}")));
        }
        let mut rng = rng::seeded(seed, 0);
        let items = sample(&mut rng, total, n)
            .into_iter()
            .map(|mut idx| {
                let mut len = 1;
                while idx >= omega.pow(len as u32) {
                    idx -= omega.pow(len as u32);
                    len += 1;
                }
                let mut context = vec![0; len];
                for slot in context.iter_mut().rev() {
                    *slot = (idx % omega) as Token + 1;
                    idx /= omega;
                }
                let raw: Vec<f64> = (0..omega)
                    .map(|_| Exp1.sample(&mut rng))
                    .map(|x: f64| x.max(f64::MIN_POSITIVE))
                    .collect();
                let s: f64 = raw.iter().sum();
                Target { context, target: raw.iter().map(|x| x / s).collect() }
            })
            .collect();
        TargetSet::new(items)
    }

    /// Empirical next-token distributions at every context of a trie.
    /// Fails on the first context whose distribution has a zero entry.
    pub fn from_trie(trie: &ContextTrie) -> Result<Self> {
        let table = NextTokenTable::from_trie(trie);
        let items = table
            .iter()
            .map(|(c, p)| Target { context: c.clone(), target: p.clone() })
            .collect();
        TargetSet::new(items)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        TargetSet::new(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.items).expect("targets serialize")
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Target] {
        &self.items
    }

    /// Targets at nonempty contexts.
    pub fn nonempty(&self) -> impl Iterator<Item = &Target> {
        self.items.iter().filter(|t| !t.context.is_empty())
    }

    pub fn empty_context_target(&self) -> Option<&[f64]> {
        self.items.iter().find(|t| t.context.is_empty()).map(|t| t.target.as_slice())
    }

    /// `omega x n` logits of the nonempty-context targets.
    pub fn logits(&self) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = self.nonempty().map(|t| logit_lift(&t.target).expect("validated")).collect();
        DMatrix::from_fn(self.omega, cols.len(), |i, j| cols[j][i])
    }

    pub fn max_context_len(&self) -> usize {
        self.items.iter().map(|t| t.context.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationConfig {
    pub variant: Variant,
    /// Hidden width; at least the number of nonempty contexts.
    pub m: usize,
    pub seed: u64,
    /// Minimum accepted `|xhat_i|` and `|xhat_i - xhat_j|`.
    pub distinct_tol: f64,
    /// Resamples allowed after the first attempt.
    pub max_retries: usize,
    /// Fraction of the radius of convergence used when it is finite.
    pub margin: f64,
    /// `epsilon * min gap` when the radius is infinite.
    pub gap_scale: f64,
    /// Largest accepted `|epsilon w_i xhat_j|`; beyond it the hidden
    /// features no longer resolve rounding in `xhat` and the sample is redrawn.
    pub max_argument: f64,
    pub rank_tol: f64,
    pub verify_tol: f64,
}

impl InterpolationConfig {
    pub fn new(variant: Variant, m: usize, seed: u64) -> Self {
        InterpolationConfig {
            variant,
            m,
            seed,
            distinct_tol: 1e-9,
            max_retries: 16,
            margin: 0.5,
            gap_scale: 10.0,
            max_argument: 1e8,
            rank_tol: RANK_TOL,
            verify_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationReport {
    pub params: ScalarParams,
    pub activation: Activation,
    pub variant: Variant,
    pub epsilon: f64,
    /// `|R_11| / |R_nn|` of the pivoted feature-matrix factor.
    pub condition: f64,
    pub max_error: f64,
    pub retries: usize,
    pub seed: u64,
}

impl InterpolationReport {
    pub fn model(&self) -> ScalarModel {
        ScalarModel { params: self.params.clone(), activation: self.activation.clone(), variant: self.variant }
    }

    /// Full-width transformer parameters; only for the self-attention variant.
    pub fn lift(&self, d: usize, heads: usize, d0: usize, dr: usize) -> Result<TransformerParams> {
        if self.variant != Variant::SelfAttention {
            return Err(Error::InvalidArgument("lift applies to the self-attention variant".into()));
        }
        lift_scalar(&self.params, d, heads, d0, dr)
    }

    /// Full-width token-averaged FNN; only for the token-average variant.
    pub fn lift_token_average(&self, d: usize) -> Result<TokenAverageParams> {
        if self.variant != Variant::TokenAverage {
            return Err(Error::InvalidArgument("lift applies to the token-average variant".into()));
        }
        lift_scalar_token_average(&self.params, d)
    }
}

/// Per-context sup-norm errors of a model against a target set.
#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub errors: Vec<f64>,
    pub max_error: f64,
}

pub fn verify_interpolation<M: NextTokenModel + ?Sized>(model: &M, ts: &TargetSet) -> Result<Verification> {
    if model.omega() != ts.omega() {
        return Err(Error::Shape(format!("model omega {} vs targets {}", model.omega(), ts.omega())));
    }
    let errors = ts
        .items()
        .iter()
        .map(|t| {
            let q = model.predict(&t.context)?;
            Ok(q.iter().zip(&t.target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(Verification { errors, max_error })
}

/// Smallest `|x_i|` and smallest pairwise gap.
pub fn separation(x: &[f64]) -> (f64, f64) {
    let min_abs = x.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let min_gap = s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    (min_abs, min_gap)
}

/// Builds scalar parameters interpolating `ts` exactly.
pub fn construct_interpolant(
    ts: &TargetSet,
    act: &Activation,
    cfg: &InterpolationConfig,
) -> Result<InterpolationReport> {
    let omega = ts.omega();
    let n = ts.nonempty().count();
    let m = cfg.m;
    if m < n || m == 0 {
        return Err(Error::InvalidArgument(format!("need m >= n, got m = {m}, n = {n}")));
    }
    let t_max = ts.max_context_len().max(1);
    let eta = act.eta();
    let y = ts.logits();
    let yt = y.transpose();
    let empty_logits = match ts.empty_context_target() {
        Some(p) => {
            let l = logit_lift(p)?;
            l[..omega - 1].iter().map(|v| v - l[omega - 1]).collect()
        }
        None => vec![0.0; omega - 1],
    };

    let mut last_err = Error::InjectivitySamplingFailed { attempts: 0 };
    for attempt in 0..=cfg.max_retries {
        let mut r = rng::seeded(cfg.seed, attempt as u64);
        let z = rng::gaussian_vec(&mut r, omega);
        let u = rng::gaussian_vec(&mut r, t_max);
        let xhat = ts
            .nonempty()
            .map(|t| cfg.variant.scalar_map(&z, &u, &t.context))
            .collect::<Result<Vec<f64>>>()?;
        let (min_abs, min_gap) = separation(&xhat);
        if min_abs <= cfg.distinct_tol || min_gap <= cfg.distinct_tol {
            if !matches!(last_err, Error::RankDeficiency { .. } | Error::VerificationFailed { .. }) {
                last_err = Error::InjectivitySamplingFailed { attempts: attempt + 1 };
            }
            continue;
        }
        let w = rng::gaussian_vec(&mut r, m);
        let epsilon = if n == 0 {
            1.0
        } else if act.radius().is_finite() {
            let wmax = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let xmax = xhat.iter().map(|v| v.abs()).fold(0.0, f64::max);
            cfg.margin * act.radius() / (wmax * xmax)
        } else {
            let gap = if n == 1 { min_abs } else { min_gap };
            cfg.gap_scale / gap
        };
        let wmax = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let xmax = xhat.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if epsilon * wmax * xmax > cfg.max_argument {
            if !matches!(last_err, Error::RankDeficiency { .. } | Error::VerificationFailed { .. }) {
                last_err = Error::InjectivitySamplingFailed { attempts: attempt + 1 };
            }
            continue;
        }
        let psi = DMatrix::from_fn(m, n, |i, j| act.eval(epsilon * w[i] * xhat[j] + eta));
        let (v, condition) = if n == 0 {
            (DMatrix::zeros(m, omega), 1.0)
        } else {
            match min_norm_transpose_solve(&psi, &yt, cfg.rank_tol) {
                Ok(s) => (s.x, s.condition),
                Err(e @ Error::RankDeficiency { .. }) => {
                    last_err = e;
                    continue;
                }
                Err(e) => return Err(e),
            }
        };
        let params = ScalarParams {
            z,
            u,
            w: w.iter().map(|wi| epsilon * wi).collect(),
            b: vec![eta; m],
            v,
            empty_logits: empty_logits.clone(),
        };
        let report = InterpolationReport {
            params,
            activation: act.clone(),
            variant: cfg.variant,
            epsilon,
            condition,
            max_error: 0.0,
            retries: attempt,
            seed: cfg.seed,
        };
        let check = verify_interpolation(&report.model(), ts)?;
        if check.max_error <= cfg.verify_tol {
            return Ok(InterpolationReport { max_error: check.max_error, ..report });
        }
        last_err = Error::VerificationFailed { max_error: check.max_error, tolerance: cfg.verify_tol };
    }
    Err(last_err)
}
