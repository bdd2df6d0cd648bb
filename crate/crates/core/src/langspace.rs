//! Depth-truncated probabilistic language spaces.
//!
//! A space of the *first kind* stores a next-token distribution for every
//! context of length `< depth` that has nonzero chain-rule probability. A
//! space of the *second kind* stores the probability mass of every sequence
//! of length `1..=depth`. [`phi12`] and [`phi21`] convert between the two;
//! the conversion is a bijection.
//!
//! Tables are dense: contexts of length `t` are indexed in base `omega`
//! (most significant token first) after an offset of `sum_{s<t} omega^s`.

use std::collections::{BTreeMap, HashSet};

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{entropy, ContextTrie, Corpus, PROB_SUM_TOL};
use crate::rng;
use crate::{tix, Error, Result, Token};

/// Number of sequences of length exactly `t`.
fn level_size(omega: usize, t: usize) -> usize {
    omega.pow(t as u32)
}

/// Index of the first context of length `t` in a flat table.
fn level_offset(omega: usize, t: usize) -> usize {
    (0..t).map(|s| level_size(omega, s)).sum()
}

/// Position of `ctx` among sequences of its length.
fn level_index(omega: usize, ctx: &[Token]) -> usize {
    ctx.iter().fold(0, |acc, &t| acc * omega + tix(t))
}

fn flat_index(omega: usize, ctx: &[Token]) -> usize {
    level_offset(omega, ctx.len()) + level_index(omega, ctx)
}

/// Sequence of length `t` at position `idx` within its level.
fn sequence_at(omega: usize, t: usize, mut idx: usize) -> Vec<Token> {
    let mut out = vec![0; t];
    for slot in out.iter_mut().rev() {
        *slot = (idx % omega) as Token + 1;
        idx /= omega;
    }
    out
}

/// All sequences of length `t`, in table order.
pub fn sequences_of_len(omega: usize, t: usize) -> impl Iterator<Item = Vec<Token>> {
    (0..level_size(omega, t)).map(move |i| sequence_at(omega, t, i))
}

fn check_row(row: &[f64], omega: usize) -> Result<()> {
    if row.len() != omega {
        return Err(Error::Shape(format!("row has {} entries, expected {omega}", row.len())));
    }
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidArgument(format!("row sums to {s}, not 1")));
    }
    Ok(())
}

/// Conditional next-token table on its support set.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstKindSpace {
    omega: usize,
    depth: usize,
    /// Flat over contexts of length `0..depth`; `None` off the support.
    rows: Vec<Option<Vec<f64>>>,
}

impl FirstKindSpace {
    /// Builds a space from a row generator evaluated on the support only.
    ///
    /// Support is derived: a context is in it iff its parent is and the
    /// parent assigns its last token positive probability.
    pub fn from_fn(
        omega: usize,
        depth: usize,
        mut row: impl FnMut(&[Token]) -> Vec<f64>,
    ) -> Result<Self> {
        if omega == 0 || depth == 0 {
            return Err(Error::InvalidArgument("omega and depth must be positive".into()));
        }
        let total = level_offset(omega, depth);
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; total];
        for t in 0..depth {
            for (i, ctx) in sequences_of_len(omega, t).enumerate() {
                let on_support = match ctx.split_last() {
                    None => true,
                    Some((&last, parent)) => rows[flat_index(omega, parent)]
                        .as_ref()
                        .is_some_and(|r| r[tix(last)] > 0.0),
                };
                if on_support {
                    let r = row(&ctx);
                    check_row(&r, omega)?;
                    rows[level_offset(omega, t) + i] = Some(r);
                }
            }
        }
        Ok(FirstKindSpace { omega, depth, rows })
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `p(. | ctx)`, or `None` when `ctx` is off the support or too long.
    pub fn conditional(&self, ctx: &[Token]) -> Option<&[f64]> {
        if ctx.len() >= self.depth || ctx.iter().any(|&t| t == 0 || t as usize > self.omega) {
            return None;
        }
        self.rows[flat_index(self.omega, ctx)].as_deref()
    }

    pub fn in_support(&self, ctx: &[Token]) -> bool {
        self.conditional(ctx).is_some()
    }

    /// Supported contexts with their rows, shortest first.
    pub fn support(&self) -> impl Iterator<Item = (Vec<Token>, &[f64])> + '_ {
        (0..self.depth).flat_map(move |t| {
            sequences_of_len(self.omega, t).filter_map(move |ctx| {
                self.conditional(&ctx).map(|r| (ctx.clone(), r))
            })
        })
    }

    pub fn to_json(&self) -> String {
        let rows = self
            .support()
            .map(|(ctx, r)| (context_key(&ctx), r.to_vec()))
            .collect();
        let doc = SpaceJson { omega: self.omega, depth: self.depth, rows };
        serde_json::to_string_pretty(&doc).expect("space serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SpaceJson = serde_json::from_str(s)?;
        let mut parsed = BTreeMap::new();
        for (k, v) in doc.rows {
            parsed.insert(parse_context_key(&k)?, v);
        }
        let mut missing = None;
        let space = FirstKindSpace::from_fn(doc.omega, doc.depth, |ctx| match parsed.get(ctx) {
            Some(r) => r.clone(),
            None => {
                missing.get_or_insert_with(|| ctx.to_vec());
                vec![1.0 / doc.omega as f64; doc.omega]
            }
        })?;
        if let Some(ctx) = missing {
            return Err(Error::Parse(format!("no row for supported context {ctx:?}")));
        }
        Ok(space)
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceJson {
    omega: usize,
    depth: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

fn context_key(ctx: &[Token]) -> String {
    ctx.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_context_key(s: &str) -> Result<Vec<Token>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|e| Error::Parse(format!("context `{s}`: {e}"))))
        .collect()
}

/// Probability mass of every sequence of length `1..=depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondKindSpace {
    omega: usize,
    depth: usize,
    /// `mass[t - 1]` is dense over sequences of length `t`.
    mass: Vec<Vec<f64>>,
}

impl SecondKindSpace {
    /// Validates normalisation and marginal consistency within `tol`.
    pub fn new(omega: usize, depth: usize, mass: Vec<Vec<f64>>, tol: f64) -> Result<Self> {
        if mass.len() != depth {
            return Err(Error::Shape(format!("{} levels, expected {depth}", mass.len())));
        }
        for (t, level) in mass.iter().enumerate() {
            if level.len() != level_size(omega, t + 1) {
                return Err(Error::Shape(format!("level {} has wrong size", t + 1)));
            }
            if level.iter().any(|&q| !(0.0..=1.0 + tol).contains(&q)) {
                return Err(Error::InvalidArgument("masses must lie in [0, 1]".into()));
            }
        }
        let s: f64 = mass[0].iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!("length-1 masses sum to {s}")));
        }
        for t in 1..depth {
            for (i, &parent) in mass[t - 1].iter().enumerate() {
                let children: f64 = mass[t][i * omega..(i + 1) * omega].iter().sum();
                if (children - parent).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "marginal mismatch at length {}: {children} vs {parent}",
                        t + 1
                    )));
                }
            }
        }
        Ok(SecondKindSpace { omega, depth, mass })
    }

    pub fn omega(&self) -> usize {
        self.omega
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `q(x)`; the empty sequence has mass one.
    pub fn mass(&self, x: &[Token]) -> f64 {
        if x.is_empty() {
            return 1.0;
        }
        self.mass[x.len() - 1][level_index(self.omega, x)]
    }

    pub fn level(&self, t: usize) -> &[f64] {
        &self.mass[t - 1]
    }
}

/// Chain rule: `q(x) = prod_t p(x_t | x_<t)`, zero off the support.
pub fn phi12(space: &FirstKindSpace) -> SecondKindSpace {
    let omega = space.omega;
    let mut mass: Vec<Vec<f64>> = Vec::with_capacity(space.depth);
    for t in 1..=space.depth {
        let mut level = vec![0.0; level_size(omega, t)];
        for (pi, parent) in sequences_of_len(omega, t - 1).enumerate() {
            let parent_mass = if t == 1 { 1.0 } else { mass[t - 2][pi] };
            if let Some(row) = space.conditional(&parent) {
                for (g, &p) in row.iter().enumerate() {
                    level[pi * omega + g] = parent_mass * p;
                }
            }
        }
        mass.push(level);
    }
    SecondKindSpace { omega, depth: space.depth, mass }
}

/// Ratios `p(y | x) = q(x, y) / q(x)` on contexts of nonzero mass.
pub fn phi21(space: &SecondKindSpace) -> FirstKindSpace {
    let omega = space.omega;
    let mut rows = vec![None; level_offset(omega, space.depth)];
    for t in 0..space.depth {
        for (i, ctx) in sequences_of_len(omega, t).enumerate() {
            let qx = space.mass(&ctx);
            if qx == 0.0 {
                continue;
            }
            let children = &space.mass[t][i * omega..(i + 1) * omega];
            rows[level_offset(omega, t) + i] = Some(children.iter().map(|&c| c / qx).collect());
        }
    }
    FirstKindSpace { omega, depth: space.depth, rows }
}

/// Inverse-CDF draw; ties go to the lower token id.
fn draw(row: &[f64], rng: &mut rng::Rng) -> Token {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (g, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = g;
            cum += p;
            if u < cum {
                return g as Token + 1;
            }
        }
    }
    last_positive as Token + 1
}

fn sample_doc(space: &FirstKindSpace, doc_len: usize, rng: &mut rng::Rng) -> Vec<Token> {
    let mut doc = Vec::with_capacity(doc_len);
    for _ in 0..doc_len {
        let row = space
            .conditional(&doc)
            .expect("sampled prefixes have positive probability");
        doc.push(draw(row, rng));
    }
    doc
}

/// `n_docs` i.i.d. documents of length `doc_len` by ancestral sampling.
pub fn sample_corpus(
    space: &FirstKindSpace,
    n_docs: usize,
    doc_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if doc_len > space.depth {
        return Err(Error::DepthExceeded { requested: doc_len, depth: space.depth });
    }
    if n_docs == 0 || doc_len == 0 {
        return Err(Error::InvalidArgument("n_docs and doc_len must be positive".into()));
    }
    let mut rng = rng::seeded(seed, 0);
    let docs = (0..n_docs).map(|_| sample_doc(space, doc_len, &mut rng)).collect();
    Corpus::new(docs, space.omega)
}

/// Samples documents until the corpus has at least `target_contexts`
/// unique contexts (or `max_docs` documents).
pub fn sample_corpus_with_contexts(
    space: &FirstKindSpace,
    target_contexts: usize,
    doc_len: usize,
    seed: u64,
    max_docs: usize,
) -> Result<Corpus> {
    if doc_len > space.depth {
        return Err(Error::DepthExceeded { requested: doc_len, depth: space.depth });
    }
    let mut rng = rng::seeded(seed, 0);
    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut docs = Vec::new();
    while seen.len() < target_contexts && docs.len() < max_docs {
        let doc = sample_doc(space, doc_len, &mut rng);
        for t in 0..doc.len() {
            if !seen.contains(&doc[..t]) {
                seen.insert(doc[..t].to_vec());
            }
        }
        docs.push(doc);
    }
    Corpus::new(docs, space.omega)
}

/// Full-support space with Dirichlet(`concentration`) rows.
pub fn random_space(omega: usize, depth: usize, concentration: f64, seed: u64) -> Result<FirstKindSpace> {
    if omega < 2 {
        return Err(Error::InvalidArgument("omega must be at least 2".into()));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::InvalidArgument("concentration must be positive".into()));
    }
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let mut rng = rng::seeded(seed, 0);
    FirstKindSpace::from_fn(omega, depth, |_| {
        let raw: Vec<f64> = (0..omega)
            .map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE))
            .collect();
        let s: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / s).collect();
        // push the rounding residue into the largest entry
        let resid = 1.0 - row.iter().sum::<f64>();
        let imax = (0..omega).fold(0, |a, i| if row[i] > row[a] { i } else { a });
        row[imax] += resid;
        row
    })
}

/// `sum_alpha c+(alpha) H(p(.|alpha))` over the trie's contexts, using the
/// space's true conditionals instead of the empirical ones.
pub fn weighted_entropy_at(space: &FirstKindSpace, trie: &ContextTrie) -> f64 {
    trie.contexts()
        .iter()
        .map(|e| {
            let row = space
                .conditional(&e.context)
                .expect("realized contexts are on the support");
            e.continuation_count() as f64 * entropy(row)
        })
        .sum()
}
