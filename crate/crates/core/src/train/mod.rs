//! Full-batch Adam training of the transformer toward the corpus entropy
//! bound, and the sweep over hidden widths.

pub mod config;
pub mod grad;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{PositionalMode, TrainConfig};
pub use grad::{is_fnn_array, loss_and_gradients, sinusoidal_positions, Objective, TrainableSubset};

use crate::corpus::{entropy_lower_bound, ContextTrie, Corpus};
use crate::model::{Dims, ParamLayout, TransformerParams};
use crate::rng;
use crate::{Error, Result};

/// First and second moment estimates, flattened in parameter array order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamConfig {
    pub stepsize: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { stepsize: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Shape("adam state does not match parameters".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= cfg.stepsize * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

fn flatten(p: &TransformerParams) -> Vec<f64> {
    p.arrays().into_iter().flat_map(|(_, a)| a.iter().copied()).collect()
}

fn unflatten(p: &mut TransformerParams, flat: &[f64]) {
    let mut off = 0;
    for (_, a) in p.arrays_mut() {
        a.copy_from_slice(&flat[off..off + a.len()]);
        off += a.len();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub loss: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub entropy_bound: f64,
    pub final_loss: f64,
    pub final_gap: f64,
    /// Gradient steps taken.
    pub iterations: usize,
    pub passed: bool,
    pub param_count: usize,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub params: TransformerParams,
}

/// Model dimensions used to train on `obj`.
pub fn train_dims(cfg: &TrainConfig, obj: &Objective) -> Dims {
    Dims {
        d: cfg.d,
        heads: cfg.heads,
        d0: cfg.d0,
        dr: cfg.dr,
        m: cfg.m,
        omega: obj.omega,
        t_max: obj.max_context_len.max(1),
    }
}

/// Parameter count under the layout the config trains.
pub fn trained_param_count(cfg: &TrainConfig, dims: &Dims) -> usize {
    let positional = match cfg.positional {
        PositionalMode::Learned => dims.t_max,
        PositionalMode::Sinusoidal => 0,
    };
    ParamLayout::general(positional).count(dims)
}

/// Gaussian initialization; sinusoidal positions replace `U` when selected.
pub fn init_params(cfg: &TrainConfig, dims: Dims) -> TransformerParams {
    let mut p = TransformerParams::init_gaussian(dims, cfg.init_scale, &mut rng::seeded(cfg.seed, 0));
    if cfg.positional == PositionalMode::Sinusoidal {
        p.u = sinusoidal_positions(dims.d, dims.t_max);
    }
    p
}

pub fn train_to_threshold(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainTrace> {
    let trie = ContextTrie::build(corpus);
    train_on_trie(&trie, cfg)
}

pub fn train_on_trie(trie: &ContextTrie, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let start = Instant::now();
    let obj = Objective::new(trie);
    let bound = entropy_lower_bound(trie);
    let dims = train_dims(cfg, &obj);
    dims.validate()?;
    let mut params = init_params(cfg, dims);
    let param_count = trained_param_count(cfg, &dims);
    let act = cfg.activation.clone();
    let opts = cfg.model_options();
    let adam = cfg.adam();
    let threshold = cfg.threshold_fraction * bound;

    let mut flat = flatten(&params);
    let mut state = AdamState::new(flat.len());
    let mut trace = TrainTrace {
        checkpoints: Vec::new(),
        entropy_bound: bound,
        final_loss: f64::NAN,
        final_gap: f64::NAN,
        iterations: 0,
        passed: false,
        param_count,
        wall_time_secs: 0.0,
        params: params.clone(),
    };

    for it in 0..=cfg.iterations {
        let (loss, mut grad) = match loss_and_gradients(&params, &act, &opts, &obj, cfg.subset) {
            Ok(v) => v,
            Err(Error::Divergence { .. }) => {
                trace.wall_time_secs = start.elapsed().as_secs_f64();
                return Err(Error::Divergence { iteration: it, last: Some(Box::new(trace)) });
            }
            Err(e) => return Err(e),
        };
        let gap = loss - bound;
        let stop = cfg.early_stop && gap < threshold;
        if it % cfg.checkpoint_every == 0 || it == cfg.iterations || stop {
            trace.checkpoints.push(Checkpoint { iteration: it, loss, gap });
        }
        trace.final_loss = loss;
        trace.final_gap = gap;
        trace.iterations = it;
        trace.params = params.clone();
        if stop || it == cfg.iterations {
            break;
        }
        if cfg.positional == PositionalMode::Sinusoidal {
            grad.u.fill(0.0);
        }
        adam_step(&mut flat, &flatten(&grad), &mut state, &adam)?;
        unflatten(&mut params, &flat);
    }
    trace.passed = trace.final_gap < threshold;
    trace.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(trace)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub corpus_id: String,
    pub n_contexts: usize,
    pub omega: usize,
    pub m: usize,
    pub params: usize,
    pub final_loss: f64,
    pub entropy_bound: f64,
    pub gap: f64,
    pub passed: bool,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub const CSV_HEADER: &'static str =
        "corpus_id,n_contexts,omega,m,params,final_loss,entropy_bound,gap,passed,seed,iterations";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:?},{:?},{:?},{},{},{}\n",
                r.corpus_id,
                r.n_contexts,
                r.omega,
                r.m,
                r.params,
                r.final_loss,
                r.entropy_bound,
                r.gap,
                r.passed as u8,
                r.seed,
                r.iterations
            ));
        }
        out
    }

    /// Smallest passing `(m, params)` for a corpus.
    pub fn minimal_passing(&self, corpus_id: &str) -> Option<(usize, usize)> {
        self.rows
            .iter()
            .filter(|r| r.corpus_id == corpus_id && r.passed)
            .map(|r| (r.m, r.params))
            .min()
    }
}

/// Trains every `(corpus, m)` cell. Failed cells become non-passing rows.
pub fn sweep(corpora: &[(String, Corpus)], m_grid: &[usize], template: &TrainConfig) -> Result<SweepResult> {
    if corpora.is_empty() || m_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one corpus and one m".into()));
    }
    template.validate()?;
    let tries: Vec<ContextTrie> = corpora.iter().map(|(_, c)| ContextTrie::build(c)).collect();
    let cells: Vec<(usize, usize)> = (0..corpora.len()).flat_map(|i| m_grid.iter().map(move |&m| (i, m))).collect();
    let rows = cells
        .par_iter()
        .map(|&(i, m)| {
            let cfg = TrainConfig { m, ..template.clone() };
            let trie = &tries[i];
            let obj_dims = train_dims(&cfg, &Objective::new(trie));
            let base = SweepRow {
                corpus_id: corpora[i].0.clone(),
                n_contexts: trie.n_contexts(),
                omega: trie.omega(),
                m,
                params: trained_param_count(&cfg, &obj_dims),
                final_loss: f64::NAN,
                entropy_bound: entropy_lower_bound(trie),
                gap: f64::NAN,
                passed: false,
                seed: cfg.seed,
                iterations: 0,
            };
            match train_on_trie(trie, &cfg) {
                Ok(tr) => SweepRow {
                    final_loss: tr.final_loss,
                    gap: tr.final_gap,
                    passed: tr.passed,
                    iterations: tr.iterations,
                    ..base
                },
                Err(_) => base,
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn toy() -> Corpus {
        Corpus::new(vec![vec![1, 2, 4], vec![1, 2, 5], vec![1, 3, 4]], 5).unwrap()
    }

    #[test]
    fn first_adam_step_is_signed_stepsize() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![3.0, -0.1, 1e-3];
        let mut st = AdamState::new(3);
        let cfg = AdamConfig { stepsize: 0.01, ..Default::default() };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        for (after, (before, gi)) in p.iter().zip([1.0, -2.0, 0.5].iter().zip(&g)) {
            assert!((after - (before - 0.01 * gi.signum())).abs() < 1e-6);
        }
        let before = p.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut st, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn toy_corpus_reaches_bound() {
        let cfg = TrainConfig {
            m: 8,
            activation: Activation::Gelu,
            iterations: 5000,
            stepsize: 1e-2,
            ..TrainConfig::default()
        };
        let tr = train_to_threshold(&toy(), &cfg).unwrap();
        assert!(tr.final_gap < 0.01 * 3.0 * 3f64.ln(), "gap {}", tr.final_gap);
        assert!(tr.checkpoints.iter().all(|c| c.gap >= -1e-9));
    }

    #[test]
    fn loose_threshold_stops_early() {
        let cfg = TrainConfig { threshold_fraction: 1.0, iterations: 5000, stepsize: 1e-2, ..TrainConfig::default() };
        let tr = train_to_threshold(&toy(), &cfg).unwrap();
        assert!(tr.passed && tr.iterations < 5000);
    }

    #[test]
    fn deterministic_and_fnn_only_freezes() {
        let cfg = TrainConfig { iterations: 150, subset: TrainableSubset::FnnOnly, ..TrainConfig::default() };
        let a = train_to_threshold(&toy(), &cfg).unwrap();
        let b = train_to_threshold(&toy(), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
        let init = init_params(&cfg, a.params.dims);
        for ((name, x), (_, y)) in a.params.arrays().into_iter().zip(init.arrays()) {
            if !is_fnn_array(&name) {
                assert_eq!(x, y, "{name}");
            }
        }
    }

    #[test]
    fn sweep_rows_and_csv() {
        let cfg = TrainConfig { iterations: 20, ..TrainConfig::default() };
        let corpora = vec![("a".to_string(), toy()), ("b".to_string(), toy()), ("c".to_string(), toy())];
        let res = sweep(&corpora, &[1, 2, 3, 4], &cfg).unwrap();
        assert_eq!(res.rows.len(), 12);
        assert_eq!(res.to_csv().lines().count(), 13);
        for r in &res.rows {
            let dims = Dims { d: cfg.d, heads: cfg.heads, d0: cfg.d0, dr: cfg.dr, m: r.m, omega: 5, t_max: 2 };
            assert_eq!(r.params, crate::model::param_count(&dims, 2));
        }
    }
}
