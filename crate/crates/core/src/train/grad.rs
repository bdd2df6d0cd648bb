//! Cross-entropy over the context trie and its gradient by reverse-mode
//! accumulation through softmax, the FNN, attention and the embeddings.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextEntry, ContextTrie};
use crate::model::{
    empty_context_output, transformer_forward_cached, Activation, ForwardCache, HiddenMap, ModelOptions,
    TransformerParams,
};
use crate::{tix, Error, Result};

/// Contexts per parallel work item. Chunk sums are combined in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 16;

/// Which parameters receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableSubset {
    #[default]
    All,
    /// Only `W`, `b`, `V` and the empty-context logits.
    FnnOnly,
}

impl std::str::FromStr for TrainableSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TrainableSubset::All),
            "fnn-only" | "fnn_only" => Ok(TrainableSubset::FnnOnly),
            other => Err(Error::Parse(format!("unknown trainable subset `{other}`"))),
        }
    }
}

impl std::fmt::Display for TrainableSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainableSubset::All => "all",
            TrainableSubset::FnnOnly => "fnn-only",
        })
    }
}

/// Names of the arrays trained in `fnn-only` mode.
pub fn is_fnn_array(name: &str) -> bool {
    matches!(name, "W" | "b" | "V" | "empty_logits")
}

/// The loss as a sum over unique contexts `alpha` of
/// `-sum_gamma c(alpha, gamma) ln q(gamma | alpha)`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub contexts: Vec<ContextEntry>,
    pub omega: usize,
    pub max_context_len: usize,
}

impl Objective {
    pub fn new(trie: &ContextTrie) -> Self {
        let contexts = trie.contexts();
        let max_context_len = contexts.iter().map(|e| e.context.len()).max().unwrap_or(0);
        Objective { contexts, omega: trie.omega(), max_context_len }
    }
}

/// Accumulates one context's loss and gradient into `g`.
fn accumulate(
    p: &TransformerParams,
    act: &Activation,
    opts: &ModelOptions,
    e: &ContextEntry,
    cache: &mut ForwardCache,
    g: &mut TransformerParams,
) -> Result<f64> {
    let total = e.continuation_count() as f64;
    let counts = &e.next_counts;
    let nll = |q: &[f64]| -> f64 {
        counts
            .iter()
            .zip(q)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, &qi)| -(c as f64) * qi.ln())
            .sum()
    };

    if e.context.is_empty() {
        let q = empty_context_output(p.empty_logits.as_slice());
        for k in 0..g.empty_logits.len() {
            g.empty_logits[k] += total * q[k] - counts[k] as f64;
        }
        return Ok(nll(&q));
    }

    transformer_forward_cached(p, act, opts, &e.context, cache)?;
    let dims = p.dims;
    let (d, m, omega, len) = (dims.d, dims.m, dims.omega, e.context.len());
    let loss = nll(&cache.probs);

    // Softmax cross-entropy at the output.
    let dlogits: Vec<f64> = (0..omega).map(|g| total * cache.probs[g] - counts[g] as f64).collect();

    // logits = V^T hidden
    let mut dhidden = vec![0.0; m];
    for (gcol, &dl) in dlogits.iter().enumerate() {
        let vcol = &p.v.as_slice()[gcol * m..(gcol + 1) * m];
        let gv = &mut g.v.as_mut_slice()[gcol * m..(gcol + 1) * m];
        for k in 0..m {
            gv[k] += cache.hidden[k] * dl;
            dhidden[k] += vcol[k] * dl;
        }
    }

    let dpre: Vec<f64> = match opts.hidden {
        HiddenMap::Activation => dhidden.iter().zip(&cache.pre).map(|(dh, &x)| dh * act.deriv(x)).collect(),
        HiddenMap::Softmax => {
            let s = &cache.hidden;
            let inner: f64 = dhidden.iter().zip(s).map(|(a, b)| a * b).sum();
            dhidden.iter().zip(s).map(|(dh, si)| si * (dh - inner)).collect()
        }
    };

    // pre = W^T y + b
    let mut dy = vec![0.0; d];
    for k in 0..m {
        g.b[k] += dpre[k];
        let wcol = &p.w.as_slice()[k * d..(k + 1) * d];
        let gw = &mut g.w.as_mut_slice()[k * d..(k + 1) * d];
        for i in 0..d {
            gw[i] += cache.y[i] * dpre[k];
            dy[i] += wcol[i] * dpre[k];
        }
    }

    // y = W0^T concat (+ x_last)
    let hd = dims.heads * dims.d0;
    let mut dconcat = vec![0.0; hd];
    for i in 0..d {
        let w0col = &p.w0.as_slice()[i * hd..(i + 1) * hd];
        let gw0 = &mut g.w0.as_mut_slice()[i * hd..(i + 1) * hd];
        for j in 0..hd {
            gw0[j] += cache.concat[j] * dy[i];
            dconcat[j] += w0col[j] * dy[i];
        }
    }

    let mut dx = vec![0.0; d * len];
    if opts.skip_connection {
        for i in 0..d {
            dx[(len - 1) * d + i] += dy[i];
        }
    }

    let (d0, dr) = (dims.d0, dims.dr);
    let x = &cache.x;
    for r in 0..dims.heads {
        let a = &cache.attn[r];
        let keys = &cache.keys[r];
        let values = &cache.values[r];
        let q = &cache.queries[r];
        let dout = &dconcat[r * d0..(r + 1) * d0];

        // out = sum_t a_t v_t
        let da: Vec<f64> = (0..len)
            .map(|t| values[t * d0..(t + 1) * d0].iter().zip(dout).map(|(v, o)| v * o).sum())
            .collect();
        let inner: f64 = da.iter().zip(a).map(|(x, y)| x * y).sum();
        let ds: Vec<f64> = da.iter().zip(a).map(|(dat, at)| at * (dat - inner)).collect();

        let w1 = p.w1[r].as_slice();
        let w2 = p.w2[r].as_slice();
        let w3 = p.w3[r].as_slice();
        let mut dq = vec![0.0; dr];
        for t in 0..len {
            let xt = &x[t * d..(t + 1) * d];
            // v_t = W3^T x_t, dv_t = a_t dout
            {
                let gw3 = g.w3[r].as_mut_slice();
                for k in 0..d0 {
                    let dv = a[t] * dout[k];
                    for i in 0..d {
                        gw3[k * d + i] += xt[i] * dv;
                        dx[t * d + i] += w3[k * d + i] * dv;
                    }
                }
            }
            // s_t = <k_t, q>, k_t = W1^T x_t
            let gw1 = g.w1[r].as_mut_slice();
            let kt = &keys[t * dr..(t + 1) * dr];
            for k in 0..dr {
                dq[k] += ds[t] * kt[k];
                let dk = ds[t] * q[k];
                for i in 0..d {
                    gw1[k * d + i] += xt[i] * dk;
                    dx[t * d + i] += w1[k * d + i] * dk;
                }
            }
        }
        // q = W2^T x_last
        let xl = &x[(len - 1) * d..len * d];
        let gw2 = g.w2[r].as_mut_slice();
        for k in 0..dr {
            for i in 0..d {
                gw2[k * d + i] += xl[i] * dq[k];
                dx[(len - 1) * d + i] += w2[k * d + i] * dq[k];
            }
        }
    }

    // x_t = Z[:, alpha_t] + U[:, t]
    for (t, &tok) in e.context.iter().enumerate() {
        let j = tix(tok);
        let gz = &mut g.z.as_mut_slice()[j * d..(j + 1) * d];
        for i in 0..d {
            gz[i] += dx[t * d + i];
        }
        let gu = &mut g.u.as_mut_slice()[t * d..(t + 1) * d];
        for i in 0..d {
            gu[i] += dx[t * d + i];
        }
    }
    Ok(loss)
}

fn add_into(acc: &mut TransformerParams, other: &TransformerParams) {
    for ((_, a), (_, b)) in acc.arrays_mut().into_iter().zip(other.arrays()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Loss and its gradient, shaped like the parameters.
pub fn loss_and_gradients(
    p: &TransformerParams,
    act: &Activation,
    opts: &ModelOptions,
    obj: &Objective,
    subset: TrainableSubset,
) -> Result<(f64, TransformerParams)> {
    if obj.omega != p.dims.omega {
        return Err(Error::Shape(format!("corpus omega {} vs model omega {}", obj.omega, p.dims.omega)));
    }
    let parts = obj
        .contexts
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = TransformerParams::zeros(p.dims);
            let mut cache = ForwardCache::default();
            let mut loss = 0.0;
            for e in chunk {
                loss += accumulate(p, act, opts, e, &mut cache, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().unwrap_or_else(|| (0.0, TransformerParams::zeros(p.dims)));
    for (l, g) in iter {
        loss += l;
        add_into(&mut grad, &g);
    }
    if !loss.is_finite() {
        return Err(Error::Divergence { iteration: 0, last: None });
    }
    if subset == TrainableSubset::FnnOnly {
        for (name, a) in grad.arrays_mut() {
            if !is_fnn_array(&name) {
                a.fill(0.0);
            }
        }
    }
    Ok((loss, grad))
}

/// `d x t` sinusoidal positional table: `sin(t / 10000^(2i/d))` in even
/// rows and the matching cosine in odd rows.
pub fn sinusoidal_positions(d: usize, t: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, t, |i, pos| {
        let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
