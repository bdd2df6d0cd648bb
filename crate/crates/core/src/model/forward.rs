//! Forward evaluation: softmax, the scalar attention and token-averaging
//! maps, the scalar pipeline and the full transformer.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::params::{ScalarParams, TokenAverageParams, TransformerParams};
use super::NextTokenModel;
use crate::{tix, Error, Result, Token};

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Output distribution at the empty context: softmax of `(logits, 0)`.
pub fn empty_context_output(empty_logits: &[f64]) -> Vec<f64> {
    let mut l = empty_logits.to_vec();
    l.push(0.0);
    softmax(&l)
}

fn check_tokens(ctx: &[Token], omega: usize) -> Result<()> {
    match ctx.iter().find(|&&t| t == 0 || t as usize > omega) {
        Some(&token) => Err(Error::TokenOutOfRange { token, omega }),
        None => Ok(()),
    }
}

fn scalar_inputs(z: &[f64], u: &[f64], ctx: &[Token]) -> Result<Vec<f64>> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    if ctx.len() > u.len() {
        return Err(Error::DepthExceeded { requested: ctx.len(), depth: u.len() });
    }
    check_tokens(ctx, z.len())?;
    Ok(ctx.iter().zip(u).map(|(&t, &ut)| z[tix(t)] + ut).collect())
}

/// `<x, softmax(x * x_last)>` with `x = z[ctx] + u[..len]`.
pub fn scalar_attention(z: &[f64], u: &[f64], ctx: &[Token]) -> Result<f64> {
    let x = scalar_inputs(z, u, ctx)?;
    let last = *x.last().expect("nonempty");
    let scores: Vec<f64> = x.iter().map(|&xt| xt * last).collect();
    let a = softmax(&scores);
    Ok(x.iter().zip(&a).map(|(xt, at)| xt * at).sum())
}

/// `sum_t u_t z[ctx_t]`.
pub fn token_average(z: &[f64], u: &[f64], ctx: &[Token]) -> Result<f64> {
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    if ctx.len() > u.len() {
        return Err(Error::DepthExceeded { requested: ctx.len(), depth: u.len() });
    }
    check_tokens(ctx, z.len())?;
    Ok(ctx.iter().zip(u).map(|(&t, &ut)| ut * z[tix(t)]).sum())
}

/// Which injective scalar map feeds the FNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SelfAttention,
    TokenAverage,
}

impl Variant {
    pub fn scalar_map(self, z: &[f64], u: &[f64], ctx: &[Token]) -> Result<f64> {
        match self {
            Variant::SelfAttention => scalar_attention(z, u, ctx),
            Variant::TokenAverage => token_average(z, u, ctx),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self-attention" | "attention" => Ok(Variant::SelfAttention),
            "token-average" | "average" => Ok(Variant::TokenAverage),
            other => Err(Error::Parse(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::SelfAttention => "self-attention",
            Variant::TokenAverage => "token-average",
        })
    }
}

/// `softmax(V^T psi(w * xhat + b))` for a precomputed scalar `xhat`.
pub fn scalar_head(sp: &ScalarParams, act: &Activation, xhat: f64) -> Vec<f64> {
    let hidden: Vec<f64> = sp.w.iter().zip(&sp.b).map(|(&w, &b)| act.eval(w * xhat + b)).collect();
    let logits: Vec<f64> = (0..sp.omega())
        .map(|g| sp.v.column(g).iter().zip(&hidden).map(|(v, h)| v * h).sum())
        .collect();
    softmax(&logits)
}

/// The scalar pipeline as a next-token model.
#[derive(Debug, Clone)]
pub struct ScalarModel {
    pub params: ScalarParams,
    pub activation: Activation,
    pub variant: Variant,
}

impl NextTokenModel for ScalarModel {
    fn omega(&self) -> usize {
        self.params.omega()
    }

    fn predict(&self, ctx: &[Token]) -> Result<Vec<f64>> {
        if ctx.is_empty() {
            return Ok(empty_context_output(&self.params.empty_logits));
        }
        let xhat = self.variant.scalar_map(&self.params.z, &self.params.u, ctx)?;
        Ok(scalar_head(&self.params, &self.activation, xhat))
    }
}

/// Map applied between the two FNN layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenMap {
    /// `V^T psi(W^T x + b)`, as the capacity construction requires.
    #[default]
    Activation,
    /// `V^T softmax(W^T x + b)`, the literal reading of the layer formula.
    Softmax,
}

/// Architecture switches that are not parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Adds `X[:, -1]` to the attention output.
    pub skip_connection: bool,
    pub hidden: HiddenMap,
}

/// Intermediates of one transformer forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `d x len`, column-major: embedded inputs.
    pub x: Vec<f64>,
    /// Per head, `dr x len` keys `W1^T X`.
    pub keys: Vec<Vec<f64>>,
    /// Per head, `W2^T X[:, -1]`.
    pub queries: Vec<Vec<f64>>,
    /// Per head, attention weights over positions.
    pub attn: Vec<Vec<f64>>,
    /// Per head, `d0 x len` values `W3^T X`.
    pub values: Vec<Vec<f64>>,
    /// Concatenated head outputs, `heads * d0`.
    pub concat: Vec<f64>,
    /// Attention sub-layer output, `d`.
    pub y: Vec<f64>,
    /// `W^T y + b`.
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[inline]
fn col(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[j] = <M[:, j], x>` for every column.
#[inline]
fn mat_t_vec(m: &DMatrix<f64>, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..m.ncols()).map(|j| dot(col(m, j), x)));
}

/// Full forward pass for a nonempty context, keeping intermediates.
pub fn transformer_forward_cached(
    p: &TransformerParams,
    act: &Activation,
    opts: &ModelOptions,
    ctx: &[Token],
    cache: &mut ForwardCache,
) -> Result<()> {
    let dims = p.dims;
    if ctx.is_empty() {
        return Err(Error::EmptyContext);
    }
    if ctx.len() > dims.t_max {
        return Err(Error::DepthExceeded { requested: ctx.len(), depth: dims.t_max });
    }
    check_tokens(ctx, dims.omega)?;
    let (d, len) = (dims.d, ctx.len());

    cache.x.clear();
    for (t, &tok) in ctx.iter().enumerate() {
        let zc = col(&p.z, tix(tok));
        let uc = col(&p.u, t);
        cache.x.extend(zc.iter().zip(uc).map(|(a, b)| a + b));
    }
    let xcol = |t: usize| &cache.x[t * d..(t + 1) * d];
    let last = xcol(len - 1).to_vec();

    cache.keys.resize(dims.heads, Vec::new());
    cache.queries.resize(dims.heads, Vec::new());
    cache.attn.resize(dims.heads, Vec::new());
    cache.values.resize(dims.heads, Vec::new());
    cache.concat.clear();
    let mut tmp = Vec::new();
    for r in 0..dims.heads {
        let keys = &mut cache.keys[r];
        keys.clear();
        let values = &mut cache.values[r];
        values.clear();
        for t in 0..len {
            mat_t_vec(&p.w1[r], xcol(t), &mut tmp);
            keys.extend_from_slice(&tmp);
            mat_t_vec(&p.w3[r], xcol(t), &mut tmp);
            values.extend_from_slice(&tmp);
        }
        mat_t_vec(&p.w2[r], &last, &mut cache.queries[r]);
        let q = &cache.queries[r];
        let scores: Vec<f64> = (0..len).map(|t| dot(&keys[t * dims.dr..(t + 1) * dims.dr], q)).collect();
        cache.attn[r] = softmax(&scores);
        let a = &cache.attn[r];
        for k in 0..dims.d0 {
            cache.concat.push((0..len).map(|t| a[t] * values[t * dims.d0 + k]).sum());
        }
    }

    mat_t_vec(&p.w0, &cache.concat, &mut cache.y);
    if opts.skip_connection {
        for (y, l) in cache.y.iter_mut().zip(&last) {
            *y += l;
        }
    }
    mat_t_vec(&p.w, &cache.y, &mut cache.pre);
    for (pre, b) in cache.pre.iter_mut().zip(p.b.iter()) {
        *pre += b;
    }
    cache.hidden = match opts.hidden {
        HiddenMap::Activation => cache.pre.iter().map(|&v| act.eval(v)).collect(),
        HiddenMap::Softmax => softmax(&cache.pre),
    };
    mat_t_vec(&p.v, &cache.hidden, &mut cache.logits);
    cache.probs = softmax(&cache.logits);
    Ok(())
}

/// Next-token distribution of the transformer at `ctx`.
pub fn transformer_forward(
    p: &TransformerParams,
    act: &Activation,
    opts: &ModelOptions,
    ctx: &[Token],
) -> Result<Vec<f64>> {
    if ctx.is_empty() {
        return Ok(empty_context_output(p.empty_logits.as_slice()));
    }
    let mut cache = ForwardCache::default();
    transformer_forward_cached(p, act, opts, ctx, &mut cache)?;
    Ok(cache.probs)
}

/// Transformer parameters bundled with the non-parameter choices.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub params: TransformerParams,
    pub activation: Activation,
    pub options: ModelOptions,
}

impl NextTokenModel for Transformer {
    fn omega(&self) -> usize {
        self.params.dims.omega
    }

    fn predict(&self, ctx: &[Token]) -> Result<Vec<f64>> {
        transformer_forward(&self.params, &self.activation, &self.options, ctx)
    }
}

/// Token-averaged FNN as a next-token model.
#[derive(Debug, Clone)]
pub struct TokenAverageModel {
    pub params: TokenAverageParams,
    pub activation: Activation,
}

impl NextTokenModel for TokenAverageModel {
    fn omega(&self) -> usize {
        self.params.z.ncols()
    }

    fn predict(&self, ctx: &[Token]) -> Result<Vec<f64>> {
        let p = &self.params;
        if ctx.is_empty() {
            return Ok(empty_context_output(p.empty_logits.as_slice()));
        }
        if ctx.len() > p.u.len() {
            return Err(Error::DepthExceeded { requested: ctx.len(), depth: p.u.len() });
        }
        check_tokens(ctx, self.omega())?;
        let d = p.z.nrows();
        let mut avg = vec![0.0; d];
        for (t, &tok) in ctx.iter().enumerate() {
            for (a, z) in avg.iter_mut().zip(col(&p.z, tix(tok))) {
                *a += p.u[t] * z;
            }
        }
        let mut pre = Vec::new();
        mat_t_vec(&p.w, &avg, &mut pre);
        let hidden: Vec<f64> = pre.iter().zip(p.b.iter()).map(|(x, b)| self.activation.eval(x + b)).collect();
        let mut logits = Vec::new();
        mat_t_vec(&p.v, &hidden, &mut logits);
        Ok(softmax(&logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{lift_scalar, lift_scalar_token_average, Dims};
    use crate::rng;
    use nalgebra::DVector;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1f64.ln(), 2f64.ln(), 3f64.ln()]);
        for (a, b) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let shifted = softmax(&[1.0 + 1e3, 2.0 + 1e3, -4.0 + 1e3]);
        for (a, b) in shifted.iter().zip(softmax(&[1.0, 2.0, -4.0])) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_attention_examples() {
        let (z, u) = (vec![1.0; 4], vec![0.0; 3]);
        for ctx in [&[1][..], &[2, 3], &[4, 4, 1]] {
            assert!((scalar_attention(&z, &u, ctx).unwrap() - 1.0).abs() < 1e-15);
        }
        let z = vec![0.3, -1.2];
        let u = vec![0.5, 2.0];
        assert!((scalar_attention(&z, &u, &[2]).unwrap() - (-0.7)).abs() < 1e-15);
        let z = vec![0.0; 3];
        let u = vec![1.0, 2.0, 3.0];
        let e = std::f64::consts::E;
        let expect = (e.powi(2) + 2.0 * e.powi(4)) / (e.powi(2) + e.powi(4));
        assert!((scalar_attention(&z, &u, &[1, 3]).unwrap() - expect).abs() < 1e-14);
        assert!((expect - 1.88080).abs() < 1e-5);
        assert!(matches!(scalar_attention(&z, &u, &[]), Err(Error::EmptyContext)));
    }

    #[test]
    fn token_average_examples() {
        assert_eq!(token_average(&[1.0; 3], &[1.0; 4], &[3, 1, 2]).unwrap(), 3.0);
        let z = vec![1.0, 2.0, 3.0];
        let mut u = vec![0.0; 4];
        u[2] = 1.0;
        assert_eq!(token_average(&z, &u, &[1, 1, 3, 2]).unwrap(), 3.0);
        assert_eq!(token_average(&z, &[0.0; 4], &[2, 2]).unwrap(), 0.0);
        assert!(token_average(&z, &u, &[]).is_err());
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let dims = Dims { d: 3, heads: 2, d0: 2, dr: 2, m: 4, omega: 5, t_max: 4 };
        let mut p = TransformerParams::init_gaussian(dims, 1.0, &mut rng::seeded(0, 0));
        p.v.fill(0.0);
        let out = transformer_forward(&p, &Activation::Tanh, &ModelOptions::default(), &[2, 5, 1]).unwrap();
        assert!(out.iter().all(|&q| (q - 0.2).abs() < 1e-15));
    }

    #[test]
    fn unit_dims_single_token() {
        let dims = Dims { d: 1, heads: 1, d0: 1, dr: 1, m: 3, omega: 2, t_max: 2 };
        let mut p = TransformerParams::init_gaussian(dims, 1.0, &mut rng::seeded(1, 0));
        p.w1[0].fill(1.0);
        p.w2[0].fill(1.0);
        p.w3[0].fill(1.0);
        p.w0.fill(1.0);
        let act = Activation::Logistic;
        let out = transformer_forward(&p, &act, &ModelOptions::default(), &[2]).unwrap();
        let x = p.z[(0, 1)] + p.u[(0, 0)];
        let hidden: Vec<f64> = (0..3).map(|k| act.eval(p.w[(0, k)] * x + p.b[k])).collect();
        let logits: Vec<f64> = (0..2).map(|g| (0..3).map(|k| p.v[(k, g)] * hidden[k]).sum()).collect();
        for (a, b) in out.iter().zip(softmax(&logits)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_context_and_range_errors() {
        let dims = Dims { d: 2, heads: 1, d0: 1, dr: 1, m: 2, omega: 3, t_max: 2 };
        let mut p = TransformerParams::zeros(dims);
        p.empty_logits = DVector::from_vec(vec![2f64.ln(), 0.0]);
        let out = transformer_forward(&p, &Activation::Tanh, &ModelOptions::default(), &[]).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-15 && (out[2] - 0.25).abs() < 1e-15);
        let opts = ModelOptions::default();
        assert!(matches!(
            transformer_forward(&p, &Activation::Tanh, &opts, &[4]),
            Err(Error::TokenOutOfRange { token: 4, .. })
        ));
        assert!(transformer_forward(&p, &Activation::Tanh, &opts, &[1, 1, 1]).is_err());
    }

    #[test]
    fn lifted_token_average_matches_scalar() {
        let mut r = rng::seeded(5, 0);
        let sp = ScalarParams {
            z: rng::gaussian_vec(&mut r, 4),
            u: rng::gaussian_vec(&mut r, 3),
            w: rng::gaussian_vec(&mut r, 6),
            b: rng::gaussian_vec(&mut r, 6),
            v: DMatrix::from_vec(6, 4, rng::gaussian_vec(&mut r, 24)),
            empty_logits: rng::gaussian_vec(&mut r, 3),
        };
        let scalar = ScalarModel { params: sp.clone(), activation: Activation::Arctan, variant: Variant::TokenAverage };
        for d in [1, 3, 8] {
            let full = TokenAverageModel { params: lift_scalar_token_average(&sp, d).unwrap(), activation: Activation::Arctan };
            for ctx in [&[][..], &[1], &[4, 2], &[3, 3, 1]] {
                let a = scalar.predict(ctx).unwrap();
                let b = full.predict(ctx).unwrap();
                let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "d={d} ctx={ctx:?} err={err}");
            }
        }
        let full = lift_scalar(&sp, 2, 1, 1, 1).unwrap();
        assert_eq!(full.dims.t_max, 3);
    }
}
