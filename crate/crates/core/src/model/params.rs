//! Parameter containers for the scalar pipeline, the full one-layer
//! transformer and the token-averaged FNN.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Shape hyperparameters of the transformer.
///
/// `heads` is the number of attention heads `m0`, `d0` the per-head value
/// width, `dr` the per-head query/key width, `m` the FNN width and `t_max`
/// the number of positional columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub heads: usize,
    pub d0: usize,
    pub dr: usize,
    pub m: usize,
    pub omega: usize,
    pub t_max: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d0 == 0 || self.dr == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(format!("dimensions must be positive: {self:?}")));
        }
        if self.omega < 2 {
            return Err(Error::InvalidArgument("omega must be at least 2".into()));
        }
        Ok(())
    }
}

/// The `d = 1` reduction: scalar embeddings and positions, FNN of width `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarParams {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// `m x omega`.
    pub v: DMatrix<f64>,
    /// Logits of tokens `1..omega` at the empty context; the last is pinned to 0.
    pub empty_logits: Vec<f64>,
}

impl ScalarParams {
    pub fn omega(&self) -> usize {
        self.z.len()
    }

    pub fn m(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (omega, m) = (self.omega(), self.m());
        if omega < 2 {
            return Err(Error::Shape("scalar params need omega >= 2".into()));
        }
        if self.b.len() != m || self.v.shape() != (m, omega) || self.empty_logits.len() != omega - 1 {
            return Err(Error::Shape("inconsistent scalar parameter shapes".into()));
        }
        let finite = self
            .z
            .iter()
            .chain(&self.u)
            .chain(&self.w)
            .chain(&self.b)
            .chain(self.v.iter())
            .chain(&self.empty_logits)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite scalar parameter".into()));
        }
        Ok(())
    }
}

/// All matrices of the one-layer multi-head decoder-only transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub dims: Dims,
    /// `d x omega` token embeddings.
    pub z: DMatrix<f64>,
    /// `d x t_max` positional embeddings.
    pub u: DMatrix<f64>,
    /// Per head, `d x dr`.
    pub w1: Vec<DMatrix<f64>>,
    /// Per head, `d x dr`.
    pub w2: Vec<DMatrix<f64>>,
    /// Per head, `d x d0`.
    pub w3: Vec<DMatrix<f64>>,
    /// `heads*d0 x d` output projection.
    pub w0: DMatrix<f64>,
    /// `d x m`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `m x omega`.
    pub v: DMatrix<f64>,
    pub empty_logits: DVector<f64>,
}

impl TransformerParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims { d, heads, d0, dr, m, omega, t_max } = dims;
        TransformerParams {
            dims,
            z: DMatrix::zeros(d, omega),
            u: DMatrix::zeros(d, t_max),
            w1: vec![DMatrix::zeros(d, dr); heads],
            w2: vec![DMatrix::zeros(d, dr); heads],
            w3: vec![DMatrix::zeros(d, d0); heads],
            w0: DMatrix::zeros(heads * d0, d),
            w: DMatrix::zeros(d, m),
            b: DVector::zeros(m),
            v: DMatrix::zeros(m, omega),
            empty_logits: DVector::zeros(omega.saturating_sub(1)),
        }
    }

    /// Gaussian weights of standard deviation `scale`; zero biases and
    /// empty-context logits.
    pub fn init_gaussian(dims: Dims, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(dims);
        for (name, arr) in p.arrays_mut() {
            if name == "b" || name == "empty_logits" {
                continue;
            }
            for x in arr.iter_mut() {
                *x = scale * rng::gaussian(rng);
            }
        }
        p
    }

    /// Named flat views of every array, in a fixed order. Matrices are
    /// column-major.
    pub fn arrays(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("Z".into(), self.z.as_slice()), ("U".into(), self.u.as_slice())];
        for r in 0..self.dims.heads {
            out.push((format!("W1[{r}]"), self.w1[r].as_slice()));
            out.push((format!("W2[{r}]"), self.w2[r].as_slice()));
            out.push((format!("W3[{r}]"), self.w3[r].as_slice()));
        }
        out.push(("W0".into(), self.w0.as_slice()));
        out.push(("W".into(), self.w.as_slice()));
        out.push(("b".into(), self.b.as_slice()));
        out.push(("V".into(), self.v.as_slice()));
        out.push(("empty_logits".into(), self.empty_logits.as_slice()));
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> =
            vec![("Z".into(), self.z.as_mut_slice()), ("U".into(), self.u.as_mut_slice())];
        for ((r, w1), (w2, w3)) in self
            .w1
            .iter_mut()
            .enumerate()
            .zip(self.w2.iter_mut().zip(self.w3.iter_mut()))
        {
            out.push((format!("W1[{r}]"), w1.as_mut_slice()));
            out.push((format!("W2[{r}]"), w2.as_mut_slice()));
            out.push((format!("W3[{r}]"), w3.as_mut_slice()));
        }
        out.push(("W0".into(), self.w0.as_mut_slice()));
        out.push(("W".into(), self.w.as_mut_slice()));
        out.push(("b".into(), self.b.as_mut_slice()));
        out.push(("V".into(), self.v.as_mut_slice()));
        out.push(("empty_logits".into(), self.empty_logits.as_mut_slice()));
        out
    }

    /// Total entries across all arrays, including the empty-context logits.
    pub fn num_entries(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    pub fn to_json(&self) -> String {
        let shapes = self.shapes();
        let arrays = self
            .arrays()
            .into_iter()
            .map(|(name, data)| {
                let (rows, cols) = shapes[&name];
                (name, NamedArray::from_col_major(rows, cols, data))
            })
            .collect();
        let doc = ParamsJson { dims: self.dims, arrays };
        serde_json::to_string(&doc).expect("params serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ParamsJson = serde_json::from_str(s)?;
        doc.dims.validate()?;
        let mut p = TransformerParams::zeros(doc.dims);
        let shapes = p.shapes();
        for (name, slot) in p.arrays_mut() {
            let arr = doc
                .arrays
                .get(&name)
                .ok_or_else(|| Error::Parse(format!("missing array `{name}`")))?;
            let want = shapes[&name];
            if arr.shape != [want.0, want.1] || arr.data.len() != want.0 * want.1 {
                return Err(Error::Shape(format!("array `{name}` has shape {:?}, expected {want:?}", arr.shape)));
            }
            arr.write_col_major(slot);
        }
        Ok(p)
    }

    fn shapes(&self) -> BTreeMap<String, (usize, usize)> {
        let Dims { d, heads, d0, dr, m, omega, t_max } = self.dims;
        let mut s = BTreeMap::new();
        s.insert("Z".to_string(), (d, omega));
        s.insert("U".to_string(), (d, t_max));
        for r in 0..heads {
            s.insert(format!("W1[{r}]"), (d, dr));
            s.insert(format!("W2[{r}]"), (d, dr));
            s.insert(format!("W3[{r}]"), (d, d0));
        }
        s.insert("W0".to_string(), (heads * d0, d));
        s.insert("W".to_string(), (d, m));
        s.insert("b".to_string(), (m, 1));
        s.insert("V".to_string(), (m, omega));
        s.insert("empty_logits".to_string(), (omega - 1, 1));
        s
    }
}

/// Shaped array in the parameter file; `data` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedArray {
    fn from_col_major(rows: usize, cols: usize, col_major: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(col_major[j * rows + i]);
            }
        }
        NamedArray { shape: [rows, cols], data }
    }

    fn write_col_major(&self, out: &mut [f64]) {
        let [rows, cols] = self.shape;
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = self.data[i * cols + j];
            }
        }
    }
}

/// Parameter file layout: a dims header and named row-major arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ParamsJson {
    dims: Dims,
    arrays: BTreeMap<String, NamedArray>,
}

/// Token-averaged FNN: the attention sub-layer replaced by
/// `alpha -> sum_t u_t Z[:, alpha_t]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenAverageParams {
    /// `d x omega`.
    pub z: DMatrix<f64>,
    pub u: Vec<f64>,
    /// `d x m`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `m x omega`.
    pub v: DMatrix<f64>,
    pub empty_logits: DVector<f64>,
}

fn ones_outer(rows: usize, v: &[f64], scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, v.len(), |_, j| v[j] * scale)
}

/// Rank-one lift of scalar parameters to the full transformer. Every token
/// embeds along `1_d`, so attention sees the scalar pipeline scaled.
pub fn lift_scalar(sp: &ScalarParams, d: usize, heads: usize, d0: usize, dr: usize) -> Result<TransformerParams> {
    sp.validate()?;
    let dims = Dims { d, heads, d0, dr, m: sp.m(), omega: sp.omega(), t_max: sp.u.len() };
    dims.validate()?;
    let (df, d0f, drf) = (d as f64, d0 as f64, dr as f64);
    let qk = DMatrix::from_element(d, dr, 1.0 / (df * drf).sqrt());
    let val = DMatrix::from_element(d, d0, 1.0 / (df * d0f).sqrt());
    Ok(TransformerParams {
        dims,
        z: ones_outer(d, &sp.z, 1.0 / df.sqrt()),
        u: ones_outer(d, &sp.u, 1.0 / df.sqrt()),
        w1: vec![qk.clone(); heads],
        w2: vec![qk; heads],
        w3: vec![val; heads],
        w0: DMatrix::from_element(heads * d0, d, 1.0 / (heads as f64 * (df * d0f).sqrt())),
        w: ones_outer(d, &sp.w, 1.0 / df.sqrt()),
        b: DVector::from_column_slice(&sp.b),
        v: sp.v.clone(),
        empty_logits: DVector::from_column_slice(&sp.empty_logits),
    })
}

/// Rank-one lift of scalar parameters to a token-averaged FNN of width `d`.
pub fn lift_scalar_token_average(sp: &ScalarParams, d: usize) -> Result<TokenAverageParams> {
    sp.validate()?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let s = 1.0 / (d as f64).sqrt();
    Ok(TokenAverageParams {
        z: ones_outer(d, &sp.z, s),
        u: sp.u.clone(),
        w: ones_outer(d, &sp.w, s),
        b: DVector::from_column_slice(&sp.b),
        v: sp.v.clone(),
        empty_logits: DVector::from_column_slice(&sp.empty_logits),
    })
}
