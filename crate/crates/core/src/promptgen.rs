//! The trainable prompt generator.
//!
//! Given the class-name token embeddings `T` (n_tok × d) of a task, the
//! generator produces `m` prompt vectors:
//!
//! ```text
//! K = T·W_K,  V = T·W_V
//! A = softmax_rows(Q·Kᵀ / √d)              (m × n_tok)
//! O = A·V                                   (m × d)
//! P = tanh(O·W1 + b1)·W2 + b2               (m × d)
//! ```
//!
//! Gradients are computed by hand in [`backprop`] and checked against
//! central differences in the tests.

use crate::checkpoint::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix, RngStream};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// One class name's extent inside [`ClassEmbeddingBatch::tokens`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSpan {
    pub class_name: String,
    pub start: usize,
    pub len: usize,
}

/// Token embeddings of a task's concatenated class names.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingBatch {
    pub tokens: Matrix,
    pub spans: Vec<ClassSpan>,
}

impl ClassEmbeddingBatch {
    /// Checks that spans are ordered, disjoint and cover every token row.
    pub fn new(tokens: Matrix, spans: Vec<ClassSpan>) -> Result<Self> {
        let mut next = 0;
        for s in &spans {
            if s.start != next || s.len == 0 {
                return Err(Error::shape(format!(
                    "span {:?} does not continue at token {next}",
                    s.class_name
                )));
            }
            next += s.len;
        }
        if next != tokens.rows() {
            return Err(Error::shape(format!(
                "spans cover {next} tokens, batch has {}",
                tokens.rows()
            )));
        }
        Ok(ClassEmbeddingBatch { tokens, spans })
    }

    pub fn n_classes(&self) -> usize {
        self.spans.len()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn mean_span_len(&self) -> f64 {
        self.tokens.rows() as f64 / self.spans.len().max(1) as f64
    }
}

/// The `m` generated prompt vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub vectors: Matrix,
}

impl PromptSet {
    pub fn empty(d: usize) -> Self {
        PromptSet {
            vectors: Matrix::zeros(0, d),
        }
    }

    pub fn width(&self) -> usize {
        self.vectors.rows()
    }
}

/// Trainable parameters θ of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGeneratorParams {
    pub query: Matrix,
    pub w_key: Matrix,
    pub w_value: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Intermediates kept by the forward pass for [`backprop`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub keys: Matrix,
    pub values: Matrix,
    pub attn_weights: Matrix,
    pub attn_out: Matrix,
    pub hidden_pre: Matrix,
}

const TENSOR_NAMES: [&str; 7] = ["query", "w_key", "w_value", "w1", "b1", "w2", "b2"];

impl PromptGeneratorParams {
    /// Number of scalars in θ for the given widths.
    pub fn count_for(m: usize, d: usize, d_h: usize) -> usize {
        m * d + 2 * d * d + d * d_h + d_h + d_h * d + d
    }

    pub fn zeros(m: usize, d: usize, d_h: usize) -> Self {
        PromptGeneratorParams {
            query: Matrix::zeros(m, d),
            w_key: Matrix::zeros(d, d),
            w_value: Matrix::zeros(d, d),
            w1: Matrix::zeros(d, d_h),
            b1: vec![0.0; d_h],
            w2: Matrix::zeros(d_h, d),
            b2: vec![0.0; d],
        }
    }

    pub fn prompt_width(&self) -> usize {
        self.query.rows()
    }

    pub fn dim(&self) -> usize {
        self.query.cols()
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    pub fn param_count(&self) -> usize {
        Self::count_for(self.prompt_width(), self.dim(), self.hidden_width())
    }

    fn parts(&self) -> [&[f64]; 7] {
        [
            self.query.as_slice(),
            self.w_key.as_slice(),
            self.w_value.as_slice(),
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    fn parts_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.query.as_mut_slice(),
            self.w_key.as_mut_slice(),
            self.w_value.as_mut_slice(),
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    /// Flatten in the fixed order Q, W_K, W_V, W1, b1, W2, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for part in self.parts_mut() {
            let n = part.len();
            part.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn dims(&self) -> [Vec<usize>; 7] {
        let (m, d, h) = (self.prompt_width(), self.dim(), self.hidden_width());
        [
            vec![m, d],
            vec![d, d],
            vec![d, d],
            vec![d, h],
            vec![h],
            vec![h, d],
            vec![d],
        ]
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        TENSOR_NAMES
            .iter()
            .zip(self.dims())
            .zip(self.parts())
            .map(|((name, dims), data)| NamedTensor {
                name: (*name).to_owned(),
                dims,
                data: data.to_vec(),
            })
            .collect()
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
        if names != TENSOR_NAMES {
            return Err(Error::Format(format!(
                "expected prompt generator tensors {TENSOR_NAMES:?}, found {names:?}"
            )));
        }
        let q = &tensors[0].dims;
        let h = &tensors[4].dims;
        if q.len() != 2 || h.len() != 1 {
            return Err(Error::Format("bad tensor ranks".into()));
        }
        let mut params = PromptGeneratorParams::zeros(q[0], q[1], h[0]);
        for ((t, want), part) in tensors.iter().zip(params.dims()).zip(params.parts_mut()) {
            if t.dims != want {
                return Err(Error::Format(format!(
                    "tensor {} has dims {:?}, expected {want:?}",
                    t.name, t.dims
                )));
            }
            part.copy_from_slice(&t.data);
        }
        Ok(params)
    }
}

/// Gaussian init from the `init` stream in flat order; biases stay zero.
pub fn init_params(m: usize, d: usize, d_h: usize, stream: &mut RngStream) -> Result<PromptGeneratorParams> {
    if m == 0 || d == 0 || d_h == 0 {
        return Err(Error::config(format!(
            "prompt generator dimensions must be positive (m={m}, d={d}, d_h={d_h})"
        )));
    }
    let mut p = PromptGeneratorParams::zeros(m, d, d_h);
    for (i, part) in p.parts_mut().into_iter().enumerate() {
        if i == 4 || i == 6 {
            continue;
        }
        part.iter_mut().for_each(|x| *x = INIT_STD * stream.normal());
    }
    Ok(p)
}

pub fn generate_prompts(
    params: &PromptGeneratorParams,
    classes: &ClassEmbeddingBatch,
) -> Result<(PromptSet, ForwardTrace)> {
    let d = params.dim();
    if classes.dim() != d {
        return Err(Error::shape(format!(
            "class embeddings have width {}, generator expects {d}",
            classes.dim()
        )));
    }
    let t = &classes.tokens;
    let keys = t.matmul(&params.w_key)?;
    let values = t.matmul(&params.w_value)?;
    let mut scores = params.query.matmul_t(&keys)?;
    scores.scale(1.0 / (d as f64).sqrt());
    let attn_weights = softmax_rows(&scores);
    let attn_out = attn_weights.matmul(&values)?;
    let mut hidden_pre = attn_out.matmul(&params.w1)?;
    hidden_pre.add_row_vector(&params.b1)?;
    let hidden = hidden_pre.map(f64::tanh);
    let mut vectors = hidden.matmul(&params.w2)?;
    vectors.add_row_vector(&params.b2)?;
    Ok((
        PromptSet { vectors },
        ForwardTrace {
            keys,
            values,
            attn_weights,
            attn_out,
            hidden_pre,
        },
    ))
}

/// Reverse-mode gradient of `Σ dl_dp ⊙ P` with respect to every field of θ.
pub fn backprop(
    params: &PromptGeneratorParams,
    trace: &ForwardTrace,
    classes: &ClassEmbeddingBatch,
    dl_dp: &Matrix,
) -> Result<PromptGeneratorParams> {
    let (m, d) = (params.prompt_width(), params.dim());
    let n = classes.tokens.rows();
    if dl_dp.shape() != (m, d)
        || trace.attn_weights.shape() != (m, n)
        || trace.hidden_pre.shape() != (m, params.hidden_width())
        || trace.keys.shape() != (n, d)
    {
        return Err(Error::shape("trace does not match parameters and inputs"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let hidden = trace.hidden_pre.map(f64::tanh);

    let w2 = hidden.t_matmul(dl_dp)?;
    let b2 = dl_dp.column_sums();
    let d_hidden = dl_dp.matmul_t(&params.w2)?;
    let mut d_pre = d_hidden;
    for (g, z) in d_pre.as_mut_slice().iter_mut().zip(hidden.as_slice()) {
        *g *= 1.0 - z * z;
    }
    let w1 = trace.attn_out.t_matmul(&d_pre)?;
    let b1 = d_pre.column_sums();
    let d_out = d_pre.matmul_t(&params.w1)?;

    let d_attn = d_out.matmul_t(&trace.values)?;
    let d_values = trace.attn_weights.t_matmul(&d_out)?;
    let mut d_scores = Matrix::zeros(m, n);
    for i in 0..m {
        let a = trace.attn_weights.row(i);
        let g = d_attn.row(i);
        let inner: f64 = a.iter().zip(g).map(|(x, y)| x * y).sum();
        for j in 0..n {
            d_scores[(i, j)] = a[j] * (g[j] - inner) * scale;
        }
    }
    let query = d_scores.matmul(&trace.keys)?;
    let d_keys = d_scores.t_matmul(&params.query)?;
    let w_key = classes.tokens.t_matmul(&d_keys)?;
    let w_value = classes.tokens.t_matmul(&d_values)?;

    Ok(PromptGeneratorParams {
        query,
        w_key,
        w_value,
        w1,
        b1,
        w2,
        b2,
    })
}

pub fn serialize_params(params: &PromptGeneratorParams) -> Result<Vec<u8>> {
    checkpoint::encode(&params.to_tensors())
}

pub fn deserialize_params(bytes: &[u8]) -> Result<PromptGeneratorParams> {
    PromptGeneratorParams::from_tensors(&checkpoint::decode(bytes)?)
}
