//! The parameter sets that can be federated: the context-aware prompt
//! generator, or a static prompt matrix that ignores the class embeddings.

use crate::checkpoint::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::promptgen::{
    backprop, generate_prompts, ClassEmbeddingBatch, ForwardTrace, PromptGeneratorParams, PromptSet,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PromptModel {
    Generator(PromptGeneratorParams),
    /// Directly learned prompt vectors, fixed at inference. Zero rows means
    /// no prompts at all.
    Static(Matrix),
}

/// What [`PromptModel::forward`] keeps for the backward pass.
#[derive(Debug, Clone)]
pub enum ModelTrace {
    Generator(ForwardTrace),
    Static,
}

impl PromptModel {
    pub fn param_count(&self) -> usize {
        match self {
            PromptModel::Generator(p) => p.param_count(),
            PromptModel::Static(m) => m.as_slice().len(),
        }
    }

    pub fn prompt_width(&self) -> usize {
        match self {
            PromptModel::Generator(p) => p.prompt_width(),
            PromptModel::Static(m) => m.rows(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            PromptModel::Generator(p) => p.to_flat(),
            PromptModel::Static(m) => m.as_slice().to_vec(),
        }
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            PromptModel::Generator(p) => p.set_flat(flat),
            PromptModel::Static(m) => {
                if flat.len() != m.as_slice().len() {
                    return Err(Error::shape("static prompt length"));
                }
                m.as_mut_slice().copy_from_slice(flat);
                Ok(())
            }
        }
    }

    pub fn forward(&self, classes: &ClassEmbeddingBatch) -> Result<(PromptSet, ModelTrace)> {
        match self {
            PromptModel::Generator(p) => {
                let (set, trace) = generate_prompts(p, classes)?;
                Ok((set, ModelTrace::Generator(trace)))
            }
            PromptModel::Static(m) => {
                if m.rows() > 0 && m.cols() != classes.dim() {
                    return Err(Error::shape("static prompt width"));
                }
                Ok((PromptSet { vectors: m.clone() }, ModelTrace::Static))
            }
        }
    }

    pub fn prompts(&self, classes: &ClassEmbeddingBatch) -> Result<PromptSet> {
        Ok(self.forward(classes)?.0)
    }

    /// Flat gradient of the loss given its gradient with respect to the prompts.
    pub fn backward(&self, trace: &ModelTrace, classes: &ClassEmbeddingBatch, d_prompts: &Matrix) -> Result<Vec<f64>> {
        match (self, trace) {
            (PromptModel::Generator(p), ModelTrace::Generator(t)) => {
                Ok(backprop(p, t, classes, d_prompts)?.to_flat())
            }
            (PromptModel::Static(m), ModelTrace::Static) => {
                if d_prompts.shape() != m.shape() {
                    return Err(Error::shape("static prompt gradient"));
                }
                Ok(d_prompts.as_slice().to_vec())
            }
            _ => Err(Error::shape("trace from a different model kind")),
        }
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        match self {
            PromptModel::Generator(p) => p.to_tensors(),
            PromptModel::Static(m) => vec![NamedTensor {
                name: "prompts".into(),
                dims: vec![m.rows(), m.cols()],
                data: m.as_slice().to_vec(),
            }],
        }
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        match tensors {
            [t] if t.name == "prompts" && t.dims.len() == 2 => Ok(PromptModel::Static(Matrix::from_vec(
                t.dims[0],
                t.dims[1],
                t.data.clone(),
            )?)),
            _ => Ok(PromptModel::Generator(PromptGeneratorParams::from_tensors(tensors)?)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_tensors(&checkpoint::decode(bytes)?)
    }

    pub fn payload_len(&self) -> usize {
        checkpoint::encoded_len(&self.to_tensors())
    }

    /// Same model with every value rounded through `f32`.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        let mut flat = out.to_flat();
        checkpoint::quantize(&mut flat);
        out.set_flat(&flat).expect("same length");
        out
    }

    /// Whether local training changes anything.
    pub fn is_trainable(&self) -> bool {
        self.param_count() > 0
    }
}
