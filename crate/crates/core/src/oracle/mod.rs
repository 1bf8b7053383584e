//! The gradient-oracle contract every attribution method is written against,
//! plus its two realizations: the in-process reference model and an
//! external child process speaking line-delimited JSON.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ShapeError;
use crate::matrix::EmbeddingMatrix;
use crate::model::{Head, ModelError, ModelOutput, ModelParams, Target};
use crate::tokenize::TokenizedText;

pub mod client;
pub mod fixtures;
pub mod protocol;
pub mod server;

pub use client::{ExternalConfig, ExternalOracle};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle speaks protocol version {got}, expected {expected}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("oracle timed out after {after_ms} ms{}", if *.exited { " (process exited)" } else { "" })]
    Timeout { after_ms: u64, exited: bool },
    #[error("oracle reported: {0}")]
    Reported(String),
    #[error("failed to start oracle: {0}")]
    Spawn(#[source] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabPolicy {
    /// Unknown words map to a reserved UNK row.
    Closed,
    /// Subword vocabulary without out-of-vocabulary inputs.
    Open,
    Unknown,
}

/// Reference rows used to build baselines. Any of them may be missing for
/// an external oracle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEmbeddings {
    pub mask: Option<Vec<f64>>,
    pub pad: Option<Vec<f64>>,
    /// Mean of the full input-embedding table.
    pub mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDescriptor {
    pub version: u32,
    pub dim: usize,
    pub head: Head,
    pub vocab: VocabPolicy,
    pub references: ReferenceEmbeddings,
    /// Whether the oracle accepts many matrices per request.
    pub batch: bool,
}

/// Tokens of a text together with their input embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedded {
    pub tokens: TokenizedText,
    pub x: EmbeddingMatrix,
}

/// Anything that can embed text and answer (value, gradient) queries at
/// arbitrary points of embedding space.
pub trait GradientOracle {
    fn descriptor(&self) -> &OracleDescriptor;

    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError>;

    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError>;

    fn eval_batch(
        &mut self,
        xs: &[EmbeddingMatrix],
        target: Target,
        want_gradient: bool,
    ) -> Result<Vec<ModelOutput>, OracleError> {
        xs.iter().map(|x| self.eval(x, target, want_gradient)).collect()
    }

    /// Layer internals, available only for the in-process reference model.
    fn builtin(&self) -> Option<&ModelParams> {
        None
    }

    fn value(&mut self, x: &EmbeddingMatrix, target: Target) -> Result<f64, OracleError> {
        Ok(self.eval(x, target, false)?.value)
    }
}

impl<O: GradientOracle + ?Sized> GradientOracle for Box<O> {
    fn descriptor(&self) -> &OracleDescriptor {
        (**self).descriptor()
    }
    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        (**self).embed(text)
    }
    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        (**self).eval(x, target, want_gradient)
    }
    fn eval_batch(
        &mut self,
        xs: &[EmbeddingMatrix],
        target: Target,
        want_gradient: bool,
    ) -> Result<Vec<ModelOutput>, OracleError> {
        (**self).eval_batch(xs, target, want_gradient)
    }
    fn builtin(&self) -> Option<&ModelParams> {
        (**self).builtin()
    }
}

/// The reference model behind the oracle contract. Cheap to clone; clones
/// share the parameters.
#[derive(Debug, Clone)]
pub struct BuiltinOracle {
    params: Arc<ModelParams>,
    descriptor: OracleDescriptor,
}

impl BuiltinOracle {
    pub fn new(params: ModelParams) -> Self {
        Self::from_arc(Arc::new(params))
    }

    pub fn from_arc(params: Arc<ModelParams>) -> Self {
        let descriptor = OracleDescriptor {
            version: protocol::PROTOCOL_VERSION,
            dim: params.dim(),
            head: params.arch.head,
            vocab: VocabPolicy::Closed,
            references: ReferenceEmbeddings {
                mask: Some(params.mask_embedding().to_vec()),
                pad: Some(params.pad_embedding().to_vec()),
                mean: Some(params.mean_embedding()),
            },
            batch: true,
        };
        Self { params, descriptor }
    }

    pub fn params(&self) -> &Arc<ModelParams> {
        &self.params
    }
}

impl GradientOracle for BuiltinOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        let tokens = self.params.tokenize(text)?;
        let x = self.params.embed(&tokens);
        Ok(Embedded { tokens, x })
    }

    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        if want_gradient {
            Ok(self.params.gradient(x, None, target)?)
        } else {
            Ok(ModelOutput {
                value: self.params.forward(x, None, target)?,
                gradient: None,
            })
        }
    }

    fn builtin(&self) -> Option<&ModelParams> {
        Some(&self.params)
    }
}

/// Wraps an oracle and counts evaluated points.
#[derive(Debug)]
pub struct CountingOracle<O> {
    pub inner: O,
    pub evaluations: usize,
    pub gradient_evaluations: usize,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            evaluations: 0,
            gradient_evaluations: 0,
        }
    }
}

impl<O: GradientOracle> GradientOracle for CountingOracle<O> {
    fn descriptor(&self) -> &OracleDescriptor {
        self.inner.descriptor()
    }
    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        self.inner.embed(text)
    }
    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        self.evaluations += 1;
        if want_gradient {
            self.gradient_evaluations += 1;
        }
        self.inner.eval(x, target, want_gradient)
    }
    fn eval_batch(
        &mut self,
        xs: &[EmbeddingMatrix],
        target: Target,
        want_gradient: bool,
    ) -> Result<Vec<ModelOutput>, OracleError> {
        self.evaluations += xs.len();
        if want_gradient {
            self.gradient_evaluations += xs.len();
        }
        self.inner.eval_batch(xs, target, want_gradient)
    }
    fn builtin(&self) -> Option<&ModelParams> {
        self.inner.builtin()
    }
}
