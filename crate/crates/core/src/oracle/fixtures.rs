//! Closed-form oracles used as test fixtures: `F(x) = sum(x)` and
//! `F(x) = sum(x^2)`. Both embed text with the default tokenizer and a
//! deterministic character-derived embedding.

use super::{Embedded, GradientOracle, OracleDescriptor, OracleError, ReferenceEmbeddings, VocabPolicy};
use crate::matrix::EmbeddingMatrix;
use crate::model::{Head, ModelOutput, Target};
use crate::oracle::protocol::PROTOCOL_VERSION;
use crate::tokenize::Tokenizer;

fn descriptor(dim: usize) -> OracleDescriptor {
    OracleDescriptor {
        version: PROTOCOL_VERSION,
        dim,
        head: Head::Scalar,
        vocab: VocabPolicy::Open,
        references: ReferenceEmbeddings::default(),
        batch: false,
    }
}

fn pseudo_embed(text: &str, dim: usize) -> Result<Embedded, OracleError> {
    let tokens = Tokenizer::default().tokenize(text)?;
    let mut x = EmbeddingMatrix::zeros(tokens.len(), dim);
    for (i, t) in tokens.tokens.iter().enumerate() {
        let code: u64 = t.surface.chars().map(|c| c as u64).sum::<u64>() + 7 * t.kind as u64;
        for j in 0..dim {
            let v = ((code * (j as u64 + 3) + 11) % 97) as f64 / 97.0 - 0.5;
            x.row_mut(i)[j] = v;
        }
    }
    Ok(Embedded { tokens, x })
}

fn check(x: &EmbeddingMatrix, dim: usize, target: Target) -> Result<(), OracleError> {
    if x.cols() != dim {
        return Err(OracleError::Reported(format!("expected d={dim}, got {}", x.cols())));
    }
    if target != Target::Scalar {
        return Err(OracleError::Reported("fixture oracle has a scalar head".into()));
    }
    Ok(())
}

/// `F(x) = sum of all entries`; gradient all ones.
#[derive(Debug, Clone)]
pub struct SumOracle {
    descriptor: OracleDescriptor,
}

impl SumOracle {
    pub fn new(dim: usize) -> Self {
        Self {
            descriptor: descriptor(dim),
        }
    }

    pub fn with_references(mut self, refs: ReferenceEmbeddings) -> Self {
        self.descriptor.references = refs;
        self
    }
}

impl GradientOracle for SumOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        pseudo_embed(text, self.descriptor.dim)
    }

    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        check(x, self.descriptor.dim, target)?;
        Ok(ModelOutput {
            value: x.sum(),
            gradient: want_gradient
                .then(|| EmbeddingMatrix::from_vec(x.rows(), x.cols(), vec![1.0; x.as_slice().len()]).unwrap()),
        })
    }
}

/// `F(x) = sum of squared entries`; gradient `2x`.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    descriptor: OracleDescriptor,
}

impl QuadraticOracle {
    pub fn new(dim: usize) -> Self {
        Self {
            descriptor: descriptor(dim),
        }
    }

    pub fn with_references(mut self, refs: ReferenceEmbeddings) -> Self {
        self.descriptor.references = refs;
        self
    }
}

impl GradientOracle for QuadraticOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        pseudo_embed(text, self.descriptor.dim)
    }

    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        check(x, self.descriptor.dim, target)?;
        let value = x.as_slice().iter().map(|v| v * v).sum();
        let gradient = want_gradient.then(|| {
            EmbeddingMatrix::from_vec(x.rows(), x.cols(), x.as_slice().iter().map(|v| 2.0 * v).collect()).unwrap()
        });
        Ok(ModelOutput { value, gradient })
    }
}
