//! Path-integral attribution for text classifiers, with word-level
//! aggregation, faithfulness metrics, keyword extraction and
//! highlight comparison.

pub mod attribution;
pub mod corpus;
pub mod error;
pub mod faithfulness;
pub mod highlight;
pub mod matrix;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod render;
pub mod saliency;
pub mod stats;
pub mod synthetic;
pub mod tokenize;
pub mod train;

pub use attribution::{AttributionConfig, AttributionVector, BaselineStrategy, Method, QuadratureKind, QuadratureRule};
pub use error::ShapeError;
pub use matrix::EmbeddingMatrix;
pub use model::{ArchConfig, ModelError, ModelParams, Target};
pub use oracle::{BuiltinOracle, GradientOracle, OracleError};
pub use tokenize::{TokenizedText, Tokenizer, Vocab};
