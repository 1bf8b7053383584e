//! Error types shared across modules.

use thiserror::Error;

/// A matrix or input did not have the shape an operation required.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Mismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{len} values cannot fill a {rows}x{cols} matrix")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {got} columns, expected {expected}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}
