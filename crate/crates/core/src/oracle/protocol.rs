//! Wire format, protocol v1: one JSON object per line, UTF-8.
//!
//! ```text
//! -> {"kind":"handshake","id":0,"version":1}
//! <- {"id":0,"version":1,"d":16,"head":"scalar"|"classes","n_classes":3,
//!     "vocab":"closed","mask":[...],"pad":[...],"mean":[...],"batch":true}
//! -> {"kind":"embed","id":1,"text":"..."}
//! <- {"id":1,"shape":[L,d],"x":[...],"tokens":[{"s":0,"e":2,"w":0,"special":false},...]}
//! -> {"kind":"eval","id":2,"shape":[L,d],"x":[...],"target":null,"grad":true}
//! <- {"id":2,"value":0.25,"grad":[...]}
//! -> {"kind":"eval_batch","id":3,"shape":[L,d],"xs":[[...],[...]],"target":1,"grad":true}
//! <- {"id":3,"outputs":[{"value":..,"grad":[...]},...]}
//! <- {"id":n,"error":"..."}
//! ```
//!
//! `mask`, `pad`, `mean`, `vocab` and `batch` in the handshake reply are
//! optional. Matrices are flattened row-major.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Request {
    Handshake {
        id: u64,
        version: u32,
    },
    Embed {
        id: u64,
        text: String,
    },
    Eval {
        id: u64,
        shape: [usize; 2],
        x: Vec<f64>,
        target: Option<usize>,
        grad: bool,
    },
    EvalBatch {
        id: u64,
        shape: [usize; 2],
        xs: Vec<Vec<f64>>,
        target: Option<usize>,
        grad: bool,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Handshake { id, .. }
            | Request::Embed { id, .. }
            | Request::Eval { id, .. }
            | Request::EvalBatch { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToken {
    pub s: usize,
    pub e: usize,
    pub w: Option<usize>,
    pub special: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireOutput {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<f64>>,
}

/// Every response shape in one struct; which fields are set depends on the
/// request it answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    // handshake
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<bool>,
    // embed
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<WireToken>>,
    // eval
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<f64>>,
    // eval_batch
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<WireOutput>>,
}

impl Response {
    pub fn error(id: Option<u64>, msg: impl Into<String>) -> Self {
        Self {
            id,
            error: Some(msg.into()),
            ..Self::default()
        }
    }
}
