//! Serves any [`GradientOracle`] over the line protocol. Used to expose the
//! reference model to other processes and as the fixture in adapter tests.

use std::io::{BufRead, Write};

use super::protocol::{Request, Response, WireOutput, WireToken, PROTOCOL_VERSION};
use super::{GradientOracle, VocabPolicy};
use crate::matrix::EmbeddingMatrix;
use crate::model::{Head, Target};
use crate::tokenize::TokenKind;

pub fn handshake_response(oracle: &dyn GradientOracle, id: u64) -> Response {
    let d = oracle.descriptor();
    let (head, n_classes) = match d.head {
        Head::Scalar => ("scalar", None),
        Head::Classes(k) => ("classes", Some(k)),
    };
    let vocab = match d.vocab {
        VocabPolicy::Closed => "closed",
        VocabPolicy::Open => "open",
        VocabPolicy::Unknown => "unknown",
    };
    Response {
        id: Some(id),
        version: Some(PROTOCOL_VERSION),
        d: Some(d.dim),
        head: Some(head.into()),
        n_classes,
        vocab: Some(vocab.into()),
        mask: d.references.mask.clone(),
        pad: d.references.pad.clone(),
        mean: d.references.mean.clone(),
        batch: Some(d.batch),
        ..Response::default()
    }
}

/// Answers one request line. Never fails: problems become error responses.
pub fn handle_line(oracle: &mut dyn GradientOracle, line: &str) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
            return Response::error(id, format!("malformed request: {e}"));
        }
    };
    let id = req.id();
    match handle(oracle, req) {
        Ok(r) => r,
        Err(msg) => Response::error(Some(id), msg),
    }
}

fn matrix(shape: [usize; 2], data: Vec<f64>, dim: usize) -> Result<EmbeddingMatrix, String> {
    if shape[1] != dim {
        return Err(format!(
            "embedding dimension {} does not match oracle d={dim}",
            shape[1]
        ));
    }
    EmbeddingMatrix::from_vec(shape[0], shape[1], data).map_err(|e| e.to_string())
}

fn handle(oracle: &mut dyn GradientOracle, req: Request) -> Result<Response, String> {
    let dim = oracle.descriptor().dim;
    match req {
        Request::Handshake { id, version } => {
            if version != PROTOCOL_VERSION {
                return Err(format!("unsupported protocol version {version}"));
            }
            Ok(handshake_response(oracle, id))
        }
        Request::Embed { id, text } => {
            let e = oracle.embed(&text).map_err(|e| e.to_string())?;
            let tokens = e
                .tokens
                .tokens
                .iter()
                .map(|t| WireToken {
                    s: t.char_start,
                    e: t.char_end,
                    w: t.word_index,
                    special: t.kind != TokenKind::Word,
                })
                .collect();
            let (rows, cols) = e.x.shape();
            Ok(Response {
                id: Some(id),
                shape: Some(vec![rows, cols]),
                x: Some(e.x.into_vec()),
                tokens: Some(tokens),
                ..Response::default()
            })
        }
        Request::Eval {
            id,
            shape,
            x,
            target,
            grad,
        } => {
            let x = matrix(shape, x, dim)?;
            let out = oracle
                .eval(&x, Target::from_wire(target), grad)
                .map_err(|e| e.to_string())?;
            Ok(Response {
                id: Some(id),
                value: Some(out.value),
                grad: out.gradient.map(EmbeddingMatrix::into_vec),
                ..Response::default()
            })
        }
        Request::EvalBatch {
            id,
            shape,
            xs,
            target,
            grad,
        } => {
            let xs = xs
                .into_iter()
                .map(|x| matrix(shape, x, dim))
                .collect::<Result<Vec<_>, _>>()?;
            let outs = oracle
                .eval_batch(&xs, Target::from_wire(target), grad)
                .map_err(|e| e.to_string())?;
            Ok(Response {
                id: Some(id),
                outputs: Some(
                    outs.into_iter()
                        .map(|o| WireOutput {
                            value: o.value,
                            grad: o.gradient.map(EmbeddingMatrix::into_vec),
                        })
                        .collect(),
                ),
                ..Response::default()
            })
        }
    }
}

/// Reads requests until end of input, writing exactly one response line
/// per non-blank request line.
pub fn serve<R: BufRead, W: Write>(oracle: &mut dyn GradientOracle, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(oracle, &line);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
