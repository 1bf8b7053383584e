//! Client side of the line protocol: drives an oracle living in a child
//! process through its standard input and output.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::protocol::{Request, Response, WireOutput, PROTOCOL_VERSION};
use super::{Embedded, GradientOracle, OracleDescriptor, OracleError, ReferenceEmbeddings, VocabPolicy};
use crate::matrix::EmbeddingMatrix;
use crate::model::{Head, ModelOutput, Target};
use crate::tokenize::{Token, TokenKind, TokenizedText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    /// Interpolation points per `eval_batch` request.
    pub batch_size: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            command: Vec::new(),
            timeout_ms: 30_000,
            batch_size: 32,
        }
    }
}

/// One session with one child process. Requests are strictly serialized;
/// ids increase by one per request.
pub struct ExternalOracle {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    descriptor: OracleDescriptor,
    timeout: Duration,
    batch_size: usize,
    broken: Option<String>,
}

impl std::fmt::Debug for ExternalOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalOracle")
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl ExternalOracle {
    /// Starts the child process and performs the handshake.
    pub fn spawn(config: &ExternalConfig) -> Result<Self, OracleError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| OracleError::Spawn(std::io::Error::other("empty oracle command")))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(OracleError::Spawn)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut oracle = Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            descriptor: OracleDescriptor {
                version: 0,
                dim: 0,
                head: Head::Scalar,
                vocab: VocabPolicy::Unknown,
                references: ReferenceEmbeddings::default(),
                batch: false,
            },
            timeout: Duration::from_millis(config.timeout_ms.max(1)),
            batch_size: config.batch_size.max(1),
            broken: None,
        };
        oracle.handshake()?;
        Ok(oracle)
    }

    fn handshake(&mut self) -> Result<(), OracleError> {
        let resp = self.call(|id| Request::Handshake {
            id,
            version: PROTOCOL_VERSION,
        })?;
        let version = resp
            .version
            .ok_or_else(|| self.poison(OracleError::Protocol("handshake reply lacks `version`".into())))?;
        if version != PROTOCOL_VERSION {
            return Err(self.poison(OracleError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                got: version,
            }));
        }
        let dim = resp
            .d
            .filter(|&d| d > 0)
            .ok_or_else(|| self.poison(OracleError::Protocol("handshake reply lacks a positive `d`".into())))?;
        let head = match (resp.head.as_deref(), resp.n_classes) {
            (Some("scalar"), _) => Head::Scalar,
            (Some("classes"), Some(k)) if k >= 2 => Head::Classes(k),
            (h, k) => {
                return Err(self.poison(OracleError::Protocol(format!(
                    "bad head description {h:?} / n_classes {k:?}"
                ))))
            }
        };
        let vocab = match resp.vocab.as_deref() {
            Some("closed") => VocabPolicy::Closed,
            Some("open") => VocabPolicy::Open,
            _ => VocabPolicy::Unknown,
        };
        for (name, v) in [("mask", &resp.mask), ("pad", &resp.pad), ("mean", &resp.mean)] {
            if v.as_ref().is_some_and(|v| v.len() != dim) {
                return Err(self.poison(OracleError::Protocol(format!("`{name}` embedding has wrong length"))));
            }
        }
        self.descriptor = OracleDescriptor {
            version,
            dim,
            head,
            vocab,
            references: ReferenceEmbeddings {
                mask: resp.mask,
                pad: resp.pad,
                mean: resp.mean,
            },
            batch: resp.batch.unwrap_or(false),
        };
        Ok(())
    }

    fn poison(&mut self, e: OracleError) -> OracleError {
        if self.broken.is_none() {
            self.broken = Some(e.to_string());
        }
        e
    }

    /// Sends one request and waits for its response line.
    fn call(&mut self, make: impl FnOnce(u64) -> Request) -> Result<Response, OracleError> {
        if let Some(why) = &self.broken {
            return Err(OracleError::Protocol(format!(
                "session unusable after earlier failure: {why}"
            )));
        }
        let id = self.next_id;
        self.next_id += 1;
        let req = make(id);
        let mut line = serde_json::to_string(&req).map_err(|e| OracleError::Protocol(e.to_string()))?;
        line.push('\n');
        let timeout_ms = self.timeout.as_millis() as u64;
        let written = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if written.is_err() {
            return Err(self.poison(OracleError::Timeout {
                after_ms: 0,
                exited: true,
            }));
        }
        let raw = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(self.poison(OracleError::Protocol(format!("reading oracle output: {e}")))),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                return Err(self.poison(OracleError::Timeout {
                    after_ms: timeout_ms,
                    exited: false,
                }));
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(self.poison(OracleError::Timeout {
                    after_ms: 0,
                    exited: true,
                }))
            }
        };
        let resp: Response = serde_json::from_str(&raw).map_err(|e| {
            let short: String = raw.chars().take(80).collect();
            self.poison(OracleError::Protocol(format!("malformed line {short:?}: {e}")))
        })?;
        if resp.id != Some(id) {
            return Err(self.poison(OracleError::Protocol(format!(
                "response id {:?} does not match request id {id}",
                resp.id
            ))));
        }
        if let Some(msg) = resp.error {
            return Err(OracleError::Reported(msg));
        }
        Ok(resp)
    }

    fn output(
        &mut self,
        rows: usize,
        cols: usize,
        value: Option<f64>,
        grad: Option<Vec<f64>>,
        want: bool,
    ) -> Result<ModelOutput, OracleError> {
        let value = value.ok_or_else(|| self.poison(OracleError::Protocol("eval reply lacks `value`".into())))?;
        let gradient = match (want, grad) {
            (false, _) => None,
            (true, Some(g)) => {
                if g.len() != rows * cols {
                    return Err(self.poison(OracleError::Protocol(format!(
                        "gradient has {} entries, expected {}",
                        g.len(),
                        rows * cols
                    ))));
                }
                Some(EmbeddingMatrix::from_vec(rows, cols, g)?)
            }
            (true, None) => return Err(self.poison(OracleError::Protocol("eval reply lacks `grad`".into()))),
        };
        Ok(ModelOutput { value, gradient })
    }

    fn check_dim(&self, x: &EmbeddingMatrix) -> Result<(), OracleError> {
        if x.cols() != self.descriptor.dim {
            return Err(crate::error::ShapeError::Length {
                what: "embedding dimension",
                expected: self.descriptor.dim,
                got: x.cols(),
            }
            .into());
        }
        Ok(())
    }

    /// Terminates the child process.
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        self.stdin.take();
        // Give a well-behaved oracle a moment to exit on EOF before killing it.
        for _ in 0..20 {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }
}

impl GradientOracle for ExternalOracle {
    fn descriptor(&self) -> &OracleDescriptor {
        &self.descriptor
    }

    fn embed(&mut self, text: &str) -> Result<Embedded, OracleError> {
        let resp = self.call(|id| Request::Embed {
            id,
            text: text.to_string(),
        })?;
        let (shape, x, wire) = match (resp.shape, resp.x, resp.tokens) {
            (Some(s), Some(x), Some(t)) if s.len() == 2 => (s, x, t),
            _ => return Err(self.poison(OracleError::Protocol("embed reply lacks shape/x/tokens".into()))),
        };
        if shape[1] != self.descriptor.dim || wire.len() != shape[0] {
            return Err(self.poison(OracleError::Protocol("embed reply shape is inconsistent".into())));
        }
        let x = EmbeddingMatrix::from_vec(shape[0], shape[1], x)?;
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::with_capacity(wire.len());
        for t in wire {
            if t.s > t.e || t.e > chars.len() {
                return Err(self.poison(OracleError::Protocol(format!(
                    "token offsets {}..{} out of range",
                    t.s, t.e
                ))));
            }
            tokens.push(Token {
                surface: chars[t.s..t.e].iter().collect(),
                char_start: t.s,
                char_end: t.e,
                word_index: if t.special { None } else { t.w },
                kind: if t.special { TokenKind::Special } else { TokenKind::Word },
            });
        }
        Ok(Embedded {
            tokens: TokenizedText {
                tokens,
                source: text.to_string(),
            },
            x,
        })
    }

    fn eval(&mut self, x: &EmbeddingMatrix, target: Target, want_gradient: bool) -> Result<ModelOutput, OracleError> {
        self.check_dim(x)?;
        let (rows, cols) = x.shape();
        let resp = self.call(|id| Request::Eval {
            id,
            shape: [rows, cols],
            x: x.as_slice().to_vec(),
            target: target.to_wire(),
            grad: want_gradient,
        })?;
        self.output(rows, cols, resp.value, resp.grad, want_gradient)
    }

    fn eval_batch(
        &mut self,
        xs: &[EmbeddingMatrix],
        target: Target,
        want_gradient: bool,
    ) -> Result<Vec<ModelOutput>, OracleError> {
        if !self.descriptor.batch {
            return xs.iter().map(|x| self.eval(x, target, want_gradient)).collect();
        }
        let mut outs = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(self.batch_size) {
            let shape = chunk[0].shape();
            if chunk.iter().any(|x| x.shape() != shape) {
                // mixed shapes cannot share one request
                for x in chunk {
                    outs.push(self.eval(x, target, want_gradient)?);
                }
                continue;
            }
            self.check_dim(&chunk[0])?;
            let resp = self.call(|id| Request::EvalBatch {
                id,
                shape: [shape.0, shape.1],
                xs: chunk.iter().map(|x| x.as_slice().to_vec()).collect(),
                target: target.to_wire(),
                grad: want_gradient,
            })?;
            let wire: Vec<WireOutput> = match resp.outputs {
                Some(o) if o.len() == chunk.len() => o,
                _ => return Err(self.poison(OracleError::Protocol("eval_batch reply has wrong output count".into()))),
            };
            for w in wire {
                outs.push(self.output(shape.0, shape.1, Some(w.value), w.grad, want_gradient)?);
            }
        }
        Ok(outs)
    }
}
