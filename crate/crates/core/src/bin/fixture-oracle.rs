//! Line-protocol oracle process for adapter tests.
//!
//! ```text
//! fixture-oracle --params model.json [--fault KIND]
//! fixture-oracle sum|quadratic [--dim D] [--fault KIND]
//! ```
//!
//! Faults: garbage, wrong-version, exit-on-eval, hang-on-eval,
//! garbage-on-eval, error-on-eval.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use wordattr::oracle::fixtures::{QuadraticOracle, SumOracle};
use wordattr::oracle::protocol::{Request, Response};
use wordattr::oracle::server::{handle_line, handshake_response};
use wordattr::{BuiltinOracle, GradientOracle, ModelParams};

#[derive(Clone, Copy, PartialEq)]
enum Fault {
    None,
    Garbage,
    WrongVersion,
    ExitOnEval,
    HangOnEval,
    GarbageOnEval,
    ErrorOnEval,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Ok(match s {
        "garbage" => Fault::Garbage,
        "wrong-version" => Fault::WrongVersion,
        "exit-on-eval" => Fault::ExitOnEval,
        "hang-on-eval" => Fault::HangOnEval,
        "garbage-on-eval" => Fault::GarbageOnEval,
        "error-on-eval" => Fault::ErrorOnEval,
        other => return Err(format!("unknown fault {other:?}")),
    })
}

fn setup() -> Result<(Box<dyn GradientOracle>, Fault), String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut params = None;
    let mut kind = None;
    let mut dim = 16usize;
    let mut fault = Fault::None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let mut value = || it.next().cloned().ok_or_else(|| format!("{a} needs a value"));
        match a.as_str() {
            "--params" => params = Some(value()?),
            "--dim" => dim = value()?.parse().map_err(|e| format!("--dim: {e}"))?,
            "--fault" => fault = parse_fault(&value()?)?,
            "sum" | "quadratic" => kind = Some(a.clone()),
            other => return Err(format!("unexpected argument {other:?}")),
        }
    }
    let oracle: Box<dyn GradientOracle> = match (params, kind.as_deref()) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
            Box::new(BuiltinOracle::new(
                ModelParams::from_json(&text).map_err(|e| e.to_string())?,
            ))
        }
        (None, Some("sum")) => Box::new(SumOracle::new(dim)),
        (None, Some("quadratic")) => Box::new(QuadraticOracle::new(dim)),
        _ => return Err("give exactly one of --params FILE, sum, quadratic".into()),
    };
    Ok((oracle, fault))
}

fn write(out: &mut impl Write, resp: &Response) -> io::Result<()> {
    serde_json::to_writer(&mut *out, resp)?;
    out.write_all(b"\n")?;
    out.flush()
}

fn main() -> ExitCode {
    let (mut oracle, fault) = match setup() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("fixture-oracle: {e}");
            return ExitCode::from(2);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req = serde_json::from_str::<Request>(&line).ok();
        let is_eval = matches!(req, Some(Request::Eval { .. } | Request::EvalBatch { .. }));
        let result = match (&req, fault) {
            (Some(Request::Handshake { .. }), Fault::Garbage) => {
                out.write_all(b"hello, this is not json\n").and_then(|_| out.flush())
            }
            (Some(Request::Handshake { id, .. }), Fault::WrongVersion) => {
                let mut r = handshake_response(oracle.as_ref(), *id);
                r.version = Some(99);
                write(&mut out, &r)
            }
            (_, Fault::ExitOnEval) if is_eval => return ExitCode::from(3),
            (_, Fault::HangOnEval) if is_eval => loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            },
            (_, Fault::GarbageOnEval) if is_eval => out.write_all(b"{\"id\":\n").and_then(|_| out.flush()),
            (Some(r), Fault::ErrorOnEval) if is_eval => {
                write(&mut out, &Response::error(Some(r.id()), "injected failure"))
            }
            _ => write(&mut out, &handle_line(oracle.as_mut(), &line)),
        };
        if result.is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
