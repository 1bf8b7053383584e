//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use wordattr::attribution::{
    deeplift, gradient_shap, integrated_gradients, make_baseline, sequential_ig, AttributionError, GradShapConfig,
};
use wordattr::model::{Activation, Head};
use wordattr::oracle::{Embedded, ExternalConfig, ExternalOracle};
use wordattr::{
    ArchConfig, AttributionVector, BaselineStrategy, EmbeddingMatrix, GradientOracle, ModelParams, QuadratureKind,
    QuadratureRule, Target, Tokenizer, Vocab,
};

pub const LINEAR_TEXTS: [&str; 3] = ["we can do this", "unmotivated people never win", "go"];

pub const KINDS: [QuadratureKind; 3] = [
    QuadratureKind::EqualWeights,
    QuadratureKind::RiemannLeft,
    QuadratureKind::Trapezoid,
];

pub fn fixture_oracle_exe() -> &'static str {
    env!("CARGO_BIN_EXE_fixture-oracle")
}

pub fn spawn_fixture(args: &[&str], timeout_ms: u64) -> Result<ExternalOracle, wordattr::OracleError> {
    let mut command = vec![fixture_oracle_exe().to_string()];
    command.extend(args.iter().map(|s| s.to_string()));
    ExternalOracle::spawn(&ExternalConfig {
        command,
        timeout_ms,
        ..ExternalConfig::default()
    })
}

/// Serves `params` from a fixture child process.
pub fn spawn_params(params: &ModelParams, dir: &Path) -> ExternalOracle {
    let path = dir.join("params.json");
    params.save(&path).unwrap();
    spawn_fixture(&["--params", path.to_str().unwrap()], 30_000).unwrap()
}

/// Identity activations everywhere, so `F` is affine in the input.
pub fn affine_params(seed: u64) -> ModelParams {
    let arch = ArchConfig {
        dim: 6,
        hidden: vec![5],
        activation: Activation::Identity,
        head: Head::Scalar,
        ..ArchConfig::default()
    };
    let vocab = Vocab::build(&Tokenizer::new(arch.tokenizer), LINEAR_TEXTS.iter().copied());
    let mut p = ModelParams::init(arch, vocab, seed).unwrap();
    for (k, b) in p.layers[0].bias.iter_mut().enumerate() {
        *b = 0.1 * (k as f64 + 1.0);
    }
    p.head.bias[0] = -0.3;
    p
}

/// Gradient of the affine model, from the weights: `head * W` spread
/// evenly over the pooled rows.
pub fn affine_slope(p: &ModelParams, rows: usize) -> EmbeddingMatrix {
    let mut v = p.head.weight.clone();
    for layer in p.layers.iter().rev() {
        let mut u = vec![0.0; layer.inp];
        for (o, &vo) in v.iter().enumerate() {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui += vo * layer.weight[o * layer.inp + i];
            }
        }
        v = u;
    }
    let row: Vec<f64> = v.iter().map(|w| w / rows as f64).collect();
    EmbeddingMatrix::from_rows(&vec![row; rows]).unwrap()
}

pub struct LinearCase {
    pub label: String,
    pub input: Embedded,
    pub x0: EmbeddingMatrix,
    pub result: Result<AttributionVector, AttributionError>,
}

/// Every method, baseline and quadrature setting on [`LINEAR_TEXTS`].
pub fn run_linear_suite(oracle: &mut dyn GradientOracle) -> Vec<LinearCase> {
    let mut out = Vec::new();
    let refs = oracle.descriptor().references.clone();
    for text in LINEAR_TEXTS {
        let input = oracle.embed(text).unwrap();
        let (x, tokens) = (&input.x, &input.tokens);
        for b in BaselineStrategy::ALL {
            let x0 = make_baseline(x, tokens, b, &refs).unwrap();
            let mut push = |label: String, result| {
                out.push(LinearCase {
                    label,
                    input: input.clone(),
                    x0: x0.clone(),
                    result,
                })
            };
            for kind in KINDS {
                for n in [1, 2, 5, 50, 300] {
                    let rule = QuadratureRule::new(kind, n);
                    let r = integrated_gradients(oracle, x, &x0, rule, Target::Scalar);
                    push(format!("{text:?} ig {} {} n={n}", b.name(), kind.name()), r);
                }
                for n in [1, 7, 300] {
                    let rule = QuadratureRule::new(kind, n);
                    let r = sequential_ig(oracle, x, tokens, rule, Target::Scalar, b);
                    push(format!("{text:?} sig {} {} n={n}", b.name(), kind.name()), r);
                }
            }
            let cfg = GradShapConfig {
                n_samples: 16,
                noise_stdev: Some(0.0),
                seed: 5,
            };
            let r = gradient_shap(oracle, x, tokens, b, cfg, Target::Scalar);
            push(format!("{text:?} gradshap {}", b.name()), r);
            let r = deeplift(oracle, x, tokens, b, Target::Scalar);
            push(format!("{text:?} deeplift {}", b.name()), r);
        }
    }
    out
}

/// Checks each successful case against `slope * (x - x0)` and
/// completeness. Returns the number of cases checked.
pub fn check_linear(params: &ModelParams, cases: &[LinearCase], tol: f64) -> Result<usize, String> {
    let mut checked = 0;
    for c in cases {
        let a = match &c.result {
            Ok(a) => a,
            Err(e) => return Err(format!("{}: {e}", c.label)),
        };
        let slope = affine_slope(params, c.input.x.rows());
        let d = c.input.x.sub(&c.x0).unwrap();
        for (k, ((s, d), got)) in slope
            .as_slice()
            .iter()
            .zip(d.as_slice())
            .zip(a.entries.as_slice())
            .enumerate()
        {
            let want = s * d;
            if (want - got).abs() > tol {
                return Err(format!("{}: entry {k} is {got}, expected {want}", c.label));
            }
        }
        let r = wordattr::attribution::completeness_residual(a);
        if r.abs() > tol {
            return Err(format!("{}: completeness residual {r:e}", c.label));
        }
        checked += 1;
    }
    Ok(checked)
}

pub const GOLDEN_TEXTS: [(&str, f64); 3] = [
    ("We should not give up: together, people can achieve it!", 0.8),
    ("They don't <really> help & never try at home.", -0.5),
    ("unmotivated people   lose", 0.05),
];

/// Fixed token scores derived from position, so the report depends only on
/// the rendering code.
pub fn golden_scores(tokens: &wordattr::TokenizedText, salt: usize) -> Vec<f64> {
    tokens
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.is_special() {
                0.0
            } else {
                (((i + salt) * 37 % 11) as f64 - 4.0) / 8.0
            }
        })
        .collect()
}

pub fn golden_report() -> String {
    use wordattr::render::{
        html_report, link_negations, merge_scores, normalize_for_display, zero_incoherent_signs, Linking, ReportEntry,
    };
    let tok = Tokenizer::default();
    let rendered: Vec<_> = GOLDEN_TEXTS
        .iter()
        .enumerate()
        .map(|(k, (text, f_x))| {
            let t = tok.tokenize(text).unwrap();
            let wa = merge_scores(&t, &golden_scores(&t, k), *f_x).unwrap();
            let wa = zero_incoherent_signs(&link_negations(&wa, Linking::Heuristic));
            normalize_for_display(&wa, 0.5)
        })
        .collect();
    let ids = ["s1", "s2", "s3"];
    let entries: Vec<ReportEntry<'_>> = ids
        .iter()
        .zip(&rendered)
        .map(|(id, r)| ReportEntry { id, rendered: r })
        .collect();
    html_report("Golden fixture", &entries)
}

pub const GOLDEN_REPORT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/report.html");
