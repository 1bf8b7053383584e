//! Baseline construction and the path attribution methods: Integrated
//! Gradients, Sequential IG, GradientSHAP and DeepLIFT (rescale rule).
//!
//! Every method produces per-entry attributions over the `L x d` embedding
//! matrix; a token's score is the sum of its row, which keeps completeness
//! at token granularity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ShapeError;
use crate::matrix::EmbeddingMatrix;
use crate::model::{ModelError, Target};
use crate::oracle::{Embedded, GradientOracle, OracleError, ReferenceEmbeddings};
use crate::tokenize::TokenizedText;

mod deeplift;

pub use deeplift::{deeplift, deeplift_rescale, RESCALE_EPSILON};

/// Points per oracle batch when walking a path.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("the oracle exposes no MASK embedding")]
    MaskUnavailable,
    #[error("the oracle exposes no PAD embedding")]
    PadUnavailable,
    #[error("the oracle exposes no embedding-table mean")]
    MeanUnavailable,
    #[error("non-finite gradient entry at ({row}, {col})")]
    NonFiniteGradient { row: usize, col: usize },
    #[error("DeepLIFT needs layer internals; it only runs on the built-in model")]
    UnsupportedOracle,
    #[error("invalid attribution config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl From<ModelError> for AttributionError {
    fn from(e: ModelError) -> Self {
        AttributionError::Oracle(OracleError::Model(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineStrategy {
    Zero,
    Mask,
    Padding,
    Mean,
}

impl BaselineStrategy {
    pub const ALL: [BaselineStrategy; 4] = [Self::Zero, Self::Mask, Self::Padding, Self::Mean];

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Mask => "mask",
            Self::Padding => "padding",
            Self::Mean => "mean",
        }
    }

    /// The row that replaces every non-special token.
    pub fn reference_row(self, refs: &ReferenceEmbeddings, dim: usize) -> Result<Vec<f64>, AttributionError> {
        let row = match self {
            Self::Zero => return Ok(vec![0.0; dim]),
            Self::Mask => refs.mask.clone().ok_or(AttributionError::MaskUnavailable)?,
            Self::Padding => refs.pad.clone().ok_or(AttributionError::PadUnavailable)?,
            Self::Mean => refs.mean.clone().ok_or(AttributionError::MeanUnavailable)?,
        };
        if row.len() != dim {
            return Err(ShapeError::Length {
                what: "reference embedding",
                expected: dim,
                got: row.len(),
            }
            .into());
        }
        Ok(row)
    }
}

/// Builds `x0`: special-token rows copied from `x`, every other row set to
/// the strategy's reference row.
pub fn make_baseline(
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    strategy: BaselineStrategy,
    refs: &ReferenceEmbeddings,
) -> Result<EmbeddingMatrix, AttributionError> {
    if tokens.len() != x.rows() {
        return Err(ShapeError::Length {
            what: "token count",
            expected: x.rows(),
            got: tokens.len(),
        }
        .into());
    }
    let reference = strategy.reference_row(refs, x.cols())?;
    let mut x0 = x.clone();
    for i in tokens.non_special() {
        x0.set_row(i, &reference);
    }
    Ok(x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    /// `k = 0..=N`, equal weights `1/(N+1)`.
    #[serde(rename = "paper-eq6", alias = "equal-weights")]
    EqualWeights,
    /// `k = 0..N`, weight `1/N`.
    RiemannLeft,
    /// `k = 0..=N`, weight `1/N`, endpoints halved.
    Trapezoid,
}

impl QuadratureKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::EqualWeights => "paper-eq6",
            Self::RiemannLeft => "riemann-left",
            Self::Trapezoid => "trapezoid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub steps: usize,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self {
            kind: QuadratureKind::EqualWeights,
            steps: 300,
        }
    }
}

impl QuadratureRule {
    pub fn new(kind: QuadratureKind, steps: usize) -> Self {
        Self { kind, steps }
    }

    /// `(alpha_k, w_k)` such that `integral_0^1 g(a) da ~ sum_k w_k g(alpha_k)`.
    ///
    /// The grid points sit at `alpha_k = k / N`, i.e. `x0 + k * (x - x0) / N`.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>, AttributionError> {
        let n = self.steps;
        if n == 0 {
            return Err(AttributionError::InvalidConfig(
                "quadrature needs at least one step".into(),
            ));
        }
        let nf = n as f64;
        let alpha = |k: usize| if k == n { 1.0 } else { k as f64 / nf };
        Ok(match self.kind {
            QuadratureKind::EqualWeights => {
                let w = 1.0 / (nf + 1.0);
                (0..=n).map(|k| (alpha(k), w)).collect()
            }
            QuadratureKind::RiemannLeft => (0..n).map(|k| (alpha(k), 1.0 / nf)).collect(),
            QuadratureKind::Trapezoid => (0..=n)
                .map(|k| {
                    let w = if k == 0 || k == n { 0.5 / nf } else { 1.0 / nf };
                    (alpha(k), w)
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ig,
    Sig,
    GradShap,
    DeepLift,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ig => "ig",
            Method::Sig => "sig",
            Method::GradShap => "gradshap",
            Method::DeepLift => "deeplift",
        }
    }
}

/// Settings recorded alongside each attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSnapshot {
    pub method: Method,
    pub baseline: Option<BaselineStrategy>,
    pub quadrature: Option<QuadratureRule>,
    pub n_samples: Option<usize>,
    pub noise_stdev: Option<f64>,
    pub seed: Option<u64>,
}

impl AttributionSnapshot {
    fn new(method: Method) -> Self {
        Self {
            method,
            baseline: None,
            quadrature: None,
            n_samples: None,
            noise_stdev: None,
            seed: None,
        }
    }
}

/// Per-token attribution scores with the endpoint values of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    /// One score per token, the sum of that token's per-entry attributions.
    pub scores: Vec<f64>,
    /// Per-entry attributions, same shape as the input.
    pub entries: EmbeddingMatrix,
    pub f_x: f64,
    pub f_x0: f64,
    pub config: AttributionSnapshot,
}

impl AttributionVector {
    fn from_entries(entries: EmbeddingMatrix, f_x: f64, f_x0: f64, config: AttributionSnapshot) -> Self {
        Self {
            scores: entries.row_sums(),
            entries,
            f_x,
            f_x0,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// `sum_i a_i - (F(x) - F(x0))`, signed.
pub fn completeness_residual(a: &AttributionVector) -> f64 {
    a.total() - (a.f_x - a.f_x0)
}

fn check_gradient(g: &EmbeddingMatrix) -> Result<(), AttributionError> {
    if let Some(k) = g.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(AttributionError::NonFiniteGradient {
            row: k / g.cols().max(1),
            col: k % g.cols().max(1),
        });
    }
    Ok(())
}

/// Walks the straight path from `x0` to `x`, returning the quadrature-weighted
/// gradient sum and the values observed at `alpha = 0` and `alpha = 1`
/// (when those nodes are part of the rule).
struct PathSum {
    weighted: EmbeddingMatrix,
    at_start: Option<f64>,
    at_end: Option<f64>,
}

fn path_sum<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    x0: &EmbeddingMatrix,
    nodes: &[(f64, f64)],
    target: Target,
    rows: Option<usize>,
) -> Result<PathSum, AttributionError> {
    let mut weighted = EmbeddingMatrix::zeros(x.rows(), x.cols());
    let mut at_start = None;
    let mut at_end = None;
    for chunk in nodes.chunks(EVAL_CHUNK) {
        let points: Vec<EmbeddingMatrix> = chunk.iter().map(|&(a, _)| x.lerp_from(x0, a)).collect();
        let outs = oracle.eval_batch(&points, target, true)?;
        if outs.len() != points.len() {
            return Err(OracleError::Protocol("oracle returned the wrong number of outputs".into()).into());
        }
        for (&(alpha, w), out) in chunk.iter().zip(outs) {
            if alpha == 0.0 {
                at_start = Some(out.value);
            }
            if alpha == 1.0 {
                at_end = Some(out.value);
            }
            let g = out
                .gradient
                .ok_or_else(|| OracleError::Protocol("gradient missing from oracle output".into()))?;
            weighted.same_shape(&g)?;
            check_gradient(&g)?;
            match rows {
                Some(r) => {
                    for (acc, gv) in weighted.row_mut(r).iter_mut().zip(g.row(r)) {
                        *acc += w * gv;
                    }
                }
                None => {
                    for (acc, gv) in weighted.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *acc += w * gv;
                    }
                }
            }
        }
    }
    Ok(PathSum {
        weighted,
        at_start,
        at_end,
    })
}

/// Integrated Gradients along the straight path from `x0` to `x`.
pub fn integrated_gradients<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    x0: &EmbeddingMatrix,
    rule: QuadratureRule,
    target: Target,
) -> Result<AttributionVector, AttributionError> {
    x.same_shape(x0)?;
    let mut config = AttributionSnapshot::new(Method::Ig);
    config.quadrature = Some(rule);
    let nodes = rule.nodes()?;
    if x == x0 {
        let f = oracle.value(x, target)?;
        return Ok(AttributionVector::from_entries(
            EmbeddingMatrix::zeros(x.rows(), x.cols()),
            f,
            f,
            config,
        ));
    }
    let sum = path_sum(oracle, x, x0, &nodes, target, None)?;
    let delta = x.sub(x0)?;
    let mut entries = sum.weighted;
    for (e, d) in entries.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *e *= d;
    }
    let f_x0 = match sum.at_start {
        Some(v) => v,
        None => oracle.value(x0, target)?,
    };
    let f_x = match sum.at_end {
        Some(v) => v,
        None => oracle.value(x, target)?,
    };
    Ok(AttributionVector::from_entries(entries, f_x, f_x0, config))
}

/// Sequential IG: each non-special token is integrated on its own path,
/// from the reference row to its actual embedding, with every other row
/// held at its input value.
///
/// `f_x0` is the value at the baseline where all non-special rows are
/// replaced at once; the method does not satisfy completeness against it.
pub fn sequential_ig<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    rule: QuadratureRule,
    target: Target,
    reference: BaselineStrategy,
) -> Result<AttributionVector, AttributionError> {
    let refs = oracle.descriptor().references.clone();
    let full_baseline = make_baseline(x, tokens, reference, &refs)?;
    let reference_row = reference.reference_row(&refs, x.cols())?;
    let nodes = rule.nodes()?;
    let mut config = AttributionSnapshot::new(Method::Sig);
    config.quadrature = Some(rule);
    config.baseline = Some(reference);

    let mut entries = EmbeddingMatrix::zeros(x.rows(), x.cols());
    for i in tokens.non_special() {
        if x.row(i) == reference_row.as_slice() {
            continue;
        }
        let mut x0 = x.clone();
        x0.set_row(i, &reference_row);
        let sum = path_sum(oracle, x, &x0, &nodes, target, Some(i))?;
        for ((e, w), (xv, rv)) in entries
            .row_mut(i)
            .iter_mut()
            .zip(sum.weighted.row(i))
            .zip(x.row(i).iter().zip(&reference_row))
        {
            *e = w * (xv - rv);
        }
    }
    let f_x = oracle.value(x, target)?;
    let f_x0 = oracle.value(&full_baseline, target)?;
    Ok(AttributionVector::from_entries(entries, f_x, f_x0, config))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradShapConfig {
    pub n_samples: usize,
    /// Standard deviation of the path noise. `None` means
    /// `0.09 * rms(x - x0)`.
    pub noise_stdev: Option<f64>,
    pub seed: u64,
}

impl Default for GradShapConfig {
    fn default() -> Self {
        Self {
            n_samples: 50,
            noise_stdev: None,
            seed: 0,
        }
    }
}

pub const DEFAULT_NOISE_FACTOR: f64 = 0.09;

/// GradientSHAP: averages `grad F(x0 + alpha (x - x0) + eps) * (x - x0)`
/// over random `alpha ~ U(0,1)` and Gaussian `eps` on non-special rows.
pub fn gradient_shap<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    strategy: BaselineStrategy,
    cfg: GradShapConfig,
    target: Target,
) -> Result<AttributionVector, AttributionError> {
    if cfg.n_samples == 0 {
        return Err(AttributionError::InvalidConfig("n_samples must be at least 1".into()));
    }
    if cfg.noise_stdev.is_some_and(|s| !(s >= 0.0)) {
        return Err(AttributionError::InvalidConfig(
            "noise_stdev must be non-negative".into(),
        ));
    }
    let refs = oracle.descriptor().references.clone();
    let x0 = make_baseline(x, tokens, strategy, &refs)?;
    let delta = x.sub(&x0)?;
    let sigma = cfg.noise_stdev.unwrap_or(DEFAULT_NOISE_FACTOR * delta.rms());
    let mut config = AttributionSnapshot::new(Method::GradShap);
    config.baseline = Some(strategy);
    config.n_samples = Some(cfg.n_samples);
    config.noise_stdev = Some(sigma);
    config.seed = Some(cfg.seed);

    let interior: Vec<usize> = tokens.non_special().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let alpha: f64 = rng.random();
        let mut p = x.lerp_from(&x0, alpha);
        for &i in &interior {
            for v in p.row_mut(i) {
                let z: f64 = StandardNormal.sample(&mut rng);
                if sigma > 0.0 {
                    *v += sigma * z;
                }
            }
        }
        points.push(p);
    }
    let mut acc = EmbeddingMatrix::zeros(x.rows(), x.cols());
    for chunk in points.chunks(EVAL_CHUNK) {
        for out in oracle.eval_batch(chunk, target, true)? {
            let g = out
                .gradient
                .ok_or_else(|| OracleError::Protocol("gradient missing from oracle output".into()))?;
            acc.same_shape(&g)?;
            check_gradient(&g)?;
            for (a, gv) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += gv;
            }
        }
    }
    let n = cfg.n_samples as f64;
    for (a, d) in acc.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *a = *a / n * d;
    }
    let f_x = oracle.value(x, target)?;
    let f_x0 = oracle.value(&x0, target)?;
    Ok(AttributionVector::from_entries(acc, f_x, f_x0, config))
}

/// Everything needed to run one method on one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub method: Method,
    pub baseline: BaselineStrategy,
    pub quadrature: QuadratureRule,
    pub gradshap: GradShapConfig,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            method: Method::Ig,
            baseline: BaselineStrategy::Zero,
            quadrature: QuadratureRule::default(),
            gradshap: GradShapConfig::default(),
        }
    }
}

/// Runs the configured method on an embedded text.
pub fn attribute<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    input: &Embedded,
    target: Target,
    cfg: &AttributionConfig,
) -> Result<AttributionVector, AttributionError> {
    let x = &input.x;
    let tokens = &input.tokens;
    match cfg.method {
        Method::Ig => {
            let refs = oracle.descriptor().references.clone();
            let x0 = make_baseline(x, tokens, cfg.baseline, &refs)?;
            let mut a = integrated_gradients(oracle, x, &x0, cfg.quadrature, target)?;
            a.config.baseline = Some(cfg.baseline);
            Ok(a)
        }
        Method::Sig => sequential_ig(oracle, x, tokens, cfg.quadrature, target, cfg.baseline),
        Method::GradShap => gradient_shap(oracle, x, tokens, cfg.baseline, cfg.gradshap, target),
        Method::DeepLift => deeplift(oracle, x, tokens, cfg.baseline, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, ArchConfig, Dense, Head, ModelParams, Pooling};
    use crate::oracle::fixtures::{QuadraticOracle, SumOracle};
    use crate::oracle::{BuiltinOracle, CountingOracle};
    use crate::tokenize::{Tokenizer, Vocab};

    fn refs_2d() -> ReferenceEmbeddings {
        ReferenceEmbeddings {
            mask: Some(vec![0.25, -0.5]),
            pad: Some(vec![0.0, 1.0]),
            mean: Some(vec![2.0, 2.0]),
        }
    }

    fn sentence(text: &str, dim: usize) -> Embedded {
        let mut o = SumOracle::new(dim);
        o.embed(text).unwrap()
    }

    #[test]
    fn baseline_keeps_specials() {
        let e = sentence("hello big world", 2);
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Zero, &refs_2d()).unwrap();
        let last = e.x.rows() - 1;
        assert_eq!(x0.row(0), e.x.row(0));
        assert_eq!(x0.row(last), e.x.row(last));
        for i in 1..last {
            assert_eq!(x0.row(i), &[0.0, 0.0]);
        }
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Mean, &refs_2d()).unwrap();
        assert_eq!(x0.row(1), &[2.0, 2.0]);
    }

    #[test]
    fn mean_of_two_row_table() {
        let arch = ArchConfig {
            dim: 2,
            hidden: vec![],
            ..ArchConfig::default()
        };
        let vocab = Vocab::from(vec!["a".to_string(), "b".to_string()]);
        let table = EmbeddingMatrix::from_rows(&[[1.0, 1.0], [3.0, 3.0]]).unwrap();
        let p = ModelParams::from_parts(arch, vocab, table, vec![], Dense::zeros(2, 1)).unwrap();
        assert_eq!(p.mean_embedding(), vec![2.0, 2.0]);
    }

    #[test]
    fn mask_unavailable() {
        let e = sentence("hello", 2);
        let err = make_baseline(&e.x, &e.tokens, BaselineStrategy::Mask, &ReferenceEmbeddings::default());
        assert!(matches!(err, Err(AttributionError::MaskUnavailable)));
        let mut o = SumOracle::new(2);
        let err = sequential_ig(
            &mut o,
            &e.x,
            &e.tokens,
            QuadratureRule::default(),
            Target::Scalar,
            BaselineStrategy::Mask,
        );
        assert!(matches!(err, Err(AttributionError::MaskUnavailable)));
    }

    #[test]
    fn quadrature_nodes() {
        let n = QuadratureRule::new(QuadratureKind::EqualWeights, 4).nodes().unwrap();
        assert_eq!(n.len(), 5);
        let n = QuadratureRule::new(QuadratureKind::RiemannLeft, 4).nodes().unwrap();
        assert_eq!(n.len(), 4);
        assert_eq!(n.last().unwrap().0, 0.75);
        let n = QuadratureRule::new(QuadratureKind::Trapezoid, 4).nodes().unwrap();
        assert_eq!(n[0].1, 0.125);
        assert_eq!(n[4], (1.0, 0.125));
        for k in [
            QuadratureKind::EqualWeights,
            QuadratureKind::RiemannLeft,
            QuadratureKind::Trapezoid,
        ] {
            let w: f64 = QuadratureRule::new(k, 7).nodes().unwrap().iter().map(|p| p.1).sum();
            assert!((w - 1.0).abs() < 1e-15);
        }
        assert!(QuadratureRule::new(QuadratureKind::Trapezoid, 0).nodes().is_err());
    }

    #[test]
    fn zero_path_short_circuits() {
        let e = sentence("same", 3);
        let mut o = CountingOracle::new(SumOracle::new(3));
        let a = integrated_gradients(&mut o, &e.x, &e.x, QuadratureRule::default(), Target::Scalar).unwrap();
        assert!(a.scores.iter().all(|&s| s == 0.0));
        assert_eq!(a.f_x, a.f_x0);
        assert_eq!(o.gradient_evaluations, 0);
    }

    #[test]
    fn sum_model_attribution_is_delta() {
        let e = sentence("one two three", 4);
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Zero, &ReferenceEmbeddings::default()).unwrap();
        for kind in [
            QuadratureKind::EqualWeights,
            QuadratureKind::RiemannLeft,
            QuadratureKind::Trapezoid,
        ] {
            for n in [1, 2, 17] {
                let mut o = SumOracle::new(4);
                let a = integrated_gradients(&mut o, &e.x, &x0, QuadratureRule::new(kind, n), Target::Scalar).unwrap();
                let delta = e.x.sub(&x0).unwrap();
                assert!(a.entries.max_abs_diff(&delta) < 1e-14, "{kind:?} N={n}");
                assert!(completeness_residual(&a).abs() < 1e-12);
                assert_eq!(a.scores[0], 0.0);
                assert_eq!(*a.scores.last().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn quadratic_trapezoid_closed_form() {
        let e = sentence("alpha beta", 3);
        let x0 = EmbeddingMatrix::zeros(e.x.rows(), 3);
        let mut o = QuadraticOracle::new(3);
        let a = integrated_gradients(
            &mut o,
            &e.x,
            &x0,
            QuadratureRule::new(QuadratureKind::Trapezoid, 300),
            Target::Scalar,
        )
        .unwrap();
        for (got, xv) in a.entries.as_slice().iter().zip(e.x.as_slice()) {
            let want = xv * xv;
            assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-300));
        }
        let rel = completeness_residual(&a).abs() / (a.f_x - a.f_x0).abs();
        assert!(rel <= 1e-5);
    }

    #[test]
    fn sig_single_token_equals_masked_ig() {
        let e = sentence("solo", 2);
        let o = SumOracle::new(2).with_references(refs_2d());
        let mut q = QuadraticOracle::new(2).with_references(refs_2d());
        let rule = QuadratureRule::new(QuadratureKind::Trapezoid, 25);
        let s = sequential_ig(&mut q, &e.x, &e.tokens, rule, Target::Scalar, BaselineStrategy::Mask).unwrap();
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Mask, &o.descriptor().references).unwrap();
        let i = integrated_gradients(&mut q, &e.x, &x0, rule, Target::Scalar).unwrap();
        assert!(s.entries.max_abs_diff(&i.entries) <= 1e-12);
        assert_eq!(s.f_x0, i.f_x0);
    }

    #[test]
    fn sig_zero_path_row_scores_zero() {
        let mut e = sentence("ab cd", 2);
        e.x.set_row(1, &[0.25, -0.5]);
        let mut q = QuadraticOracle::new(2).with_references(refs_2d());
        let s = sequential_ig(
            &mut q,
            &e.x,
            &e.tokens,
            QuadratureRule::new(QuadratureKind::Trapezoid, 10),
            Target::Scalar,
            BaselineStrategy::Mask,
        )
        .unwrap();
        assert_eq!(s.scores[1], 0.0);
        assert_ne!(s.scores[2], 0.0);
    }

    #[test]
    fn sig_cost_scales_with_token_count() {
        let rule = QuadratureRule::new(QuadratureKind::Trapezoid, 20);
        let mut costs = Vec::new();
        for text in ["a", "a b c d", "a b c d e f g h"] {
            let e = sentence(text, 2);
            let mut o = CountingOracle::new(QuadraticOracle::new(2).with_references(refs_2d()));
            sequential_ig(&mut o, &e.x, &e.tokens, rule, Target::Scalar, BaselineStrategy::Mask).unwrap();
            let mut ig = CountingOracle::new(QuadraticOracle::new(2).with_references(refs_2d()));
            let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Mask, &refs_2d()).unwrap();
            integrated_gradients(&mut ig, &e.x, &x0, rule, Target::Scalar).unwrap();
            costs.push((o.gradient_evaluations, ig.gradient_evaluations));
        }
        for (words, (sig, ig)) in [1usize, 4, 8].iter().zip(&costs) {
            assert_eq!(*sig, words * ig);
        }
    }

    #[test]
    fn gradshap_linear_noise_free_and_seeded() {
        let e = sentence("red green blue", 3);
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Zero, &ReferenceEmbeddings::default()).unwrap();
        let delta = e.x.sub(&x0).unwrap();
        for n in [1, 7, 40] {
            let cfg = GradShapConfig {
                n_samples: n,
                noise_stdev: Some(0.0),
                seed: 3,
            };
            let a = gradient_shap(
                &mut SumOracle::new(3),
                &e.x,
                &e.tokens,
                BaselineStrategy::Zero,
                cfg,
                Target::Scalar,
            )
            .unwrap();
            assert!(a.entries.max_abs_diff(&delta) < 1e-14);
        }
        let cfg = GradShapConfig {
            n_samples: 20,
            noise_stdev: None,
            seed: 9,
        };
        let mut q = QuadraticOracle::new(3);
        let a = gradient_shap(&mut q, &e.x, &e.tokens, BaselineStrategy::Zero, cfg, Target::Scalar).unwrap();
        let b = gradient_shap(&mut q, &e.x, &e.tokens, BaselineStrategy::Zero, cfg, Target::Scalar).unwrap();
        assert_eq!(a, b);
        assert!(completeness_residual(&a).abs() > 0.0);
    }

    #[test]
    fn gradshap_converges_to_ig_without_noise() {
        // quadratic model: exact IG gives x^2 per entry; the estimator's
        // standard error shrinks like 1/sqrt(n)
        let e = sentence("converge here", 2);
        let x0 = make_baseline(&e.x, &e.tokens, BaselineStrategy::Zero, &ReferenceEmbeddings::default()).unwrap();
        let n = 20_000;
        let cfg = GradShapConfig {
            n_samples: n,
            noise_stdev: Some(0.0),
            seed: 1,
        };
        let a = gradient_shap(
            &mut QuadraticOracle::new(2),
            &e.x,
            &e.tokens,
            BaselineStrategy::Zero,
            cfg,
            Target::Scalar,
        )
        .unwrap();
        for (i, (&got, (&xv, &bv))) in a
            .entries
            .as_slice()
            .iter()
            .zip(e.x.as_slice().iter().zip(x0.as_slice()))
            .enumerate()
        {
            let d = xv - bv;
            // per sample: 2 (b + alpha d) d with alpha ~ U(0,1): sd = 2 d^2 / sqrt(12)
            let sd = 2.0 * d * d / 12f64.sqrt();
            let want = (bv + 0.5 * d) * 2.0 * d;
            assert!((got - want).abs() <= 4.0 * sd / (n as f64).sqrt() + 1e-15, "entry {i}");
        }
    }

    #[test]
    fn rejects_bad_gradshap_config() {
        let e = sentence("x", 2);
        let cfg = GradShapConfig {
            n_samples: 0,
            ..GradShapConfig::default()
        };
        assert!(gradient_shap(
            &mut SumOracle::new(2),
            &e.x,
            &e.tokens,
            BaselineStrategy::Zero,
            cfg,
            Target::Scalar
        )
        .is_err());
    }

    #[test]
    fn scaling_model_scales_attributions() {
        let vocab = Vocab::build(&Tokenizer::default(), ["a b c"]);
        let p = ModelParams::init(ArchConfig::default(), vocab, 4).unwrap();
        let mut q = p.clone();
        let c = 2.5;
        q.head.weight.iter_mut().for_each(|w| *w *= c);
        q.head.bias.iter_mut().for_each(|w| *w *= c);
        let mut op = BuiltinOracle::new(p);
        let mut oq = BuiltinOracle::new(q);
        let e = op.embed("a b c").unwrap();
        let cfg = AttributionConfig {
            quadrature: QuadratureRule::new(QuadratureKind::Trapezoid, 50),
            ..AttributionConfig::default()
        };
        let a = attribute(&mut op, &e, Target::Scalar, &cfg).unwrap();
        let b = attribute(&mut oq, &e, Target::Scalar, &cfg).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((c * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn nonfinite_gradient_reported() {
        let arch = ArchConfig {
            dim: 2,
            hidden: vec![],
            activation: Activation::Identity,
            pooling: Pooling::MeanMasked,
            head: Head::Scalar,
            ..ArchConfig::default()
        };
        let vocab = Vocab::default();
        let emb = EmbeddingMatrix::zeros(vocab.len(), 2);
        let head = Dense {
            inp: 2,
            out: 1,
            weight: vec![f64::NAN, 1.0],
            bias: vec![0.0],
        };
        let p = ModelParams::from_parts(arch, vocab, emb, vec![], head).unwrap();
        let mut o = BuiltinOracle::new(p);
        let x = EmbeddingMatrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let x0 = EmbeddingMatrix::zeros(1, 2);
        let err = integrated_gradients(&mut o, &x, &x0, QuadratureRule::default(), Target::Scalar);
        assert!(matches!(
            err,
            Err(AttributionError::NonFiniteGradient { row: 0, col: 0 })
        ));
    }
}
