//! Comprehensiveness, sufficiency and approximation error.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionError, AttributionVector, BaselineStrategy};
use crate::error::ShapeError;
use crate::matrix::EmbeddingMatrix;
use crate::model::Target;
use crate::oracle::{GradientOracle, OracleError};
use crate::tokenize::TokenizedText;

mod sweep;

pub use sweep::{
    curves, summarize, sweep, write_rows_csv, write_summary_csv, FaithfulnessCurve, SummaryRow, SweepConfig,
    SweepDocument, SweepFailure, SweepResult, SweepRow,
};

#[derive(Debug, Error)]
pub enum FaithfulnessError {
    #[error("F(x) equals F(x0); approximation error is undefined")]
    DegenerateEndpoints,
    #[error("invalid fraction grid: {0}")]
    InvalidGrid(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unit of selection for the top-f fraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Token,
    Word,
}

/// How removed units are taken out of the input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Removal {
    /// Drop the rows and evaluate the shorter sequence.
    #[default]
    Delete,
    /// Replace the rows with the MASK embedding.
    Mask,
}

/// Ordered fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FractionGrid(Vec<f64>);

impl FractionGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, FaithfulnessError> {
        if values.is_empty() {
            return Err(FaithfulnessError::InvalidGrid("empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(FaithfulnessError::InvalidGrid(format!("{v} is outside [0, 1]")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FaithfulnessError::InvalidGrid(
                "values must be strictly increasing".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for FractionGrid {
    /// `{0, 0.05, 0.1, ..., 0.5, 1}`.
    fn default() -> Self {
        let mut v = vec![0.0];
        v.extend((1..=10).map(|k| k as f64 * 0.05));
        v.push(1.0);
        Self(v)
    }
}

impl TryFrom<Vec<f64>> for FractionGrid {
    type Error = FaithfulnessError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<FractionGrid> for Vec<f64> {
    fn from(g: FractionGrid) -> Self {
        g.0
    }
}

/// Removable units (each a list of token indices) in sequence order.
pub fn units(tokens: &TokenizedText, level: Level) -> Vec<Vec<usize>> {
    match level {
        Level::Token => tokens.non_special().map(|i| vec![i]).collect(),
        Level::Word => tokens.words().into_iter().map(|w| w.tokens).collect(),
    }
}

/// `ceil(f * m)`, guarded against products like `0.1 * 30 = 3.0000000000000004`.
pub fn unit_count(f: f64, m: usize) -> usize {
    if f <= 0.0 {
        return 0;
    }
    ((f * m as f64 - 1e-9).ceil() as usize).min(m)
}

/// Token indices of the `ceil(f * M)` units with the largest `|score|`
/// (ties go to the earlier unit), sorted ascending. Specials are never
/// selected. A word's score is the sum of its tokens' scores.
///
/// # Panics
/// If `f` is outside `[0, 1]` or `scores` and `tokens` differ in length.
pub fn select_top_fraction(scores: &[f64], tokens: &TokenizedText, f: f64, level: Level) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&f), "fraction {f} outside [0, 1]");
    assert_eq!(scores.len(), tokens.len(), "one score per token");
    let units = units(tokens, level);
    let k = unit_count(f, units.len());
    let mut ranked: Vec<(usize, f64)> = units
        .iter()
        .enumerate()
        .map(|(u, toks)| (u, toks.iter().map(|&i| scores[i]).sum::<f64>().abs()))
        .collect();
    // stable sort keeps position order among equal magnitudes
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut picked: Vec<usize> = ranked[..k]
        .iter()
        .flat_map(|&(u, _)| units[u].iter().copied())
        .collect();
    picked.sort_unstable();
    picked
}

/// Uniformly random selection of `ceil(f * M)` units, for comparison with
/// the top-|a| selection.
pub fn select_random_fraction<R: Rng + ?Sized>(
    tokens: &TokenizedText,
    f: f64,
    level: Level,
    rng: &mut R,
) -> Vec<usize> {
    let units = units(tokens, level);
    let k = unit_count(f, units.len());
    let mut picked: Vec<usize> = sample(rng, units.len(), k)
        .into_iter()
        .flat_map(|u| units[u].iter().copied())
        .collect();
    picked.sort_unstable();
    picked
}

/// `F` at `x` with the given token rows taken out. Special rows are never
/// removed.
pub fn value_without<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    remove: &[usize],
    target: Target,
    removal: Removal,
) -> Result<f64, FaithfulnessError> {
    if tokens.len() != x.rows() {
        return Err(ShapeError::Length {
            what: "token count",
            expected: x.rows(),
            got: tokens.len(),
        }
        .into());
    }
    let mut drop = vec![false; x.rows()];
    for &i in remove {
        if !tokens.tokens[i].is_special() {
            drop[i] = true;
        }
    }
    let reduced = match removal {
        Removal::Delete => {
            let keep: Vec<usize> = (0..x.rows()).filter(|&i| !drop[i]).collect();
            x.select_rows(&keep)
        }
        Removal::Mask => {
            let mask = BaselineStrategy::Mask.reference_row(&oracle.descriptor().references, x.cols())?;
            let mut m = x.clone();
            for i in (0..x.rows()).filter(|&i| drop[i]) {
                m.set_row(i, &mask);
            }
            m
        }
    };
    Ok(oracle.value(&reduced, target)?)
}

fn complement(tokens: &TokenizedText, selected: &[usize]) -> Vec<usize> {
    tokens
        .non_special()
        .filter(|i| selected.binary_search(i).is_err())
        .collect()
}

/// `|F(x) - F(x with the selected tokens removed)|`; exactly 0 when
/// nothing is removed. `f_x` is `F(x)`, usually `a.f_x`.
pub fn comprehensiveness_of<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    f_x: f64,
    selected: &[usize],
    target: Target,
    removal: Removal,
) -> Result<f64, FaithfulnessError> {
    if selected.is_empty() {
        return Ok(0.0);
    }
    Ok((f_x - value_without(oracle, x, tokens, selected, target, removal)?).abs())
}

/// `|F(x) - F(x keeping only the selected tokens and the specials)|`;
/// exactly 0 when everything is kept.
pub fn sufficiency_of<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    x: &EmbeddingMatrix,
    tokens: &TokenizedText,
    f_x: f64,
    selected: &[usize],
    target: Target,
    removal: Removal,
) -> Result<f64, FaithfulnessError> {
    let rest = complement(tokens, selected);
    if rest.is_empty() {
        return Ok(0.0);
    }
    Ok((f_x - value_without(oracle, x, tokens, &rest, target, removal)?).abs())
}

/// Comprehensiveness `C_f` of attribution `a` computed for `(tokens, x)`.
pub fn comprehensiveness<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    tokens: &TokenizedText,
    x: &EmbeddingMatrix,
    a: &AttributionVector,
    f: f64,
    level: Level,
    target: Target,
    removal: Removal,
) -> Result<f64, FaithfulnessError> {
    let sel = select_top_fraction(&a.scores, tokens, f, level);
    comprehensiveness_of(oracle, x, tokens, a.f_x, &sel, target, removal)
}

/// Sufficiency `S_f` of attribution `a` computed for `(tokens, x)`.
pub fn sufficiency<O: GradientOracle + ?Sized>(
    oracle: &mut O,
    tokens: &TokenizedText,
    x: &EmbeddingMatrix,
    a: &AttributionVector,
    f: f64,
    level: Level,
    target: Target,
    removal: Removal,
) -> Result<f64, FaithfulnessError> {
    let sel = select_top_fraction(&a.scores, tokens, f, level);
    sufficiency_of(oracle, x, tokens, a.f_x, &sel, target, removal)
}

/// `|sum(a) - (F(x) - F(x0))| / |F(x) - F(x0)|`.
pub fn approximation_error(a: &AttributionVector) -> Result<f64, FaithfulnessError> {
    let delta = a.f_x - a.f_x0;
    if delta == 0.0 {
        return Err(FaithfulnessError::DegenerateEndpoints);
    }
    Ok((a.total() - delta).abs() / delta.abs())
}
