//! Token scores to readable word scores: subword merging, negation
//! linking, sign-coherence zeroing and display normalization. Output
//! formatting lives in [`emit`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::AttributionVector;
use crate::corpus::WordAnnotation;
use crate::tokenize::TokenizedText;

pub mod emit;

pub use emit::{ansi, html_fragment, html_report, ramp_color, ReportEntry, RAMP};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("token {0} has no word index")]
    AlignmentGap(usize),
    #[error("{tokens} tokens but {scores} scores")]
    Length { tokens: usize, scores: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Word {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
    /// Sum of this word's own token scores.
    pub own: f64,
    /// Displayed score: `own`, or the group total for linked words.
    pub score: f64,
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAttribution {
    pub words: Vec<Word>,
    pub f_x: f64,
    /// Scores carried by special tokens (zero for every method here, kept
    /// so sums are preserved exactly).
    pub special_total: f64,
    pub source: String,
}

impl WordAttribution {
    /// Sum of displayed scores, counting each linked group once.
    pub fn total(&self) -> f64 {
        let mut seen = std::collections::BTreeSet::new();
        let mut t = self.special_total;
        for w in &self.words {
            match w.group {
                Some(g) => {
                    if seen.insert(g) {
                        t += w.score;
                    }
                }
                None => t += w.score,
            }
        }
        t
    }

    pub fn scores(&self) -> Vec<f64> {
        self.words.iter().map(|w| w.score).collect()
    }
}

/// Adds up the scores of tokens that belong to the same word.
pub fn merge_tokens_to_words(tokens: &TokenizedText, a: &AttributionVector) -> Result<WordAttribution, RenderError> {
    merge_scores(tokens, &a.scores, a.f_x)
}

pub fn merge_scores(tokens: &TokenizedText, scores: &[f64], f_x: f64) -> Result<WordAttribution, RenderError> {
    if scores.len() != tokens.len() {
        return Err(RenderError::Length {
            tokens: tokens.len(),
            scores: scores.len(),
        });
    }
    if let Some(i) = tokens
        .tokens
        .iter()
        .position(|t| !t.is_special() && t.word_index.is_none())
    {
        return Err(RenderError::AlignmentGap(i));
    }
    let special_total = tokens
        .tokens
        .iter()
        .zip(scores)
        .filter(|(t, _)| t.is_special())
        .map(|(_, s)| s)
        .sum();
    let words = tokens
        .words()
        .into_iter()
        .map(|w| {
            let own: f64 = w.tokens.iter().map(|&i| scores[i]).sum();
            Word {
                surface: tokens.slice_chars(w.char_start, w.char_end),
                char_start: w.char_start,
                char_end: w.char_end,
                own,
                score: own,
                group: None,
            }
        })
        .collect();
    Ok(WordAttribution {
        words,
        f_x,
        special_total,
        source: tokens.source.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepLabel {
    Neg,
    Acomp,
    Auxpass,
    Prt,
    Other,
}

impl DepLabel {
    pub fn parse(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "neg" => Self::Neg,
            "acomp" => Self::Acomp,
            "auxpass" => Self::Auxpass,
            "prt" | "compound:prt" => Self::Prt,
            _ => Self::Other,
        }
    }
}

/// Per-word dependency arcs from an external parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepAnnotation {
    pub arcs: Vec<(Option<usize>, DepLabel)>,
}

impl DepAnnotation {
    pub fn from_annotations(ann: &[WordAnnotation]) -> Self {
        Self {
            arcs: ann
                .iter()
                .map(|a| (a.head, a.dep.as_deref().map_or(DepLabel::Other, DepLabel::parse)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Linking<'a> {
    None,
    Heuristic,
    Dependencies(&'a DepAnnotation),
}

const NEGATORS: [&str; 3] = ["not", "never", "no"];

const STOPWORDS: [&str; 48] = [
    "a", "all", "am", "an", "and", "are", "as", "at", "be", "been", "being", "but", "by", "did", "do", "does", "even",
    "ever", "for", "had", "has", "have", "i", "in", "is", "it", "just", "me", "of", "on", "or", "quite", "really",
    "so", "such", "that", "the", "this", "to", "too", "very", "was", "we", "were", "with", "you", "he", "she",
];

fn bare(surface: &str) -> String {
    surface
        .trim_matches(|c: char| !c.is_alphanumeric() && c != '\'' && c != '\u{2019}')
        .to_lowercase()
}

pub fn is_negator(surface: &str) -> bool {
    let w = bare(surface);
    NEGATORS.contains(&w.as_str()) || w.ends_with("n't") || w.ends_with("n\u{2019}t")
}

fn is_content(surface: &str) -> bool {
    let w = bare(surface);
    !w.is_empty() && !STOPWORDS.contains(&w.as_str())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let p = self.0[i];
        if p == i {
            return i;
        }
        let r = self.find(p);
        self.0[i] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Links each negation with the word it modifies; all words of a group
/// display the group's summed score. Groups are merged transitively, so
/// double negations end up in one group. Applying the step twice gives
/// the same result as applying it once.
///
/// Dependency mode: `neg` joins its head; when the head has `acomp` or
/// `auxpass` dependents (the auxiliary case), those join too; `prt`
/// particles join their verb when the verb is in a group. Heuristic mode:
/// `not`, `never`, `no` and `*n't` join the next non-stopword.
/// An annotation that does not cover every word falls back to the
/// heuristic.
pub fn link_negations(wa: &WordAttribution, linking: Linking<'_>) -> WordAttribution {
    let n = wa.words.len();
    let mut uf = UnionFind((0..n).collect());
    for (i, w) in wa.words.iter().enumerate() {
        if let Some(g) = w.group {
            // previous grouping is kept; members share a group id
            if let Some(j) = wa.words.iter().position(|v| v.group == Some(g)) {
                uf.union(i, j);
            }
        }
    }
    let linking = match linking {
        Linking::Dependencies(d) if d.arcs.len() != n => Linking::Heuristic,
        l => l,
    };
    match linking {
        Linking::None => {}
        Linking::Heuristic => {
            for i in 0..n {
                if !is_negator(&wa.words[i].surface) {
                    continue;
                }
                if let Some(j) = (i + 1..n).find(|&j| is_content(&wa.words[j].surface)) {
                    uf.union(i, j);
                }
            }
        }
        Linking::Dependencies(d) => {
            for (i, &(head, label)) in d.arcs.iter().enumerate() {
                let Some(h) = head.filter(|&h| h < n && h != i) else {
                    continue;
                };
                if label != DepLabel::Neg {
                    continue;
                }
                uf.union(i, h);
                for (j, &(hj, lj)) in d.arcs.iter().enumerate() {
                    if hj == Some(h) && matches!(lj, DepLabel::Acomp | DepLabel::Auxpass) {
                        uf.union(j, h);
                    }
                }
            }
            let mut sizes = vec![0usize; n];
            for i in 0..n {
                sizes[uf.find(i)] += 1;
            }
            for (j, &(head, label)) in d.arcs.iter().enumerate() {
                if label == DepLabel::Prt {
                    if let Some(h) = head.filter(|&h| h < n && h != j) {
                        let root = uf.find(h);
                        if sizes[root] > 1 {
                            uf.union(j, h);
                        }
                    }
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let mut size = vec![0usize; n];
    let mut sum = vec![0.0f64; n];
    for (i, &r) in roots.iter().enumerate() {
        size[r] += 1;
        sum[r] += wa.words[i].own;
    }
    // group ids numbered by first member
    let mut ids = vec![None; n];
    let mut next = 0;
    for &r in &roots {
        if size[r] > 1 && ids[r].is_none() {
            ids[r] = Some(next);
            next += 1;
        }
    }
    let mut out = wa.clone();
    for (i, w) in out.words.iter_mut().enumerate() {
        let r = roots[i];
        if size[r] > 1 {
            w.group = ids[r];
            w.score = sum[r];
        } else {
            w.group = None;
            w.score = w.own;
        }
    }
    out
}

/// Zeroes every displayed score whose sign disagrees with `F(x)`; all
/// scores when `F(x) = 0`.
pub fn zero_incoherent_signs(wa: &WordAttribution) -> WordAttribution {
    let mut out = wa.clone();
    for w in &mut out.words {
        if wa.f_x == 0.0 || w.score * wa.f_x < 0.0 {
            w.score = 0.0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderSpan {
    /// Source text between the previous word and this one.
    pub gap: String,
    pub surface: String,
    pub intensity: f64,
    pub polarity: Polarity,
}

/// One sentence ready for emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedText {
    pub spans: Vec<RenderSpan>,
    /// Source text after the last word.
    pub tail: String,
    pub f_x: f64,
}

/// `intensity_i = |s_i| / max_j |s_j| * min(1, |F(x)| / global_scale)`.
pub fn normalize_for_display(wa: &WordAttribution, global_scale: f64) -> RenderedText {
    let max = wa.words.iter().map(|w| w.score.abs()).fold(0.0, f64::max);
    let damp = if global_scale > 0.0 {
        (wa.f_x.abs() / global_scale).min(1.0)
    } else {
        1.0
    };
    let chars: Vec<char> = wa.source.chars().collect();
    let slice = |a: usize, b: usize| chars[a.min(chars.len())..b.min(chars.len())].iter().collect::<String>();
    let mut cursor = 0;
    let mut spans = Vec::with_capacity(wa.words.len());
    for w in &wa.words {
        let intensity = if max > 0.0 { w.score.abs() / max * damp } else { 0.0 };
        let polarity = if intensity == 0.0 {
            Polarity::Zero
        } else if w.score > 0.0 {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        spans.push(RenderSpan {
            gap: if w.char_start >= cursor {
                slice(cursor, w.char_start)
            } else {
                String::new()
            },
            surface: w.surface.clone(),
            intensity,
            polarity,
        });
        cursor = cursor.max(w.char_end);
    }
    RenderedText {
        spans,
        tail: slice(cursor, chars.len()),
        f_x: wa.f_x,
    }
}

/// Full pipeline: merge, link, zero, normalize.
pub fn render_attribution(
    tokens: &TokenizedText,
    a: &AttributionVector,
    linking: Linking<'_>,
    global_scale: f64,
) -> Result<(WordAttribution, RenderedText), RenderError> {
    let wa = zero_incoherent_signs(&link_negations(&merge_tokens_to_words(tokens, a)?, linking));
    let r = normalize_for_display(&wa, global_scale);
    Ok((wa, r))
}
