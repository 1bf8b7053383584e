//! Class keywords by overfit-then-attribute: train the reference model to
//! perfect training accuracy, attribute each document toward its true class,
//! keep positive word scores and aggregate them per class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{
    attribute, AttributionConfig, AttributionError, BaselineStrategy, QuadratureKind, QuadratureRule,
};
use crate::corpus::{CorpusRecord, Label};
use crate::model::{ArchConfig, Head, ModelError, ModelParams, Target};
use crate::oracle::{BuiltinOracle, GradientOracle};
use crate::parallel::map_ordered;
use crate::render::emit::escape_html;
use crate::render::{merge_tokens_to_words, ramp_color, Polarity};
use crate::train::{train_overfit, Labels, TrainReport, TrainerConfig};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error("class {0} has no positively scored words")]
    EmptyClassTable(String),
    #[error("need at least two labeled classes, found {0}")]
    TooFewClasses(usize),
    #[error("record {id}: numeric label {value} falls in no bin")]
    UnbinnedLabel { id: String, value: f64 },
    #[error("record {id}: numeric labels need a binning")]
    MissingBinning { id: String },
    #[error("record {id}: {message}")]
    Document { id: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Sum of positive scores over the class's documents.
    #[default]
    Sum,
    /// Mean over the documents in which the word scored positively.
    Mean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NaMode {
    #[default]
    Exclude,
    /// Treat NA as one more class.
    ExtraClass,
}

/// Named closed interval `[min, max]` for numeric labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub arch: ArchConfig,
    pub trainer: TrainerConfig,
    pub attribution: AttributionConfig,
    pub k: usize,
    pub aggregation: Aggregation,
    pub na: NaMode,
    pub binning: Option<Vec<Bin>>,
    pub threads: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            trainer: TrainerConfig::default(),
            attribution: AttributionConfig {
                baseline: BaselineStrategy::Zero,
                quadrature: QuadratureRule::new(QuadratureKind::EqualWeights, 300),
                ..AttributionConfig::default()
            },
            k: 20,
            aggregation: Aggregation::Sum,
            na: NaMode::Exclude,
            binning: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRow {
    pub word: String,
    pub score: f64,
    /// Documents of the class in which the word scored positively.
    pub doc_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub class: String,
    pub rows: Vec<KeywordRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassKeywordTable {
    pub k: usize,
    pub classes: Vec<ClassTable>,
}

impl ClassKeywordTable {
    pub fn class(&self, name: &str) -> Option<&ClassTable> {
        self.classes.iter().find(|c| c.class == name)
    }
}

/// Lemma when given, else the lowercased surface without surrounding
/// punctuation.
pub fn normalize_word_form(surface: &str, lemma: Option<&str>) -> String {
    if let Some(l) = lemma.filter(|l| !l.is_empty()) {
        return l.to_string();
    }
    surface.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Class name of a record, or `None` when it is excluded.
fn class_of(rec: &CorpusRecord, cfg: &ExtractConfig) -> Result<Option<String>, ExtractError> {
    let na = match cfg.na {
        NaMode::Exclude => None,
        NaMode::ExtraClass => Some("NA".to_string()),
    };
    match &rec.label {
        None => Ok(na),
        Some(l) if l.is_na() => Ok(na),
        Some(Label::Class(c)) => Ok(Some(c.clone())),
        Some(Label::Numeric(v)) => {
            let bins = cfg
                .binning
                .as_ref()
                .ok_or_else(|| ExtractError::MissingBinning { id: rec.id.clone() })?;
            bins.iter()
                .find(|b| b.min <= *v && *v <= b.max)
                .map(|b| Some(b.name.clone()))
                .ok_or(ExtractError::UnbinnedLabel {
                    id: rec.id.clone(),
                    value: *v,
                })
        }
    }
}

/// Positive word scores of one document, keyed by normalized form. Word
/// occurrences with the same key are added.
pub type DocScores = BTreeMap<String, f64>;

/// Per-class accumulation of document scores, then top-`k` per class.
/// `docs` pairs a class index with that document's scores.
pub fn aggregate(
    class_names: &[String],
    docs: &[(usize, DocScores)],
    k: usize,
    aggregation: Aggregation,
) -> Result<ClassKeywordTable, ExtractError> {
    let mut acc: Vec<BTreeMap<&str, (f64, usize)>> = vec![BTreeMap::new(); class_names.len()];
    for (c, scores) in docs {
        for (word, &s) in scores {
            if s > 0.0 {
                let e = acc[*c].entry(word.as_str()).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
            }
        }
    }
    let mut classes = Vec::with_capacity(class_names.len());
    for (name, words) in class_names.iter().zip(acc) {
        if words.is_empty() {
            return Err(ExtractError::EmptyClassTable(name.clone()));
        }
        let mut rows: Vec<KeywordRow> = words
            .into_iter()
            .map(|(w, (sum, df))| KeywordRow {
                word: w.to_string(),
                score: match aggregation {
                    Aggregation::Sum => sum,
                    Aggregation::Mean => sum / df as f64,
                },
                doc_freq: df,
            })
            .collect();
        // map order makes ties alphabetical
        rows.sort_by(|a, b| b.score.total_cmp(&a.score));
        rows.truncate(k);
        classes.push(ClassTable {
            class: name.clone(),
            rows,
        });
    }
    Ok(ClassKeywordTable { k, classes })
}

/// Output of [`extract_keywords`].
#[derive(Debug, Clone)]
pub struct Extraction {
    pub table: ClassKeywordTable,
    pub params: ModelParams,
    pub report: TrainReport,
    pub class_names: Vec<String>,
}

pub fn extract_keywords(corpus: &[CorpusRecord], cfg: &ExtractConfig) -> Result<Extraction, ExtractError> {
    let mut docs: Vec<(&CorpusRecord, String)> = Vec::new();
    for r in corpus {
        if let Some(c) = class_of(r, cfg)? {
            docs.push((r, c));
        }
    }
    let class_names: Vec<String> = docs
        .iter()
        .map(|(_, c)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.len() < 2 {
        return Err(ExtractError::TooFewClasses(class_names.len()));
    }
    let index: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let texts: Vec<String> = docs.iter().map(|(r, _)| r.text.clone()).collect();
    let labels: Vec<usize> = docs.iter().map(|(_, c)| index[c.as_str()]).collect();
    let arch = ArchConfig {
        head: Head::Classes(class_names.len()),
        ..cfg.arch.clone()
    };
    let (params, report) = train_overfit(
        &texts,
        &Labels::Classes {
            labels: labels.clone(),
            n_classes: class_names.len(),
        },
        &arch,
        &cfg.trainer,
    )?;
    let shared = Arc::new(params);
    let scored = map_ordered(
        &docs,
        cfg.threads,
        || Ok::<_, String>(BuiltinOracle::from_arc(shared.clone())),
        |oracle, i, (rec, _)| document_scores(oracle, rec, labels[i], &cfg.attribution).map_err(|e| e.to_string()),
    );
    let mut per_doc = Vec::with_capacity(docs.len());
    for (((rec, _), &label), s) in docs.iter().zip(&labels).zip(scored) {
        let s = s.map_err(|message| ExtractError::Document {
            id: rec.id.clone(),
            message,
        })?;
        per_doc.push((label, s));
    }
    let table = aggregate(&class_names, &per_doc, cfg.k, cfg.aggregation)?;
    let params = Arc::try_unwrap(shared).unwrap_or_else(|a| (*a).clone());
    Ok(Extraction {
        table,
        params,
        report,
        class_names,
    })
}

fn document_scores(
    oracle: &mut BuiltinOracle,
    rec: &CorpusRecord,
    class: usize,
    cfg: &AttributionConfig,
) -> Result<DocScores, AttributionError> {
    let e = oracle.embed(&rec.text)?;
    let a = attribute(oracle, &e, Target::Class(class), cfg)?;
    let wa = merge_tokens_to_words(&e.tokens, &a).expect("built-in tokens are aligned");
    let lemmas = rec.annotations.as_ref().filter(|a| a.len() == wa.words.len());
    let mut out = DocScores::new();
    for (i, w) in wa.words.iter().enumerate() {
        if w.own > 0.0 {
            let lemma = lemmas.and_then(|l| l[i].lemma.as_deref());
            let key = normalize_word_form(&w.surface, lemma);
            if key.is_empty() {
                continue;
            }
            *out.entry(key).or_insert(0.0) += w.own;
        }
    }
    Ok(out)
}

/// One line per (class, rank).
pub fn keyword_table_csv(t: &ClassKeywordTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "rank", "word", "score", "doc_freq"]).unwrap();
    for c in &t.classes {
        for (r, row) in c.rows.iter().enumerate() {
            w.write_record([
                c.class.clone(),
                (r + 1).to_string(),
                row.word.clone(),
                row.score.to_string(),
                row.doc_freq.to_string(),
            ])
            .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// HTML table, one row per class, keywords shaded relative to the class
/// maximum.
pub fn keyword_table_html(t: &ClassKeywordTable, title: &str) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{t0}</title>\n<style>\
table{{border-collapse:collapse;font-family:sans-serif}}td,th{{padding:0.3em 0.6em;text-align:left}}</style>\n\
</head>\n<body>\n<h1>{t0}</h1>\n<table>\n",
        t0 = escape_html(title)
    );
    for c in &t.classes {
        let _ = write!(out, "<tr><th>{}</th>", escape_html(&c.class));
        let max = c.rows.iter().map(|r| r.score).fold(0.0, f64::max);
        for r in &c.rows {
            let intensity = if max > 0.0 { r.score / max } else { 0.0 };
            match ramp_color(Polarity::Positive, intensity) {
                Some((bg, white)) => {
                    let fg = if white { ";color:#ffffff" } else { "" };
                    let _ = write!(
                        out,
                        "<td style=\"background-color:{bg}{fg}\">{}</td>",
                        escape_html(&r.word)
                    );
                }
                None => {
                    let _ = write!(out, "<td>{}</td>", escape_html(&r.word));
                }
            }
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n</body>\n</html>\n");
    out
}
