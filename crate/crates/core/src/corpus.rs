//! JSONL corpus records and the text-cleaning pass applied on load.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"7","text":"They are not lazy. Go!","label":"pos",
//!  "sentences":[[0,18],[19,22]],
//!  "highlights":{"r1":[[9,17]]},
//!  "annotations":[{"lemma":"they"},{"head":3,"dep":"neg"},...]}
//! ```
//!
//! Spans are `[start, end)` in Unicode scalar values. `annotations`, when
//! present, has one entry per word as produced by [`Tokenizer::word_spans`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::Tokenizer;

pub type Span = [usize; 2];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("every line of {path} is malformed ({} lines)", .errors.len())]
    AllLinesMalformed { path: String, errors: Vec<LineError> },
    #[error("duplicate record ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

/// A document label: a class name, a numeric rating, or missing (`null` or
/// `"NA"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Numeric(f64),
    Class(String),
}

impl Label {
    pub fn is_na(&self) -> bool {
        matches!(self, Label::Class(s) if s == "NA")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
    /// Index of the syntactic head word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    /// Dependency label of the arc from `head` to this word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentences: Option<Vec<Span>>,
    /// Highlight spans keyed by reader.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlights: Option<BTreeMap<String, Vec<Span>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<WordAnnotation>>,
}

impl CorpusRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: None,
            sentences: None,
            highlights: None,
            annotations: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    /// `None` for missing or NA labels.
    pub fn known_label(&self) -> Option<&Label> {
        self.label.as_ref().filter(|l| !l.is_na())
    }

    /// Checks span bounds and annotation coverage.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.text.chars().count();
        let check = |what: &str, s: &Span| {
            if s[0] > s[1] || s[1] > n {
                Err(format!("{what} span [{}, {}] outside text of length {n}", s[0], s[1]))
            } else {
                Ok(())
            }
        };
        for s in self.sentences.iter().flatten() {
            check("sentence", s)?;
        }
        for (reader, spans) in self.highlights.iter().flatten() {
            for s in spans {
                check(&format!("highlight ({reader})"), s)?;
            }
        }
        if let Some(ann) = &self.annotations {
            let words = Tokenizer::word_spans(&self.text).len();
            if ann.len() != words {
                return Err(format!("{} annotations for {words} words", ann.len()));
            }
            if let Some((i, a)) = ann.iter().enumerate().find(|(i, a)| {
                a.head
                    .is_some_and(|h| h >= words || (h == *i && a.dep.as_deref() == Some("neg")))
            }) {
                return Err(format!("annotation {i}: bad head {:?}", a.head));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub enabled: bool,
    pub strip_mentions: bool,
    pub strip_urls: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            strip_mentions: true,
            strip_urls: true,
        }
    }
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap())
}

fn mention_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").unwrap())
}

/// Cleaned text plus, for every source character, its index in the
/// cleaned text (`None` when removed).
#[derive(Debug, Clone, PartialEq)]
pub struct Cleaned {
    pub text: String,
    pub map: Vec<Option<usize>>,
}

impl Cleaned {
    /// Maps a source span into the cleaned text; `None` when nothing of it
    /// survives.
    pub fn span(&self, s: Span) -> Option<Span> {
        let kept: Vec<usize> = self.map[s[0]..s[1]].iter().flatten().copied().collect();
        Some([*kept.first()?, kept.last()? + 1])
    }
}

/// Removes mentions and URLs, collapses whitespace runs to one space and
/// trims both ends.
pub fn clean_text(text: &str, cfg: &CleaningConfig) -> Cleaned {
    let chars: Vec<char> = text.chars().collect();
    let mut removed = vec![false; chars.len()];
    if cfg.enabled {
        // regex works on bytes; translate to char positions
        let byte_to_char: BTreeMap<usize, usize> = text.char_indices().enumerate().map(|(c, (b, _))| (b, c)).collect();
        let to_char = |b: usize| byte_to_char.get(&b).copied().unwrap_or(chars.len());
        let mut strip = |re: &Regex| {
            for m in re.find_iter(text) {
                for r in &mut removed[to_char(m.start())..to_char(m.end())] {
                    *r = true;
                }
            }
        };
        if cfg.strip_urls {
            strip(url_re());
        }
        if cfg.strip_mentions {
            strip(mention_re());
        }
    }
    let mut out = String::new();
    let mut map = vec![None; chars.len()];
    let mut n = 0usize;
    let mut pending_space: Option<usize> = None;
    for (i, &c) in chars.iter().enumerate() {
        if removed[i] {
            continue;
        }
        if cfg.enabled && c.is_whitespace() {
            if n > 0 && pending_space.is_none() {
                pending_space = Some(i);
            }
            continue;
        }
        if let Some(sp) = pending_space.take() {
            out.push(' ');
            map[sp] = Some(n);
            n += 1;
        }
        out.push(c);
        map[i] = Some(n);
        n += 1;
    }
    Cleaned { text: out, map }
}

/// Applies cleaning to a record, remapping spans and annotations.
pub fn clean_record(rec: &CorpusRecord, cfg: &CleaningConfig) -> CorpusRecord {
    if !cfg.enabled {
        return rec.clone();
    }
    let c = clean_text(&rec.text, cfg);
    let mut out = rec.clone();
    out.text = c.text.clone();
    out.sentences = rec
        .sentences
        .as_ref()
        .map(|v| v.iter().filter_map(|&s| c.span(s)).collect());
    out.highlights = rec.highlights.as_ref().map(|h| {
        h.iter()
            .map(|(r, spans)| (r.clone(), spans.iter().filter_map(|&s| c.span(s)).collect()))
            .collect()
    });
    if let Some(ann) = &rec.annotations {
        let old = Tokenizer::word_spans(&rec.text);
        if ann.len() == old.len() {
            // a word survives when all of its characters do
            let new_index: Vec<Option<usize>> = {
                let mut k = 0;
                old.iter()
                    .map(|&(s, e)| {
                        if c.map[s..e].iter().all(Option::is_some) {
                            k += 1;
                            Some(k - 1)
                        } else {
                            None
                        }
                    })
                    .collect()
            };
            out.annotations = Some(
                ann.iter()
                    .zip(&new_index)
                    .filter(|(_, n)| n.is_some())
                    .map(|(a, _)| {
                        let mut a = a.clone();
                        match a.head.and_then(|h| new_index[h]) {
                            Some(h) => a.head = Some(h),
                            None => {
                                a.head = None;
                                a.dep = None;
                            }
                        }
                        a
                    })
                    .collect(),
            );
        }
    }
    out
}

/// Records that loaded, plus the lines that did not.
#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    pub errors: Vec<LineError>,
}

pub fn parse_corpus<R: BufRead>(input: R, name: &str, cleaning: &CleaningConfig) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut nonblank = 0;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        nonblank += 1;
        let rec: CorpusRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str().map(String::from)));
                out.errors.push(LineError {
                    line: n + 1,
                    id,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match rec.validate() {
            Ok(()) => out.records.push(clean_record(&rec, cleaning)),
            Err(message) => out.errors.push(LineError {
                line: n + 1,
                id: Some(rec.id),
                message,
            }),
        }
    }
    if nonblank == 0 {
        return Err(CorpusError::Empty);
    }
    if out.records.is_empty() {
        return Err(CorpusError::AllLinesMalformed {
            path: name.to_string(),
            errors: out.errors,
        });
    }
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for r in &out.records {
        if !seen.insert(r.id.as_str()) {
            dups.insert(r.id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(CorpusError::DuplicateIds(dups.into_iter().collect()));
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, cleaning: &CleaningConfig) -> Result<LoadedCorpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(std::io::BufReader::new(file), &path.display().to_string(), cleaning)
}

/// Sentence spans: the record's own when given, else split after `.`, `!`
/// or `?` followed by whitespace. Spans exclude the separating whitespace.
pub fn sentence_spans(rec: &CorpusRecord) -> Vec<Span> {
    if let Some(s) = &rec.sentences {
        return s.clone();
    }
    split_sentences(&rec.text)
}

pub fn split_sentences(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') && chars.get(i + 1).is_some_and(|c| c.is_whitespace()) {
            out.push([start, i + 1]);
            i += 1;
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            start = i;
            continue;
        }
        i += 1;
    }
    if start < chars.len() {
        let mut end = chars.len();
        while end > start && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        if end > start {
            out.push([start, end]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LoadedCorpus, CorpusError> {
        parse_corpus(s.as_bytes(), "test", &CleaningConfig::default())
    }

    #[test]
    fn single_record() {
        let c = parse(r#"{"id":"1","text":"go!"}"#).unwrap();
        assert_eq!(c.records, vec![CorpusRecord::new("1", "go!")]);
    }

    #[test]
    fn url_removed_and_spaces_collapsed() {
        assert_eq!(
            clean_text("see https://x.y now", &CleaningConfig::default()).text,
            "see now"
        );
        assert_eq!(
            clean_text("  @bob hi\t\tthere www.a.b ", &CleaningConfig::default()).text,
            "hi there"
        );
        let off = CleaningConfig {
            enabled: false,
            ..CleaningConfig::default()
        };
        assert_eq!(clean_text("a  b", &off).text, "a  b");
    }

    #[test]
    fn spans_follow_cleaning() {
        let mut r = CorpusRecord::new("a", "@x  Hi  there. Bye");
        r.highlights = Some(BTreeMap::from([("r".to_string(), vec![[4, 13], [0, 2]])]));
        r.sentences = Some(vec![[0, 14], [15, 18]]);
        let c = clean_record(&r, &CleaningConfig::default());
        assert_eq!(c.text, "Hi there. Bye");
        assert_eq!(c.highlights.unwrap()["r"], vec![[0, 8]]);
        assert_eq!(c.sentences.unwrap(), vec![[0, 9], [10, 13]]);
    }

    #[test]
    fn annotations_follow_removed_words() {
        let mut r = CorpusRecord::new("a", "@bob is not lazy");
        r.annotations = Some(vec![
            WordAnnotation::default(),
            WordAnnotation::default(),
            WordAnnotation::default(),
            WordAnnotation {
                head: Some(2),
                dep: Some("neg".into()),
                lemma: None,
            },
            WordAnnotation {
                head: Some(0),
                dep: Some("acomp".into()),
                lemma: None,
            },
        ]);
        // "@", "bob", "is", "not", "lazy"
        assert_eq!(Tokenizer::word_spans(&r.text).len(), 5);
        r.validate().unwrap();
        let c = clean_record(&r, &CleaningConfig::default());
        let ann = c.annotations.unwrap();
        assert_eq!(ann.len(), 3);
        assert_eq!(ann[1].head, Some(0));
        assert_eq!(ann[2].head, None);
    }

    #[test]
    fn duplicate_ids_listed() {
        let err = parse("{\"id\":\"1\",\"text\":\"a\"}\n{\"id\":\"2\",\"text\":\"b\"}\n{\"id\":\"1\",\"text\":\"c\"}")
            .unwrap_err();
        assert!(matches!(&err, CorpusError::DuplicateIds(v) if v == &["1".to_string()]));
    }

    #[test]
    fn malformed_lines_collected() {
        let c = parse("{\"id\":\"1\",\"text\":\"a\"}\nnot json\n{\"id\":\"2\",\"text\":\"b\",\"sentences\":[[0,9]]}")
            .unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.errors.len(), 2);
        assert_eq!(c.errors[1].id.as_deref(), Some("2"));
        assert!(matches!(parse("nope\n{]"), Err(CorpusError::AllLinesMalformed { .. })));
    }

    #[test]
    fn labels() {
        let c = parse("{\"id\":\"1\",\"text\":\"a\",\"label\":\"NA\"}\n{\"id\":\"2\",\"text\":\"b\",\"label\":6.5}\n{\"id\":\"3\",\"text\":\"c\",\"label\":\"pos\"}").unwrap();
        assert!(c.records[0].known_label().is_none());
        assert_eq!(c.records[1].label, Some(Label::Numeric(6.5)));
        assert_eq!(c.records[2].label, Some(Label::Class("pos".into())));
    }

    #[test]
    fn sentence_split() {
        assert_eq!(split_sentences("Hi there. You! ok?"), vec![[0, 9], [10, 14], [15, 18]]);
        assert_eq!(split_sentences("3.5 is fine"), vec![[0, 11]]);
        assert!(split_sentences("").is_empty());
    }
}
