//! Deterministic whitespace/punctuation tokenizer with fixed-length subword
//! chunking, and the vocabulary that maps token surfaces to embedding rows.
//!
//! Offsets are Unicode scalar-value indices into the source text, never
//! byte offsets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::ModelError;

/// Role of a token in the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Bos,
    Eos,
    Pad,
    /// A special token reported by an external oracle whose role is unknown.
    Special,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub char_start: usize,
    pub char_end: usize,
    /// Display word this token belongs to. `None` for specials.
    pub word_index: Option<usize>,
    pub kind: TokenKind,
}

impl Token {
    #[inline]
    pub fn is_special(&self) -> bool {
        self.kind != TokenKind::Word
    }

    fn special(kind: TokenKind, at: usize) -> Self {
        let surface = match kind {
            TokenKind::Bos => "<s>",
            TokenKind::Eos => "</s>",
            TokenKind::Pad => "<pad>",
            _ => "",
        };
        Self {
            surface: surface.to_string(),
            char_start: at,
            char_end: at,
            word_index: None,
            kind,
        }
    }
}

/// A contiguous run of tokens forming one display word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub index: usize,
    pub tokens: Vec<usize>,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
    pub source: String,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn non_special(&self) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_special())
            .map(|(i, _)| i)
    }

    pub fn special_mask(&self) -> Vec<bool> {
        self.tokens.iter().map(Token::is_special).collect()
    }

    /// `true` for every row that takes part in pooling (everything but PAD).
    pub fn pool_mask(&self) -> Vec<bool> {
        self.tokens.iter().map(|t| t.kind != TokenKind::Pad).collect()
    }

    /// Groups non-special tokens by `word_index`, in order of first
    /// appearance. Tokens without a word index are skipped.
    pub fn words(&self) -> Vec<WordSpan> {
        let mut spans: Vec<WordSpan> = Vec::new();
        let mut by_index: HashMap<usize, usize> = HashMap::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.is_special() {
                continue;
            }
            let Some(w) = t.word_index else { continue };
            match by_index.get(&w) {
                Some(&slot) => {
                    let span = &mut spans[slot];
                    span.tokens.push(i);
                    span.char_start = span.char_start.min(t.char_start);
                    span.char_end = span.char_end.max(t.char_end);
                }
                None => {
                    by_index.insert(w, spans.len());
                    spans.push(WordSpan {
                        index: w,
                        tokens: vec![i],
                        char_start: t.char_start,
                        char_end: t.char_end,
                    });
                }
            }
        }
        spans
    }

    /// Source text between two character offsets.
    pub fn slice_chars(&self, start: usize, end: usize) -> String {
        self.source
            .chars()
            .skip(start)
            .take(end.saturating_sub(start))
            .collect()
    }

    /// Subsequence of tokens (offsets and word indices are kept as-is).
    pub fn select(&self, keep: &[usize]) -> Self {
        Self {
            tokens: keep.iter().map(|&i| self.tokens[i].clone()).collect(),
            source: self.source.clone(),
        }
    }

    /// Append PAD tokens up to `len` total tokens.
    pub fn pad_to(&mut self, len: usize) {
        let at = self.source.chars().count();
        while self.tokens.len() < len {
            self.tokens.push(Token::special(TokenKind::Pad, at));
        }
    }

    /// Checks the offset and alignment invariants; returns a description of
    /// the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let n_chars = self.source.chars().count();
        let mut last_word: Option<usize> = None;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.char_end > n_chars || t.char_start > t.char_end {
                return Err(format!(
                    "token {i}: offsets {}..{} out of range",
                    t.char_start, t.char_end
                ));
            }
            if t.is_special() {
                if t.char_start != t.char_end {
                    return Err(format!("special token {i} has non-zero width"));
                }
                continue;
            }
            if t.char_start >= t.char_end {
                return Err(format!("token {i} has empty span"));
            }
            if let (Some(prev), Some(w)) = (last_word, t.word_index) {
                if w < prev {
                    return Err(format!("token {i}: word index decreases"));
                }
            }
            if t.word_index.is_some() {
                last_word = t.word_index;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Words longer than this many characters are split into chunks.
    pub max_chunk: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { max_chunk: 4 }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}' || c == '_'
}

/// Splits text into words (runs of letters/digits/apostrophes, or single
/// punctuation characters), then chunks long words into subword tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub config: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Self {
        Self { config }
    }

    /// Character spans `(start, end)` of every word in `text`.
    pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<char> = text.chars().collect();
        let mut spans = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() || c.is_control() {
                i += 1;
            } else if is_word_char(c) {
                let start = i;
                while i < chars.len() && is_word_char(chars[i]) {
                    i += 1;
                }
                spans.push((start, i));
            } else {
                spans.push((i, i + 1));
                i += 1;
            }
        }
        spans
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedText, ModelError> {
        let spans = Self::word_spans(text);
        if spans.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let chars: Vec<char> = text.chars().collect();
        let chunk = self.config.max_chunk.max(1);
        let mut tokens = vec![Token::special(TokenKind::Bos, 0)];
        for (w, &(start, end)) in spans.iter().enumerate() {
            let mut s = start;
            while s < end {
                let e = (s + chunk).min(end);
                tokens.push(Token {
                    surface: chars[s..e].iter().collect(),
                    char_start: s,
                    char_end: e,
                    word_index: Some(w),
                    kind: TokenKind::Word,
                });
                s = e;
            }
        }
        tokens.push(Token::special(TokenKind::Eos, chars.len()));
        Ok(TokenizedText {
            tokens,
            source: text.to_string(),
        })
    }
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const MASK_ID: usize = 4;
const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"];

/// Closed vocabulary. The first five rows are reserved for
/// PAD, UNK, BOS, EOS and MASK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(entries: Vec<String>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Self { entries, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.entries
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from(RESERVED.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }
}

impl Vocab {
    /// Builds a vocabulary from every token key seen in `texts`, sorted so
    /// that the result does not depend on input order.
    pub fn build<'a, I>(tokenizer: &Tokenizer, texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut keys = std::collections::BTreeSet::new();
        for text in texts {
            if let Ok(tt) = tokenizer.tokenize(text) {
                for i in 0..tt.tokens.len() {
                    if let Some(k) = Self::key(&tt, i) {
                        keys.insert(k);
                    }
                }
            }
        }
        let mut v = Self::default();
        for k in keys {
            v.insert(k);
        }
        v
    }

    pub fn insert(&mut self, key: String) -> usize {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.entries.len();
        self.index.insert(key.clone(), id);
        self.entries.push(key);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Lookup key of token `i`: lowercase surface, with a `##` prefix for
    /// word-continuation chunks. `None` for specials.
    pub fn key(tokens: &TokenizedText, i: usize) -> Option<String> {
        let t = &tokens.tokens[i];
        if t.is_special() {
            return None;
        }
        let continuation = i > 0 && {
            let prev = &tokens.tokens[i - 1];
            !prev.is_special() && prev.word_index.is_some() && prev.word_index == t.word_index
        };
        let lower = t.surface.to_lowercase();
        Some(if continuation { format!("##{lower}") } else { lower })
    }

    pub fn id_of(&self, tokens: &TokenizedText, i: usize) -> usize {
        match tokens.tokens[i].kind {
            TokenKind::Bos => BOS_ID,
            TokenKind::Eos => EOS_ID,
            TokenKind::Pad => PAD_ID,
            TokenKind::Special => UNK_ID,
            TokenKind::Word => Self::key(tokens, i).and_then(|k| self.get(&k)).unwrap_or(UNK_ID),
        }
    }

    pub fn ids(&self, tokens: &TokenizedText) -> Vec<usize> {
        (0..tokens.tokens.len()).map(|i| self.id_of(tokens, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_short_word() {
        let tt = Tokenizer::default().tokenize("go").unwrap();
        assert_eq!(tt.tokens.len(), 3);
        assert_eq!(tt.tokens[0].kind, TokenKind::Bos);
        assert_eq!(tt.tokens[1].surface, "go");
        assert_eq!(tt.tokens[1].word_index, Some(0));
        assert_eq!(tt.tokens[2].kind, TokenKind::Eos);
    }

    #[test]
    fn long_word_is_chunked() {
        let tt = Tokenizer::new(TokenizerConfig { max_chunk: 4 })
            .tokenize("unmotivated")
            .unwrap();
        let words: Vec<_> = tt.tokens.iter().filter(|t| !t.is_special()).collect();
        assert_eq!(words.len(), 3);
        assert!(words.iter().all(|t| t.word_index == Some(0)));
        assert_eq!(
            words.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>(),
            ["unmo", "tiva", "ted"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(matches!(Tokenizer::default().tokenize(""), Err(ModelError::EmptyInput)));
        assert!(matches!(
            Tokenizer::default().tokenize("  \t\n "),
            Err(ModelError::EmptyInput)
        ));
    }

    #[test]
    fn punctuation_and_unicode_offsets() {
        let tt = Tokenizer::default().tokenize("Née, don't!").unwrap();
        let surfaces: Vec<_> = tt
            .tokens
            .iter()
            .filter(|t| !t.is_special())
            .map(|t| (t.surface.as_str(), t.char_start, t.word_index))
            .collect();
        assert_eq!(
            surfaces,
            [
                ("Née", 0, Some(0)),
                (",", 3, Some(1)),
                ("don'", 5, Some(2)),
                ("t", 9, Some(2)),
                ("!", 10, Some(3))
            ]
        );
        tt.validate().unwrap();
        assert_eq!(tt.tokens.last().unwrap().char_start, 11);
    }

    #[test]
    fn continuation_keys_and_unk() {
        let tok = Tokenizer::default();
        let vocab = Vocab::build(&tok, ["unmotivated people"]);
        let tt = tok.tokenize("unmotivated zebra").unwrap();
        assert_eq!(Vocab::key(&tt, 2).as_deref(), Some("##tiva"));
        let ids = vocab.ids(&tt);
        assert_eq!(ids[0], BOS_ID);
        assert_ne!(ids[1], UNK_ID);
        assert_eq!(ids[4], UNK_ID);
        assert_eq!(*ids.last().unwrap(), EOS_ID);
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v = Vocab::build(&Tokenizer::default(), ["a b c"]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.get("b"), v.get("b"));
    }
}
