//! Seeded synthetic corpora and models: random sentences, a planted-signal
//! regressor whose output depends on one marker word, and labeled corpora
//! with per-class marker tokens.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusRecord, Label};
use crate::matrix::EmbeddingMatrix;
use crate::model::{ArchConfig, Head, ModelError, ModelParams, Target};
use crate::tokenize::{Tokenizer, Vocab};

/// Filler vocabulary: function words, a few negators and some longer words
/// that the tokenizer splits into several chunks.
pub const FILLER: [&str; 48] = [
    "the",
    "a",
    "we",
    "they",
    "are",
    "is",
    "not",
    "never",
    "no",
    "very",
    "good",
    "bad",
    "day",
    "work",
    "team",
    "plan",
    "goal",
    "people",
    "today",
    "really",
    "always",
    "maybe",
    "help",
    "make",
    "take",
    "build",
    "try",
    "win",
    "lose",
    "hard",
    "easy",
    "time",
    "city",
    "home",
    "friend",
    "together",
    "quickly",
    "slowly",
    "lazy",
    "strong",
    "weak",
    "unmotivated",
    "achieve",
    "should",
    "could",
    "don't",
    "isn't",
    "at",
];

fn sentence<R: Rng>(rng: &mut R, words: &[&str], min: usize, max: usize) -> Vec<String> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| words.choose(rng).unwrap().to_string()).collect()
}

fn join(words: &[String], rng: &mut impl Rng) -> String {
    let mut s = words.join(" ");
    if rng.random_bool(0.5) {
        s.push(*['.', '!', '?'].choose(rng).unwrap());
    }
    s
}

/// `n` random sentences of 3 to 12 filler words.
pub fn random_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = sentence(&mut rng, &FILLER, 3, 12);
            join(&w, &mut rng)
        })
        .collect()
}

/// A scalar-head model in which every embedding is zero except the
/// marker's, which points along the output gradient at the origin. `F`
/// then depends on a sentence only through the marker and its length.
#[derive(Debug, Clone)]
pub struct PlantedSignal {
    pub params: ModelParams,
    pub marker: String,
    pub sentences: Vec<String>,
}

/// Marker used by [`planted_signal`]; short enough to stay one token.
pub const PLANTED_MARKER: &str = "zork";

/// Builds `n` filler sentences (4 to 10 words) that each contain the marker
/// once, and the matching model. The marker's embedding length is shrunk
/// until `F` is strictly increasing along the marker direction, so the
/// further the pooled vector moves toward the marker, the larger `F`.
pub fn planted_signal(n: usize, seed: u64) -> Result<PlantedSignal, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences: Vec<String> = (0..n)
        .map(|_| {
            let mut w = sentence(&mut rng, &FILLER, 3, 9);
            let at = rng.random_range(0..=w.len());
            w.insert(at, PLANTED_MARKER.to_string());
            join(&w, &mut rng)
        })
        .collect();
    let arch = ArchConfig {
        head: Head::Scalar,
        ..ArchConfig::default()
    };
    let tokenizer = Tokenizer::new(arch.tokenizer);
    let vocab = Vocab::build(&tokenizer, sentences.iter().map(String::as_str));
    let mut params = ModelParams::init(arch, vocab, seed)?;
    let d = params.dim();
    params.embeddings = EmbeddingMatrix::zeros(params.vocab.len(), d);

    let origin = EmbeddingMatrix::zeros(1, d);
    let g = params
        .gradient(&origin, None, Target::Scalar)?
        .gradient
        .expect("gradient requested");
    let norm = g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(ModelError::InvalidConfig("model output is flat at the origin".into()));
    }
    let unit: Vec<f64> = g.as_slice().iter().map(|v| v / norm).collect();
    let increasing = |s: f64| -> Result<bool, ModelError> {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=64 {
            let t = s * k as f64 / 64.0;
            let x = EmbeddingMatrix::from_vec(1, d, unit.iter().map(|u| u * t).collect())?;
            let v = params.forward(&x, None, Target::Scalar)?;
            if v <= prev {
                return Ok(false);
            }
            prev = v;
        }
        Ok(true)
    };
    let mut scale = 1.0;
    while !increasing(scale)? {
        scale *= 0.5;
        if scale < 1e-6 {
            return Err(ModelError::InvalidConfig("no monotone marker direction".into()));
        }
    }
    let id = params.vocab.get(PLANTED_MARKER).expect("marker is in the vocabulary");
    params
        .embeddings
        .set_row(id, &unit.iter().map(|u| u * scale).collect::<Vec<_>>());
    Ok(PlantedSignal {
        params,
        marker: PLANTED_MARKER.to_string(),
        sentences,
    })
}

/// Per-class marker words; absent from [`FILLER`] and one token each.
pub const CLASS_MARKERS: [&str; 6] = ["qzx", "vjk", "wpf", "xqd", "kzv", "jqw"];

/// A labeled corpus where every document of class `c` contains
/// `CLASS_MARKERS[c]` once and nothing else distinguishes the classes.
pub fn marker_corpus(n_docs: usize, n_classes: usize, seed: u64) -> Vec<CorpusRecord> {
    assert!((2..=CLASS_MARKERS.len()).contains(&n_classes));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let c = i % n_classes;
            let mut w = sentence(&mut rng, &FILLER, 4, 9);
            let at = rng.random_range(0..=w.len());
            w.insert(at, CLASS_MARKERS[c].to_string());
            let text = join(&w, &mut rng);
            CorpusRecord::new(format!("doc{i:03}"), text).with_label(Label::Class(format!("class{c}")))
        })
        .collect()
}
