//! Built-in reference classifier: embedding lookup, pooling, a stack of
//! smooth dense layers and a scalar or k-class head, with exact analytic
//! gradients with respect to the input embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ShapeError;
use crate::matrix::EmbeddingMatrix;
use crate::tokenize::{TokenizedText, Tokenizer, TokenizerConfig, Vocab, MASK_ID, PAD_ID};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input is empty after cleaning")]
    EmptyInput,
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("target {target:?} is not valid for a {head} head")]
    InvalidTarget { target: Target, head: String },
    #[error("training did not reach accuracy 1.0 within {max_epochs} epochs (final accuracy {accuracy:.4})")]
    NotConverged { max_epochs: usize, accuracy: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported params format version {0}")]
    FormatVersion(u32),
    #[error("params i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("params encoding: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which output of the model is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Scalar,
    Class(usize),
}

impl Target {
    /// Wire encoding: `null` for the scalar head, the class index otherwise.
    pub fn to_wire(self) -> Option<usize> {
        match self {
            Target::Scalar => None,
            Target::Class(c) => Some(c),
        }
    }

    pub fn from_wire(v: Option<usize>) -> Self {
        v.map_or(Target::Scalar, Target::Class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over non-PAD rows.
    MeanMasked,
    /// Concatenate all rows; the sequence length is fixed.
    Flatten { rows: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Scalar,
    Classes(usize),
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Scalar => 1,
            Head::Classes(k) => k,
        }
    }

    fn name(self) -> String {
        match self {
            Head::Scalar => "scalar".into(),
            Head::Classes(k) => format!("{k}-class"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Width of each hidden layer; `[]` makes the head act on the pooled vector directly.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub pooling: Pooling,
    pub head: Head,
    /// Standard deviation of the initial embedding rows.
    pub embedding_scale: f64,
    pub tokenizer: TokenizerConfig,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            pooling: Pooling::MeanMasked,
            head: Head::Scalar,
            embedding_scale: 1.0,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

impl ArchConfig {
    fn pooled_len(&self) -> usize {
        match self.pooling {
            Pooling::MeanMasked => self.dim,
            Pooling::Flatten { rows } => rows * self.dim,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::InvalidConfig("dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(ModelError::InvalidConfig("hidden widths must be positive".into()));
        }
        if let Head::Classes(k) = self.head {
            if k < 2 {
                return Err(ModelError::InvalidConfig(
                    "a class head needs at least 2 classes".into(),
                ));
            }
        }
        if let Pooling::Flatten { rows: 0 } = self.pooling {
            return Err(ModelError::InvalidConfig("flatten pooling needs rows > 0".into()));
        }
        Ok(())
    }
}

/// Fully connected layer `z = W a + b`, `W` stored row-major `(out, inp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            weight: vec![0.0; inp * out],
            bias: vec![0.0; out],
        }
    }

    fn xavier(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (inp + out) as f64).sqrt();
        let weight = (0..inp * out).map(|_| rng.random_range(-a..a)).collect();
        Self {
            inp,
            out,
            weight,
            bias: vec![0.0; out],
        }
    }

    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), self.inp);
        (0..self.out)
            .map(|o| {
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                self.bias[o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// `W^T g`
    pub fn back(&self, g: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.inp];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.inp..(o + 1) * self.inp];
            for (ri, w) in r.iter_mut().zip(row) {
                *ri += w * go;
            }
        }
        r
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub pooled: Vec<f64>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Activations of each hidden layer.
    pub post: Vec<Vec<f64>>,
    pub out: Vec<f64>,
    active_rows: usize,
}

/// Value (and optionally gradient) of the model at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub value: f64,
    pub gradient: Option<EmbeddingMatrix>,
}

/// Parameters of the reference model. Immutable once built; every method
/// is a pure function of `(self, input)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub version: u32,
    pub arch: ArchConfig,
    pub seed: u64,
    pub vocab: Vocab,
    /// `V x d` embedding table.
    pub embeddings: EmbeddingMatrix,
    pub layers: Vec<Dense>,
    pub head: Dense,
}

/// Accumulated parameter gradients, same layout as [`ModelParams`].
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub layers: Vec<Dense>,
    pub head: Dense,
}

impl ParamGrads {
    pub(crate) fn zeros_like(p: &ModelParams) -> Self {
        Self {
            layers: p.layers.iter().map(|l| Dense::zeros(l.inp, l.out)).collect(),
            head: Dense::zeros(p.head.inp, p.head.out),
        }
    }
}

impl ModelParams {
    /// Random initialization, fully determined by `(arch, vocab, seed)`.
    pub fn init(arch: ArchConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let emb: Vec<f64> = (0..v * arch.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * arch.embedding_scale
            })
            .collect();
        let embeddings = EmbeddingMatrix::from_vec(v, arch.dim, emb)?;
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut inp = arch.pooled_len();
        for &w in &arch.hidden {
            layers.push(Dense::xavier(inp, w, &mut rng));
            inp = w;
        }
        let head = Dense::xavier(inp, arch.head.outputs(), &mut rng);
        Ok(Self {
            version: PARAMS_FORMAT_VERSION,
            arch,
            seed,
            vocab,
            embeddings,
            layers,
            head,
        })
    }

    /// Assemble a model from explicit parts, checking every dimension.
    pub fn from_parts(
        arch: ArchConfig,
        vocab: Vocab,
        embeddings: EmbeddingMatrix,
        layers: Vec<Dense>,
        head: Dense,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        let p = Self {
            version: PARAMS_FORMAT_VERSION,
            arch,
            seed: 0,
            vocab,
            embeddings,
            layers,
            head,
        };
        p.check_dims()?;
        Ok(p)
    }

    fn check_dims(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.embeddings.rows() != self.vocab.len() || self.embeddings.cols() != self.arch.dim {
            return bad(format!(
                "embedding table is {:?}, expected ({}, {})",
                self.embeddings.shape(),
                self.vocab.len(),
                self.arch.dim
            ));
        }
        if self.layers.len() != self.arch.hidden.len() {
            return bad("layer count does not match arch.hidden".into());
        }
        let mut inp = self.arch.pooled_len();
        for (i, (l, &w)) in self.layers.iter().zip(&self.arch.hidden).enumerate() {
            if l.inp != inp || l.out != w || l.weight.len() != inp * w || l.bias.len() != w {
                return bad(format!("layer {i} has wrong dimensions"));
            }
            inp = w;
        }
        let k = self.arch.head.outputs();
        let h = &self.head;
        if h.inp != inp || h.out != k || h.weight.len() != inp * k || h.bias.len() != k {
            return bad("head has wrong dimensions".into());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.arch.tokenizer)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenizedText, ModelError> {
        self.tokenizer().tokenize(text)
    }

    /// Row `i` of the result is the embedding-table row of token `i`
    /// (UNK for out-of-vocabulary tokens).
    pub fn embed(&self, tokens: &TokenizedText) -> EmbeddingMatrix {
        let ids = self.vocab.ids(tokens);
        self.embed_ids(&ids)
    }

    pub fn embed_ids(&self, ids: &[usize]) -> EmbeddingMatrix {
        let mut x = EmbeddingMatrix::zeros(ids.len(), self.dim());
        for (r, &id) in ids.iter().enumerate() {
            x.set_row(r, self.embeddings.row(id));
        }
        x
    }

    pub fn mask_embedding(&self) -> &[f64] {
        self.embeddings.row(MASK_ID)
    }

    pub fn pad_embedding(&self) -> &[f64] {
        self.embeddings.row(PAD_ID)
    }

    /// Column mean of the whole embedding table.
    pub fn mean_embedding(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for i in 0..self.embeddings.rows() {
            for (a, v) in m.iter_mut().zip(self.embeddings.row(i)) {
                *a += v;
            }
        }
        let n = self.embeddings.rows().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub(crate) fn check_target(&self, target: Target) -> Result<(), ModelError> {
        let ok = match (self.arch.head, target) {
            (Head::Scalar, Target::Scalar) => true,
            (Head::Classes(k), Target::Class(c)) => c < k,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidTarget {
                target,
                head: self.arch.head.name(),
            })
        }
    }

    fn check_input(&self, x: &EmbeddingMatrix, mask: Option<&[bool]>) -> Result<(), ModelError> {
        if x.cols() != self.dim() {
            return Err(ShapeError::Length {
                what: "embedding dimension",
                expected: self.dim(),
                got: x.cols(),
            }
            .into());
        }
        if let Pooling::Flatten { rows } = self.arch.pooling {
            if x.rows() != rows {
                return Err(ShapeError::Length {
                    what: "sequence length (flatten pooling)",
                    expected: rows,
                    got: x.rows(),
                }
                .into());
            }
        }
        if let Some(m) = mask {
            if m.len() != x.rows() {
                return Err(ShapeError::Length {
                    what: "pool mask length",
                    expected: x.rows(),
                    got: m.len(),
                }
                .into());
            }
        }
        Ok(())
    }

    fn pool(&self, x: &EmbeddingMatrix, mask: Option<&[bool]>) -> (Vec<f64>, usize) {
        match self.arch.pooling {
            Pooling::MeanMasked => {
                let mut p = vec![0.0; self.dim()];
                let mut n = 0usize;
                for i in 0..x.rows() {
                    if mask.is_some_and(|m| !m[i]) {
                        continue;
                    }
                    n += 1;
                    for (a, v) in p.iter_mut().zip(x.row(i)) {
                        *a += v;
                    }
                }
                if n > 0 {
                    let inv = n as f64;
                    p.iter_mut().for_each(|a| *a /= inv);
                }
                (p, n)
            }
            Pooling::Flatten { .. } => (x.as_slice().to_vec(), x.rows()),
        }
    }

    /// Forward pass keeping every intermediate value.
    pub fn trace(&self, x: &EmbeddingMatrix, mask: Option<&[bool]>) -> Result<Trace, ModelError> {
        self.check_input(x, mask)?;
        let (pooled, active_rows) = self.pool(x, mask);
        Ok(self.trace_pooled(pooled, active_rows))
    }

    fn trace_pooled(&self, pooled: Vec<f64>, active_rows: usize) -> Trace {
        let act = self.arch.activation;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = pooled.clone();
        for l in &self.layers {
            let z = l.apply(&a);
            a = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(a.clone());
        }
        let out = self.head.apply(&a);
        Trace {
            pooled,
            pre,
            post,
            out,
            active_rows,
        }
    }

    /// All head outputs (logits for a class head).
    pub fn outputs(&self, x: &EmbeddingMatrix, mask: Option<&[bool]>) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace(x, mask)?.out)
    }

    pub fn forward(&self, x: &EmbeddingMatrix, mask: Option<&[bool]>, target: Target) -> Result<f64, ModelError> {
        self.check_target(target)?;
        let t = self.trace(x, mask)?;
        Ok(select(&t.out, target))
    }

    /// Value and exact gradient with respect to every entry of `x`.
    pub fn gradient(
        &self,
        x: &EmbeddingMatrix,
        mask: Option<&[bool]>,
        target: Target,
    ) -> Result<ModelOutput, ModelError> {
        self.check_target(target)?;
        let t = self.trace(x, mask)?;
        let mut d_out = vec![0.0; self.head.out];
        d_out[target_index(target)] = 1.0;
        let d_pooled = self.backward(&t, &d_out, None);
        let gradient = self.unpool(x, mask, &t, &d_pooled);
        Ok(ModelOutput {
            value: select(&t.out, target),
            gradient: Some(gradient),
        })
    }

    /// Backpropagates `d_out` (derivative of the objective w.r.t. the head
    /// outputs) to the pooled vector, optionally accumulating parameter
    /// gradients.
    pub(crate) fn backward(&self, t: &Trace, d_out: &[f64], mut grads: Option<&mut ParamGrads>) -> Vec<f64> {
        let act = self.arch.activation;
        let last = t.post.last().unwrap_or(&t.pooled);
        if let Some(g) = grads.as_deref_mut() {
            accumulate(&mut g.head, d_out, last);
        }
        let mut d_a = self.head.back(d_out);
        for (li, l) in self.layers.iter().enumerate().rev() {
            let d_z: Vec<f64> = d_a
                .iter()
                .zip(&t.pre[li])
                .map(|(g, &z)| g * act.derivative(z))
                .collect();
            let inp = if li == 0 { &t.pooled } else { &t.post[li - 1] };
            if let Some(g) = grads.as_deref_mut() {
                accumulate(&mut g.layers[li], &d_z, inp);
            }
            d_a = l.back(&d_z);
        }
        d_a
    }

    /// Maps a derivative w.r.t. the pooled vector back to the input rows.
    pub(crate) fn unpool(
        &self,
        x: &EmbeddingMatrix,
        mask: Option<&[bool]>,
        t: &Trace,
        d_pooled: &[f64],
    ) -> EmbeddingMatrix {
        match self.arch.pooling {
            Pooling::MeanMasked => {
                let mut g = EmbeddingMatrix::zeros(x.rows(), x.cols());
                if t.active_rows == 0 {
                    return g;
                }
                let n = t.active_rows as f64;
                let row: Vec<f64> = d_pooled.iter().map(|v| v / n).collect();
                for i in 0..x.rows() {
                    if mask.is_some_and(|m| !m[i]) {
                        continue;
                    }
                    g.set_row(i, &row);
                }
                g
            }
            Pooling::Flatten { .. } => EmbeddingMatrix::from_vec(x.rows(), x.cols(), d_pooled.to_vec())
                .expect("flatten gradient has input shape"),
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let p: Self = serde_json::from_str(s)?;
        if p.version != PARAMS_FORMAT_VERSION {
            return Err(ModelError::FormatVersion(p.version));
        }
        p.check_dims()?;
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn accumulate(g: &mut Dense, d_z: &[f64], inp: &[f64]) {
    for (o, &dz) in d_z.iter().enumerate() {
        g.bias[o] += dz;
        if dz == 0.0 {
            continue;
        }
        let row = &mut g.weight[o * g.inp..(o + 1) * g.inp];
        for (w, a) in row.iter_mut().zip(inp) {
            *w += dz * a;
        }
    }
}

#[inline]
pub(crate) fn target_index(t: Target) -> usize {
    match t {
        Target::Scalar => 0,
        Target::Class(c) => c,
    }
}

#[inline]
fn select(out: &[f64], t: Target) -> f64 {
    out[target_index(t)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::UNK_ID;

    fn small_vocab() -> Vocab {
        Vocab::build(&Tokenizer::default(), ["the cat sat on the mat"])
    }

    fn random_x(rows: usize, cols: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_head_on_zero_input() {
        let mut p = ModelParams::init(ArchConfig::default(), small_vocab(), 3).unwrap();
        p.head = Dense::zeros(p.head.inp, p.head.out);
        let x = EmbeddingMatrix::zeros(4, 16);
        assert_eq!(p.forward(&x, None, Target::Scalar).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_forward_and_init() {
        let a = ModelParams::init(ArchConfig::default(), small_vocab(), 11).unwrap();
        let b = ModelParams::init(ArchConfig::default(), small_vocab(), 11).unwrap();
        assert_eq!(a, b);
        let x = random_x(5, 16, 1);
        let v1 = a.forward(&x, None, Target::Scalar).unwrap();
        let v2 = a.forward(&x, None, Target::Scalar).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn flatten_linear_is_dot_product() {
        let arch = ArchConfig {
            dim: 3,
            hidden: vec![],
            activation: Activation::Identity,
            pooling: Pooling::Flatten { rows: 2 },
            head: Head::Scalar,
            ..ArchConfig::default()
        };
        let vocab = Vocab::default();
        let emb = EmbeddingMatrix::zeros(vocab.len(), 3);
        let w = vec![0.5, -1.0, 2.0, 0.25, 3.0, -0.75];
        let head = Dense {
            inp: 6,
            out: 1,
            weight: w.clone(),
            bias: vec![0.0],
        };
        let p = ModelParams::from_parts(arch, vocab, emb, vec![], head).unwrap();
        let x = random_x(2, 3, 9);
        let dot: f64 = w.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
        let out = p.gradient(&x, None, Target::Scalar).unwrap();
        assert!((out.value - dot).abs() < 1e-15);
        assert_eq!(out.gradient.unwrap().as_slice(), w.as_slice());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = ArchConfig {
            head: Head::Classes(3),
            ..ArchConfig::default()
        };
        let p = ModelParams::init(arch, small_vocab(), 5).unwrap();
        let x = random_x(6, 16, 2);
        let target = Target::Class(1);
        let g = p.gradient(&x, None, target).unwrap().gradient.unwrap();
        let h = 1e-4;
        for k in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= h;
            let fd = (p.forward(&xp, None, target).unwrap() - p.forward(&xm, None, target).unwrap()) / (2.0 * h);
            let gk = g.as_slice()[k];
            assert!((fd - gk).abs() <= 1e-5 * gk.abs().max(1e-6), "entry {k}: {gk} vs {fd}");
        }
    }

    #[test]
    fn pad_rows_have_zero_gradient() {
        let p = ModelParams::init(ArchConfig::default(), small_vocab(), 8).unwrap();
        let mut tt = p.tokenize("the cat").unwrap();
        tt.pad_to(7);
        let x = p.embed(&tt);
        let mask = tt.pool_mask();
        let g = p.gradient(&x, Some(&mask), Target::Scalar).unwrap().gradient.unwrap();
        for i in 4..7 {
            assert!(g.row(i).iter().all(|&v| v == 0.0));
        }
        assert!(g.row(1).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn embed_lookup_rows() {
        let p = ModelParams::init(ArchConfig::default(), small_vocab(), 1).unwrap();
        let tt = p.tokenize("the the zebra").unwrap();
        let x = p.embed(&tt);
        assert_eq!(x.row(1), x.row(2));
        assert_eq!(x.row(3), p.embeddings.row(UNK_ID));
        let mut padded = tt.clone();
        padded.pad_to(7);
        assert_eq!(p.embed(&padded).row(6), p.pad_embedding());
    }

    #[test]
    fn shape_and_target_errors() {
        let p = ModelParams::init(ArchConfig::default(), small_vocab(), 1).unwrap();
        let x = EmbeddingMatrix::zeros(3, 5);
        assert!(matches!(p.forward(&x, None, Target::Scalar), Err(ModelError::Shape(_))));
        let x = EmbeddingMatrix::zeros(3, 16);
        assert!(matches!(
            p.forward(&x, None, Target::Class(0)),
            Err(ModelError::InvalidTarget { .. })
        ));
    }

    #[test]
    fn params_json_round_trip_is_bit_exact() {
        let p = ModelParams::init(ArchConfig::default(), small_vocab(), 42).unwrap();
        let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
        for (a, b) in p.embeddings.as_slice().iter().zip(back.embeddings.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(p, back);
    }
}
