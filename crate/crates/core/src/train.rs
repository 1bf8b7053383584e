//! Full-batch gradient descent that deliberately overfits the reference
//! model until every training document is classified correctly.

use serde::{Deserialize, Serialize};

use crate::model::{ArchConfig, Head, ModelError, ModelParams, ParamGrads};
use crate::tokenize::{Tokenizer, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Also update the embedding table (needed for unseen words to separate).
    pub train_embeddings: bool,
    /// Scalar head only: converged once every |prediction - label| is below this.
    pub scalar_tolerance: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_epochs: 500,
            seed: 0,
            train_embeddings: true,
            scalar_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes { labels: Vec<usize>, n_classes: usize },
    Scalar(Vec<f64>),
}

impl Labels {
    fn len(&self) -> usize {
        match self {
            Labels::Classes { labels, .. } => labels.len(),
            Labels::Scalar(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Number of parameter updates performed before convergence.
    pub epochs: usize,
    pub loss: Vec<f64>,
    /// Running minimum of `loss`.
    pub best_loss: Vec<f64>,
    pub accuracy: f64,
}

struct Batch {
    ids: Vec<Vec<usize>>,
}

/// Trains the reference model on all of `texts` until training accuracy is
/// 1.0 (or, for a scalar head, every residual is within tolerance).
pub fn train_overfit(
    texts: &[String],
    labels: &Labels,
    arch: &ArchConfig,
    trainer: &TrainerConfig,
) -> Result<(ModelParams, TrainReport), ModelError> {
    if texts.len() != labels.len() {
        return Err(ModelError::InvalidConfig(format!(
            "{} texts but {} labels",
            texts.len(),
            labels.len()
        )));
    }
    match (labels, arch.head) {
        (Labels::Classes { labels, n_classes }, Head::Classes(k)) => {
            if *n_classes != k {
                return Err(ModelError::InvalidConfig(format!(
                    "head has {k} classes, labels declare {n_classes}"
                )));
            }
            if k < 2 {
                return Err(ModelError::InvalidConfig("need at least 2 classes".into()));
            }
            for c in 0..k {
                if !labels.contains(&c) {
                    return Err(ModelError::InvalidConfig(format!("class {c} has no documents")));
                }
            }
            if labels.iter().any(|&l| l >= k) {
                return Err(ModelError::InvalidConfig("label out of range".into()));
            }
        }
        (Labels::Scalar(_), Head::Scalar) => {
            if texts.is_empty() {
                return Err(ModelError::InvalidConfig("empty training set".into()));
            }
        }
        _ => return Err(ModelError::InvalidConfig("labels do not match the head type".into())),
    }

    let tokenizer = Tokenizer::new(arch.tokenizer);
    let vocab = Vocab::build(&tokenizer, texts.iter().map(String::as_str));
    let mut params = ModelParams::init(arch.clone(), vocab, trainer.seed)?;
    let mut batch = Batch {
        ids: Vec::with_capacity(texts.len()),
    };
    for t in texts {
        let tt = tokenizer.tokenize(t)?;
        batch.ids.push(params.vocab.ids(&tt));
    }

    let mut report = TrainReport {
        epochs: 0,
        loss: Vec::new(),
        best_loss: Vec::new(),
        accuracy: 0.0,
    };
    let mut best = f64::INFINITY;
    for epoch in 0..=trainer.max_epochs {
        let step = evaluate(&params, &batch, labels, trainer)?;
        best = best.min(step.loss);
        report.loss.push(step.loss);
        report.best_loss.push(best);
        report.accuracy = step.accuracy;
        if step.converged {
            report.epochs = epoch;
            return Ok((params, report));
        }
        if epoch == trainer.max_epochs {
            break;
        }
        apply(&mut params, &step, trainer.learning_rate, trainer.train_embeddings);
    }
    Err(ModelError::NotConverged {
        max_epochs: trainer.max_epochs,
        accuracy: report.accuracy,
    })
}

struct Step {
    loss: f64,
    accuracy: f64,
    converged: bool,
    grads: ParamGrads,
    emb_grad: Vec<f64>,
}

fn evaluate(p: &ModelParams, batch: &Batch, labels: &Labels, cfg: &TrainerConfig) -> Result<Step, ModelError> {
    let n = batch.ids.len() as f64;
    let mut grads = ParamGrads::zeros_like(p);
    let mut emb_grad = vec![0.0; p.embeddings.as_slice().len()];
    let mut loss = 0.0;
    let mut correct = 0usize;
    let d = p.dim();
    for (doc, ids) in batch.ids.iter().enumerate() {
        let x = p.embed_ids(ids);
        let t = p.trace(&x, None)?;
        let d_out: Vec<f64> = match labels {
            Labels::Classes { labels, .. } => {
                let y = labels[doc];
                let probs = softmax(&t.out);
                loss -= probs[y].max(f64::MIN_POSITIVE).ln() / n;
                let argmax = argmax(&t.out);
                if argmax == y {
                    correct += 1;
                }
                probs
                    .iter()
                    .enumerate()
                    .map(|(c, &pc)| (pc - if c == y { 1.0 } else { 0.0 }) / n)
                    .collect()
            }
            Labels::Scalar(ys) => {
                let r = t.out[0] - ys[doc];
                loss += 0.5 * r * r / n;
                if r.abs() <= cfg.scalar_tolerance {
                    correct += 1;
                }
                vec![r / n]
            }
        };
        let d_pooled = p.backward(&t, &d_out, Some(&mut grads));
        if cfg.train_embeddings {
            let gx = p.unpool(&x, None, &t, &d_pooled);
            for (r, &id) in ids.iter().enumerate() {
                for (a, g) in emb_grad[id * d..(id + 1) * d].iter_mut().zip(gx.row(r)) {
                    *a += g;
                }
            }
        }
    }
    let accuracy = correct as f64 / n;
    Ok(Step {
        loss,
        accuracy,
        converged: correct == batch.ids.len(),
        grads,
        emb_grad,
    })
}

fn apply(p: &mut ModelParams, step: &Step, lr: f64, train_embeddings: bool) {
    for (l, g) in p.layers.iter_mut().zip(&step.grads.layers) {
        sgd(&mut l.weight, &g.weight, lr);
        sgd(&mut l.bias, &g.bias, lr);
    }
    sgd(&mut p.head.weight, &step.grads.head.weight, lr);
    sgd(&mut p.head.bias, &step.grads.head.bias, lr);
    if train_embeddings {
        sgd(p.embeddings.as_mut_slice(), &step.emb_grad, lr);
    }
}

fn sgd(w: &mut [f64], g: &[f64], lr: f64) {
    for (a, b) in w.iter_mut().zip(g) {
        *a -= lr * b;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of a trained class-head model.
pub fn predict_class(p: &ModelParams, text: &str) -> Result<usize, ModelError> {
    let tt = p.tokenize(text)?;
    let x = p.embed(&tt);
    Ok(argmax(&p.outputs(&x, None)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(k: usize) -> ArchConfig {
        ArchConfig {
            head: Head::Classes(k),
            ..ArchConfig::default()
        }
    }

    #[test]
    fn one_document_per_class_converges_fast() {
        let texts: Vec<String> = ["a happy dog", "a sad cat", "the old fox"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let labels = Labels::Classes {
            labels: vec![0, 1, 2],
            n_classes: 3,
        };
        let (p, rep) = train_overfit(&texts, &labels, &arch(3), &TrainerConfig::default()).unwrap();
        assert!(rep.epochs <= 20, "took {} epochs", rep.epochs);
        assert_eq!(rep.accuracy, 1.0);
        for (i, t) in texts.iter().enumerate() {
            assert_eq!(predict_class(&p, t).unwrap(), i);
        }
    }

    #[test]
    fn identical_documents_do_not_converge() {
        let texts: Vec<String> = vec!["same words here".into(), "same words here".into()];
        let labels = Labels::Classes {
            labels: vec![0, 1],
            n_classes: 2,
        };
        let cfg = TrainerConfig {
            max_epochs: 50,
            ..TrainerConfig::default()
        };
        let err = train_overfit(&texts, &labels, &arch(2), &cfg).unwrap_err();
        assert!(matches!(err, ModelError::NotConverged { max_epochs: 50, .. }));
    }

    #[test]
    fn best_loss_is_monotone_and_run_is_deterministic() {
        let texts: Vec<String> = ["red apple pie", "blue sky day", "red wine glass", "blue sea wave"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let labels = Labels::Classes {
            labels: vec![0, 1, 0, 1],
            n_classes: 2,
        };
        let cfg = TrainerConfig::default();
        let (p1, r1) = train_overfit(&texts, &labels, &arch(2), &cfg).unwrap();
        let (p2, r2) = train_overfit(&texts, &labels, &arch(2), &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        assert!(r1.best_loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn scalar_head_regression() {
        let texts: Vec<String> = ["we will win", "nothing works", "maybe later"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let labels = Labels::Scalar(vec![1.0, -1.0, 0.0]);
        let cfg = TrainerConfig {
            learning_rate: 0.2,
            ..TrainerConfig::default()
        };
        let (_, rep) = train_overfit(&texts, &labels, &ArchConfig::default(), &cfg).unwrap();
        assert_eq!(rep.accuracy, 1.0);
    }

    #[test]
    fn rejects_missing_class() {
        let texts: Vec<String> = vec!["a".into(), "b".into()];
        let labels = Labels::Classes {
            labels: vec![0, 0],
            n_classes: 2,
        };
        assert!(matches!(
            train_overfit(&texts, &labels, &arch(2), &TrainerConfig::default()),
            Err(ModelError::InvalidConfig(_))
        ));
    }
}
