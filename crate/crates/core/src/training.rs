//! Training configuration and the multinomial logistic regression head shared
//! by the reference clip classifier and the AC saliency scorer.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};

/// Stream tags for [`crate::seed::derive_seed`].
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const HOLDOUT: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Ranking margin of the pairwise hinge.
    pub margin_eta: f64,
    pub pairs_per_video_per_epoch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0,
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
            margin_eta: 0.1,
            pairs_per_video_per_epoch: 16,
        }
    }
}

impl TrainingConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.margin_eta.is_nan() || self.margin_eta < 0.0 {
            return Err(Error::config("margin_eta", "must be >= 0"));
        }
        if self.pairs_per_video_per_epoch == 0 {
            return Err(Error::config("pairs_per_video_per_epoch", "must be >= 1"));
        }
        Ok(())
    }
}

/// One structured record per training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub heldout: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6}", self.epoch, self.loss)?;
        if let Some(h) = self.heldout {
            write!(f, " heldout={h:.6}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: T,
    pub history: Vec<EpochRecord>,
}

pub(crate) fn check_finite(loss: f64, context: impl FnOnce() -> String) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { context: context() })
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax(W x + b)` with `W: C x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl SoftmaxHead {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        SoftmaxHead {
            weights: Array2::zeros((classes, dim)),
            bias: Array1::zeros(classes),
        }
    }

    /// Uniform in `[-0.01, 0.01]`.
    pub fn seeded(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed, stream::INIT);
        let mut draw = || rng.random_range(-0.01..=0.01);
        SoftmaxHead {
            weights: Array2::from_shape_simple_fn((classes, dim), &mut draw),
            bias: Array1::from_shape_simple_fn(classes, &mut draw),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView1<f64>) -> Vec<f64> {
        (self.weights.dot(&x) + &self.bias).to_vec()
    }

    pub fn probs(&self, x: ArrayView1<f64>) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// `-log p_y(x)`.
    pub fn cross_entropy(&self, x: ArrayView1<f64>, y: usize) -> f64 {
        let z = self.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        lse - z[y]
    }

    /// Adds `scale * d CE / d params` into the gradient accumulators.
    pub fn accumulate_ce_grad(
        &self,
        x: ArrayView1<f64>,
        y: usize,
        scale: f64,
        grad_w: &mut Array2<f64>,
        grad_b: &mut Array1<f64>,
    ) {
        let mut g = self.probs(x);
        g[y] -= 1.0;
        for (c, gc) in g.iter().enumerate() {
            let s = scale * gc;
            grad_w.row_mut(c).scaled_add(s, &x);
            grad_b[c] += s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Parameters flattened as `[W (row-major), b]`.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.weights.len();
        assert_eq!(p.len(), n + self.bias.len());
        for (w, v) in self.weights.iter_mut().zip(&p[..n]) {
            *w = *v;
        }
        for (b, v) in self.bias.iter_mut().zip(&p[n..]) {
            *b = *v;
        }
    }
}

/// A labeled training example borrowed from a dataset.
pub type Example<'a> = (ArrayView1<'a, f64>, usize);

pub fn mean_cross_entropy(head: &SoftmaxHead, examples: &[Example<'_>]) -> f64 {
    examples.iter().map(|(x, y)| head.cross_entropy(*x, *y)).sum::<f64>() / examples.len() as f64
}

/// Largest step size for which full-batch gradient descent on the mean
/// cross-entropy is guaranteed not to increase the loss: `1 / L` with the
/// smoothness bound `L = 0.5 * max ||(x, 1)||^2`.
pub fn stable_learning_rate(examples: &[Example<'_>]) -> f64 {
    let max_sq = examples
        .iter()
        .map(|(x, _)| x.dot(x) + 1.0)
        .fold(0.0, f64::max);
    1.0 / (0.5 * max_sq)
}

/// Mini-batch SGD on mean cross-entropy, starting from `head`.
pub fn train_softmax(
    mut head: SoftmaxHead,
    examples: &[Example<'_>],
    cfg: &TrainingConfig,
    label: &str,
) -> Result<Trained<SoftmaxHead>> {
    cfg.check()?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!("{label}: no training examples")));
    }
    let mut rng: Rng = rng_from(cfg.seed, stream::SHUFFLE);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad_w = Array2::zeros(head.weights.raw_dim());
    let mut grad_b = Array1::zeros(head.bias.raw_dim());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad_w.fill(0.0);
            grad_b.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = examples[i];
                head.accumulate_ce_grad(x, y, scale, &mut grad_w, &mut grad_b);
            }
            head.weights.scaled_add(-cfg.learning_rate, &grad_w);
            head.bias.scaled_add(-cfg.learning_rate, &grad_b);
        }
        let loss = mean_cross_entropy(&head, examples);
        check_finite(loss, || format!("{label} cross-entropy at epoch {epoch}"))?;
        let rec = EpochRecord {
            epoch,
            loss,
            heldout: None,
        };
        log::info!("{label} {rec}");
        history.push(rec);
    }
    Ok(Trained {
        model: head,
        history,
    })
}
