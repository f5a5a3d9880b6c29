//! Saliency scorers `s(phi) in [0,1]`, their training objectives, and the
//! pseudo-label pairs derived from a reference clip classifier.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, clip_examples, ClipClassifier};
use crate::datamodel::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash_str, rng_from, Rng};
use crate::training::{self, check_finite, stream, EpochRecord, SoftmaxHead, Trained, TrainingConfig};

pub const DEFAULT_HIDDEN_WIDTH: usize = 16;
pub const HELDOUT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    LinearSigmoid,
    #[serde(rename = "mlp-1hidden")]
    Mlp1Hidden,
    AcClassifier,
}

impl ScorerKind {
    pub fn tag(self) -> u8 {
        match self {
            ScorerKind::LinearSigmoid => 1,
            ScorerKind::Mlp1Hidden => 2,
            ScorerKind::AcClassifier => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(ScorerKind::LinearSigmoid),
            2 => Some(ScorerKind::Mlp1Hidden),
            3 => Some(ScorerKind::AcClassifier),
            _ => None,
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::LinearSigmoid => "linear-sigmoid",
            ScorerKind::Mlp1Hidden => "mlp-1hidden",
            ScorerKind::AcClassifier => "ac-classifier",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-sigmoid" => Ok(ScorerKind::LinearSigmoid),
            "mlp-1hidden" => Ok(ScorerKind::Mlp1Hidden),
            "ac-classifier" => Ok(ScorerKind::AcClassifier),
            other => Err(Error::config("kind", format!("unknown scorer kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerParams {
    LinearSigmoid {
        weights: Array1<f64>,
        bias: f64,
    },
    Mlp {
        hidden_w: Array2<f64>,
        hidden_b: Array1<f64>,
        out_w: Array1<f64>,
        out_b: f64,
    },
    Ac(SoftmaxHead),
}

/// A trainable map from one modality's clip feature to a score in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScorer {
    pub modality: String,
    pub params: ScorerParams,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SaliencyScorer {
    /// Seeded initialization. Linear heads start uniform in `[-0.01, 0.01]`;
    /// the hidden layer of the MLP uses `1/sqrt(fan_in)` scaling so ReLU units
    /// are not born dead.
    pub fn init(modality: &str, kind: ScorerKind, dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed, stream::INIT);
        let params = match kind {
            ScorerKind::LinearSigmoid => ScorerParams::LinearSigmoid {
                weights: Array1::from_shape_simple_fn(dim, || rng.random_range(-0.01..=0.01)),
                bias: rng.random_range(-0.01..=0.01),
            },
            ScorerKind::Mlp1Hidden => {
                let a = 1.0 / (dim as f64).sqrt();
                let b = 1.0 / (hidden as f64).sqrt();
                ScorerParams::Mlp {
                    hidden_w: Array2::from_shape_simple_fn((hidden, dim), || rng.random_range(-a..=a)),
                    hidden_b: Array1::zeros(hidden),
                    out_w: Array1::from_shape_simple_fn(hidden, || rng.random_range(-b..=b)),
                    out_b: 0.0,
                }
            }
            ScorerKind::AcClassifier => ScorerParams::Ac(SoftmaxHead::seeded(classes, dim, seed)),
        };
        SaliencyScorer {
            modality: modality.to_string(),
            params,
        }
    }

    pub fn kind(&self) -> ScorerKind {
        match self.params {
            ScorerParams::LinearSigmoid { .. } => ScorerKind::LinearSigmoid,
            ScorerParams::Mlp { .. } => ScorerKind::Mlp1Hidden,
            ScorerParams::Ac(_) => ScorerKind::AcClassifier,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.params {
            ScorerParams::LinearSigmoid { weights, .. } => weights.len(),
            ScorerParams::Mlp { hidden_w, .. } => hidden_w.ncols(),
            ScorerParams::Ac(h) => h.dim(),
        }
    }

    pub fn hidden_width(&self) -> Option<usize> {
        match &self.params {
            ScorerParams::Mlp { hidden_w, .. } => Some(hidden_w.nrows()),
            _ => None,
        }
    }

    fn check_dim(&self, x: &ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                what: "scorer input",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Saliency of one clip feature.
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(&x)?;
        Ok(match &self.params {
            ScorerParams::LinearSigmoid { weights, bias } => sigmoid(weights.dot(&x) + bias),
            ScorerParams::Mlp {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                let h = (hidden_w.dot(&x) + hidden_b).mapv(|a| a.max(0.0));
                sigmoid(out_w.dot(&h) + out_b)
            }
            ScorerParams::Ac(head) => head.probs(x).into_iter().fold(0.0, f64::max),
        })
    }

    /// Score together with `d score / d params` in [`Self::flat_params`] order.
    pub fn score_with_grad(&self, x: ArrayView1<f64>) -> Result<(f64, Vec<f64>)> {
        self.check_dim(&x)?;
        Ok(match &self.params {
            ScorerParams::LinearSigmoid { weights, bias } => {
                let s = sigmoid(weights.dot(&x) + bias);
                let g = s * (1.0 - s);
                let mut grad: Vec<f64> = x.iter().map(|xi| g * xi).collect();
                grad.push(g);
                (s, grad)
            }
            ScorerParams::Mlp {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                let pre = hidden_w.dot(&x) + hidden_b;
                let h = pre.mapv(|a| a.max(0.0));
                let s = sigmoid(out_w.dot(&h) + out_b);
                let g = s * (1.0 - s);
                let (hn, d) = hidden_w.dim();
                let mut grad = vec![0.0; hn * d + hn + hn + 1];
                for k in 0..hn {
                    if pre[k] > 0.0 {
                        let dk = g * out_w[k];
                        for (j, xj) in x.iter().enumerate() {
                            grad[k * d + j] = dk * xj;
                        }
                        grad[hn * d + k] = dk;
                    }
                    grad[hn * d + hn + k] = g * h[k];
                }
                grad[hn * d + 2 * hn] = g;
                (s, grad)
            }
            ScorerParams::Ac(head) => {
                let p = head.probs(x);
                let c_star = argmax(&p);
                let s = p[c_star];
                let (cn, d) = head.weights.dim();
                let mut grad = vec![0.0; cn * d + cn];
                for k in 0..cn {
                    let dz = s * (if k == c_star { 1.0 } else { 0.0 } - p[k]);
                    for (j, xj) in x.iter().enumerate() {
                        grad[k * d + j] = dz * xj;
                    }
                    grad[cn * d + k] = dz;
                }
                (s, grad)
            }
        })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match &self.params {
            ScorerParams::LinearSigmoid { weights, bias } => {
                weights.iter().copied().chain(std::iter::once(*bias)).collect()
            }
            ScorerParams::Mlp {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => hidden_w
                .iter()
                .chain(hidden_b.iter())
                .chain(out_w.iter())
                .copied()
                .chain(std::iter::once(*out_b))
                .collect(),
            ScorerParams::Ac(h) => h.flat_params(),
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.params {
            ScorerParams::LinearSigmoid { weights, .. } => weights.len() + 1,
            ScorerParams::Mlp { hidden_w, .. } => hidden_w.len() + 2 * hidden_w.nrows() + 1,
            ScorerParams::Ac(h) => h.weights.len() + h.bias.len(),
        }
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter count");
        match &mut self.params {
            ScorerParams::LinearSigmoid { weights, bias } => {
                let d = weights.len();
                weights.iter_mut().zip(&p[..d]).for_each(|(w, v)| *w = *v);
                *bias = p[d];
            }
            ScorerParams::Mlp {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            } => {
                let mut it = p.iter().copied();
                hidden_w.iter_mut().for_each(|w| *w = it.next().unwrap());
                hidden_b.iter_mut().for_each(|w| *w = it.next().unwrap());
                out_w.iter_mut().for_each(|w| *w = it.next().unwrap());
                *out_b = it.next().unwrap();
            }
            ScorerParams::Ac(h) => h.set_flat_params(p),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    /// Saliency of clip `i` of `v`.
    pub fn score_clip(&self, v: &VideoRecord, i: usize) -> Result<f64> {
        self.score(v.feature(&self.modality, i)?)
    }

    pub fn score_all(&self, v: &VideoRecord) -> Result<Vec<f64>> {
        let m = v.modality(&self.modality)?;
        m.rows().into_iter().map(|r| self.score(r)).collect()
    }
}

/// AC saliency: the largest class probability of the scorer's classifier head.
pub fn ac_saliency(h: &SaliencyScorer, x: ArrayView1<f64>) -> Result<f64> {
    if h.kind() != ScorerKind::AcClassifier {
        return Err(Error::InvalidInput(format!(
            "ac_saliency needs an ac-classifier scorer, got {}",
            h.kind()
        )));
    }
    h.score(x)
}

/// Per-clip mean of several scorers' outputs.
pub fn score_video(scorers: &[SaliencyScorer], v: &VideoRecord) -> Result<Vec<f64>> {
    if scorers.is_empty() {
        return Err(Error::InvalidInput("score_video needs at least one scorer".into()));
    }
    let mut acc = vec![0.0; v.num_clips];
    for s in scorers {
        for (a, x) in acc.iter_mut().zip(s.score_all(v)?) {
            *a += x;
        }
    }
    let n = scorers.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// A pseudo-labeled ordered clip pair from one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoPair {
    pub video: String,
    pub i: usize,
    pub j: usize,
    /// `+1` iff clip `i` has a strictly higher true-class score than clip `j`.
    pub z: i8,
}

pub fn pseudo_label(score_i: f64, score_j: f64) -> i8 {
    if score_i > score_j {
        1
    } else {
        -1
    }
}

/// Draws `count` uniform ordered pairs `i != j` and labels them from `scores`.
pub fn pseudo_pairs_from_scores(video: &str, scores: &[f64], count: usize, rng: &mut Rng) -> Vec<PseudoPair> {
    let l = scores.len();
    if l < 2 {
        log::debug!("video `{video}` has {l} clip(s); no pairs");
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..l);
            let mut j = rng.random_range(0..l - 1);
            if j >= i {
                j += 1;
            }
            PseudoPair {
                video: video.to_string(),
                i,
                j,
                z: pseudo_label(scores[i], scores[j]),
            }
        })
        .collect()
}

/// Pseudo-labeled pairs for one video, seeded from `cfg.seed` and the video id.
pub fn make_pseudo_pairs(f: &dyn ClipClassifier, v: &VideoRecord, cfg: &TrainingConfig) -> Result<Vec<PseudoPair>> {
    let scores = f.true_class_scores(v)?;
    let mut rng = rng_from(derive_seed(cfg.seed, hash_str(&v.id)), stream::PAIRS);
    Ok(pseudo_pairs_from_scores(&v.id, &scores, cfg.pairs_per_video_per_epoch, &mut rng))
}

/// Pairwise margin hinge: `max(-z (s_i - s_j + eta), 0)`.
pub fn sal_rank_loss(s_i: f64, s_j: f64, z: i8, eta: f64) -> f64 {
    (-(z as f64) * (s_i - s_j + eta)).max(0.0)
}

/// Subgradient of [`sal_rank_loss`] w.r.t. the scorer parameters; zero when the
/// hinge is inactive or exactly at the kink.
pub fn sal_rank_gradient(
    scorer: &SaliencyScorer,
    x_i: ArrayView1<f64>,
    x_j: ArrayView1<f64>,
    z: i8,
    eta: f64,
) -> Result<Vec<f64>> {
    let (s_i, g_i) = scorer.score_with_grad(x_i)?;
    let (s_j, g_j) = scorer.score_with_grad(x_j)?;
    let z = z as f64;
    if -z * (s_i - s_j + eta) <= 0.0 {
        return Ok(vec![0.0; g_i.len()]);
    }
    Ok(g_i.iter().zip(&g_j).map(|(a, b)| -z * (a - b)).collect())
}

/// Trains an AC scorer: a clip classifier over `modality` whose saliency is
/// its maximum class probability.
pub fn train_ac(train: &Dataset, modality: &str, cfg: &TrainingConfig) -> Result<Trained<SaliencyScorer>> {
    let examples = clip_examples(train, modality)?;
    let dim = examples
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::InvalidInput("empty training set".into()))?;
    let init = SoftmaxHead::seeded(train.num_classes(), dim, cfg.seed);
    let out = training::train_softmax(init, &examples, cfg, &format!("ac[{modality}]"))?;
    Ok(Trained {
        model: SaliencyScorer {
            modality: modality.to_string(),
            params: ScorerParams::Ac(out.model),
        },
        history: out.history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub hidden_width: usize,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec {
            kind: ScorerKind::LinearSigmoid,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
        }
    }
}

/// Trains a ranking scorer on pseudo-labeled pairs drawn from `f`.
pub fn train_sal_rank(
    train: &Dataset,
    f: &dyn ClipClassifier,
    modality: &str,
    spec: ScorerSpec,
    cfg: &TrainingConfig,
) -> Result<Trained<SaliencyScorer>> {
    let m = train
        .manifest
        .modality(modality)
        .ok_or_else(|| Error::config("modality", format!("`{modality}` not in dataset")))?;
    let init = SaliencyScorer::init(modality, spec.kind, m.dim, spec.hidden_width, train.num_classes(), cfg.seed);
    let out = train_pairwise(SingleScorer(init), train, f, cfg, &format!("sal-rank[{modality}]"))?;
    Ok(Trained {
        model: out.model.0,
        history: out.history,
    })
}

/// A differentiable clip-scoring model trained by the pairwise hinge.
pub(crate) trait PairModel: Clone {
    fn score(&self, v: &VideoRecord, i: usize) -> Result<f64>;
    fn score_with_grad(&self, v: &VideoRecord, i: usize) -> Result<(f64, Vec<f64>)>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
}

#[derive(Clone)]
pub(crate) struct SingleScorer(pub SaliencyScorer);

impl PairModel for SingleScorer {
    fn score(&self, v: &VideoRecord, i: usize) -> Result<f64> {
        self.0.score_clip(v, i)
    }

    fn score_with_grad(&self, v: &VideoRecord, i: usize) -> Result<(f64, Vec<f64>)> {
        self.0.score_with_grad(v.feature(&self.0.modality, i)?)
    }

    fn params(&self) -> Vec<f64> {
        self.0.flat_params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.0.set_flat_params(p)
    }
}

/// Held-out pair: (video index, i, j, sign of f_y(i) - f_y(j)).
type RankedPair = (usize, usize, usize, f64);

/// Fraction of pairs whose score order agrees with the reference order; score
/// ties count as disagreement.
fn pair_accuracy<M: PairModel>(model: &M, videos: &[&VideoRecord], pairs: &[RankedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; videos.len()];
    let mut correct = 0usize;
    for &(vi, i, j, sign) in pairs {
        if cache[vi].is_none() {
            let v = videos[vi];
            cache[vi] = Some((0..v.num_clips).map(|c| model.score(v, c)).collect::<Result<_>>()?);
        }
        let s = cache[vi].as_ref().unwrap();
        if (s[i] - s[j]) * sign > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Every unordered pair with distinct reference scores.
fn ranked_pairs(true_scores: &[Vec<f64>]) -> Vec<RankedPair> {
    let mut out = Vec::new();
    for (vi, s) in true_scores.iter().enumerate() {
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                if s[i] != s[j] {
                    out.push((vi, i, j, (s[i] - s[j]).signum()));
                }
            }
        }
    }
    out
}

/// Pair-ranking accuracy of `scorers` (averaged) against `f`'s true-class
/// scores over all clip pairs of `videos`.
pub fn pair_ranking_accuracy(scorers: &[SaliencyScorer], f: &dyn ClipClassifier, videos: &[VideoRecord]) -> Result<f64> {
    let truth = videos.iter().map(|v| f.true_class_scores(v)).collect::<Result<Vec<_>>>()?;
    let pairs = ranked_pairs(&truth);
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let scores = videos.iter().map(|v| score_video(scorers, v)).collect::<Result<Vec<_>>>()?;
    let correct = pairs
        .iter()
        .filter(|&&(vi, i, j, sign)| (scores[vi][i] - scores[vi][j]) * sign > 0.0)
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Seeded split of video indices into (train, held-out).
pub(crate) fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut rng_from(seed, stream::HOLDOUT));
    let n_hold = ((n as f64 * HELDOUT_FRACTION).ceil() as usize).clamp(1, n - 1);
    let held = idx.split_off(n - n_hold);
    let mut train = idx;
    train.sort_unstable();
    let mut held = held;
    held.sort_unstable();
    (train, held)
}

/// SGD on the pairwise hinge with pairs redrawn every epoch, keeping the
/// parameters with the best held-out pair-ranking accuracy.
pub(crate) fn train_pairwise<M: PairModel>(
    mut model: M,
    train: &Dataset,
    f: &dyn ClipClassifier,
    cfg: &TrainingConfig,
    label: &str,
) -> Result<Trained<M>> {
    cfg.check()?;
    if cfg.epochs == 0 {
        return Ok(Trained {
            model,
            history: Vec::new(),
        });
    }
    let truth = train
        .videos
        .iter()
        .map(|v| f.true_class_scores(v))
        .collect::<Result<Vec<_>>>()?;
    let (fit_idx, held_idx) = holdout_split(train.videos.len(), cfg.seed);
    let held_videos: Vec<&VideoRecord> = held_idx.iter().map(|&i| &train.videos[i]).collect();
    let held_truth: Vec<Vec<f64>> = held_idx.iter().map(|&i| truth[i].clone()).collect();
    let held_pairs = ranked_pairs(&held_truth);

    let mut rng = rng_from(cfg.seed, stream::PAIRS);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut params = model.params();

    for epoch in 1..=cfg.epochs {
        let mut pairs: Vec<(usize, PseudoPair)> = Vec::new();
        for &vi in &fit_idx {
            let v = &train.videos[vi];
            let drawn = pseudo_pairs_from_scores(&v.id, &truth[vi], cfg.pairs_per_video_per_epoch, &mut rng);
            pairs.extend(drawn.into_iter().map(|p| (vi, p)));
        }
        pairs.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut grad = vec![0.0; params.len()];
        for batch in pairs.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for (vi, p) in batch {
                let v = &train.videos[*vi];
                let (s_i, g_i) = model.score_with_grad(v, p.i)?;
                let (s_j, g_j) = model.score_with_grad(v, p.j)?;
                let loss = sal_rank_loss(s_i, s_j, p.z, cfg.margin_eta);
                loss_sum += loss;
                if loss > 0.0 {
                    let z = p.z as f64;
                    for ((g, a), b) in grad.iter_mut().zip(&g_i).zip(&g_j) {
                        *g += scale * -z * (a - b);
                    }
                }
            }
            for (w, g) in params.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            model.set_params(&params);
        }
        let loss = if pairs.is_empty() { 0.0 } else { loss_sum / pairs.len() as f64 };
        check_finite(loss, || format!("{label} ranking loss at epoch {epoch}"))?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{label} parameters at epoch {epoch}"),
            });
        }

        let heldout = if held_pairs.is_empty() {
            None
        } else {
            Some(pair_accuracy(&model, &held_videos, &held_pairs)?)
        };
        let rec = EpochRecord { epoch, loss, heldout };
        log::info!("{label} {rec}");
        history.push(rec);

        let metric = heldout.unwrap_or(f64::NEG_INFINITY);
        if held_pairs.is_empty() || best.as_ref().is_none_or(|(b, _)| metric > *b) {
            best = Some((metric, params.clone()));
        }
    }
    if let Some((_, p)) = best {
        model.set_params(&p);
    }
    Ok(Trained { model, history })
}
