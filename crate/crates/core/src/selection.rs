//! Clip selection strategies: saliency top-K, the Random / Uniform /
//! Empirical / Dense baselines, the label-aware Oracle, and stride pre-filtering.

use std::cmp::Ordering;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classifier::ClipClassifier;
use crate::datamodel::{normalized_location, Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const DEFAULT_BINS: usize = 100;
pub const HISTOGRAM_TOLERANCE: f64 = 1e-9;
/// Rejection-sampling attempts per requested clip before falling back to
/// uniform fill.
pub const EMPIRICAL_ATTEMPTS_PER_CLIP: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub video_id: String,
    pub strategy: String,
    #[serde(rename = "K")]
    pub k_requested: usize,
    /// Strictly increasing clip indices.
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl SelectionResult {
    fn new(strategy: &str, k: usize, indices: Vec<usize>) -> Self {
        SelectionResult {
            video_id: String::new(),
            strategy: strategy.to_string(),
            k_requested: k,
            indices,
            scores: None,
        }
    }

    pub fn for_video(mut self, id: &str) -> Self {
        self.video_id = id.to_string();
        self
    }

    pub fn with_strategy(mut self, strategy: &str) -> Self {
        self.strategy = strategy.to_string();
        self
    }

    /// Attaches the saliency of each selected clip from a full-length score vector.
    pub fn with_scores_from(mut self, scores: &[f64]) -> Self {
        self.scores = Some(self.indices.iter().map(|&i| scores[i]).collect());
        self
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Writes one JSON object per selection.
pub fn write_selections<W: Write>(mut w: W, sels: &[SelectionResult]) -> std::io::Result<()> {
    for s in sels {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Descending score, lower index first on ties.
pub(crate) fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `rank[i]` = position of clip `i` in [`rank_order`], 0 = best.
pub(crate) fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut r = vec![0; scores.len()];
    for (pos, i) in rank_order(scores).into_iter().enumerate() {
        r[i] = pos;
    }
    r
}

pub(crate) fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut top: Vec<usize> = rank_order(scores).into_iter().take(k).collect();
    top.sort_unstable();
    top
}

/// Indices of the `k` largest scores (all indices when `k >= L`).
pub fn select_topk(scores: &[f64], k: usize) -> SelectionResult {
    SelectionResult::new("topk", k, top_indices(scores, k)).with_scores_from(scores)
}

/// Top-`k` restricted to `candidates`, a list of `(clip index, score)`.
pub fn select_topk_among(candidates: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    let mut out: Vec<usize> = c.into_iter().take(k).map(|(i, _)| i).collect();
    out.sort_unstable();
    out
}

/// Top-`k` clips by the classifier's score for the ground-truth label.
pub fn select_oracle(f: &dyn ClipClassifier, v: &VideoRecord, k: usize) -> Result<SelectionResult> {
    let scores = f.true_class_scores(v)?;
    Ok(select_topk(&scores, k).with_strategy("oracle").for_video(&v.id))
}

pub fn select_random(num_clips: usize, k: usize, seed: u64) -> SelectionResult {
    let n = k.min(num_clips);
    let mut rng = rng_from(seed, 0);
    let mut idx = rand::seq::index::sample(&mut rng, num_clips, n).into_vec();
    idx.sort_unstable();
    SelectionResult::new("random", k, idx)
}

/// Midpoints of `k` equal segments: `floor((j + 0.5) L / k)`.
pub fn select_uniform(num_clips: usize, k: usize) -> SelectionResult {
    SelectionResult::new("uniform", k, uniform_indices(num_clips, k))
}

fn uniform_indices(num_clips: usize, k: usize) -> Vec<usize> {
    if k >= num_clips {
        return (0..num_clips).collect();
    }
    let mut out: Vec<usize> = (0..k).map(|j| (2 * j + 1) * num_clips / (2 * k)).collect();
    out.dedup();
    out
}

pub fn select_dense(num_clips: usize) -> SelectionResult {
    SelectionResult::new("dense", num_clips, (0..num_clips).collect())
}

/// Discrete distribution of clip locations over `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalHistogram {
    pub bins: Vec<f64>,
    pub built_from: String,
}

impl EmpiricalHistogram {
    /// Normalized histogram of `locations` (each in `[0,1]`) over `bins` equal bins.
    pub fn from_locations(locations: &[f64], bins: usize, built_from: &str) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidInput("histogram needs at least one bin".into()));
        }
        if locations.is_empty() {
            return Err(Error::InvalidInput("histogram of zero locations".into()));
        }
        let mut counts = vec![0.0; bins];
        for &x in locations {
            counts[bin_of(x, bins)] += 1.0;
        }
        let n = locations.len() as f64;
        Ok(EmpiricalHistogram {
            bins: counts.into_iter().map(|c| c / n).collect(),
            built_from: built_from.to_string(),
        })
    }

    pub fn uniform(bins: usize) -> Self {
        EmpiricalHistogram {
            bins: vec![1.0 / bins as f64; bins],
            built_from: "uniform".into(),
        }
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn is_normalized(&self) -> bool {
        (self.bins.iter().sum::<f64>() - 1.0).abs() <= HISTOGRAM_TOLERANCE && self.bins.iter().all(|b| *b >= 0.0)
    }
}

pub(crate) fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor() as usize).min(bins - 1)
}

/// Histogram of the Oracle's top-`k` clip locations over a training set.
pub fn build_empirical_histogram(
    train: &Dataset,
    f: &dyn ClipClassifier,
    k: usize,
    bins: usize,
) -> Result<EmpiricalHistogram> {
    if train.videos.is_empty() {
        return Err(Error::InvalidInput("empirical histogram needs a nonempty training set".into()));
    }
    let mut locs = Vec::new();
    for v in &train.videos {
        for i in select_oracle(f, v, k)?.indices {
            locs.push(normalized_location(i, v.num_clips)?);
        }
    }
    EmpiricalHistogram::from_locations(&locs, bins, train.name())
}

/// Draws clip locations from `hist`, rejecting duplicates; after
/// `50 * k` attempts the remainder is filled uniformly from unchosen clips.
pub fn select_empirical(hist: &EmpiricalHistogram, num_clips: usize, k: usize, seed: u64) -> SelectionResult {
    let target = k.min(num_clips);
    let mut chosen = vec![false; num_clips];
    let mut picked = Vec::with_capacity(target);
    let mut rng = rng_from(seed, 0);
    let bins = hist.num_bins() as f64;
    if let Ok(dist) = WeightedIndex::new(&hist.bins) {
        let mut attempts = 0;
        while picked.len() < target && attempts < EMPIRICAL_ATTEMPTS_PER_CLIP * k {
            attempts += 1;
            let b = dist.sample(&mut rng) as f64;
            let u = (b + rng.random::<f64>()) / bins;
            let i = ((u * num_clips as f64).floor() as usize).min(num_clips - 1);
            if !chosen[i] {
                chosen[i] = true;
                picked.push(i);
            }
        }
    }
    if picked.len() < target {
        let free: Vec<usize> = (0..num_clips).filter(|&i| !chosen[i]).collect();
        for pos in uniform_indices(free.len(), target - picked.len()) {
            picked.push(free[pos]);
        }
    }
    picked.sort_unstable();
    SelectionResult::new("empirical", k, picked)
}

/// Clip indices surviving a stride of `n`: `0, n, 2n, ...`.
pub fn stride_candidates(num_clips: usize, n: usize) -> Vec<usize> {
    (0..num_clips).step_by(n.max(1)).collect()
}

/// Keeps only the strided candidates as `(index, score)` pairs.
pub fn apply_stride(scores: &[f64], n: usize) -> Vec<(usize, f64)> {
    stride_candidates(scores.len(), n)
        .into_iter()
        .map(|i| (i, scores[i]))
        .collect()
}
