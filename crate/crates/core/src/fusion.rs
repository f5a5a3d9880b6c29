//! Audio-visual fusion: five ways of turning a visual and an audio saliency
//! vector into one clip selection.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::ClipClassifier;
use crate::datamodel::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::saliency::{train_pairwise, PairModel, SaliencyScorer};
use crate::selection::{rank_order, ranks, select_topk, SelectionResult};
use crate::training::{Trained, TrainingConfig};

pub const DEFAULT_CONVEX_SCORE_ALPHA: f64 = 0.9;
pub const DEFAULT_CONVEX_LIST_ALPHA: f64 = 0.8;
pub const DEFAULT_UNION_K_PRIME: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FusionConfig {
    ConvexScore {
        #[serde(default = "default_score_alpha")]
        alpha: f64,
    },
    ConvexList {
        #[serde(default = "default_list_alpha")]
        alpha: f64,
    },
    IntersectList,
    UnionList {
        #[serde(default = "default_k_prime")]
        k_prime: usize,
    },
    JointTraining,
}

fn default_score_alpha() -> f64 {
    DEFAULT_CONVEX_SCORE_ALPHA
}
fn default_list_alpha() -> f64 {
    DEFAULT_CONVEX_LIST_ALPHA
}
fn default_k_prime() -> usize {
    DEFAULT_UNION_K_PRIME
}

impl FusionConfig {
    pub fn name(&self) -> &'static str {
        match self {
            FusionConfig::ConvexScore { .. } => "convex-score",
            FusionConfig::ConvexList { .. } => "convex-list",
            FusionConfig::IntersectList => "intersect-list",
            FusionConfig::UnionList { .. } => "union-list",
            FusionConfig::JointTraining => "joint-training",
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        match self {
            FusionConfig::ConvexScore { .. } => Ok(FusionConfig::ConvexScore { alpha }),
            FusionConfig::ConvexList { .. } => Ok(FusionConfig::ConvexList { alpha }),
            other => Err(Error::config("alpha", format!("{} has no alpha", other.name()))),
        }
    }

    pub fn with_k_prime(self, k_prime: usize) -> Result<Self> {
        match self {
            FusionConfig::UnionList { .. } => Ok(FusionConfig::UnionList { k_prime }),
            other => Err(Error::config("k_prime", format!("{} has no K'", other.name()))),
        }
    }
}

impl fmt::Display for FusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionConfig::ConvexScore { alpha } | FusionConfig::ConvexList { alpha } => {
                write!(f, "{}(alpha={alpha})", self.name())
            }
            FusionConfig::UnionList { k_prime } => write!(f, "{}(K'={k_prime})", self.name()),
            _ => f.write_str(self.name()),
        }
    }
}

fn check_lengths(s_v: &[f64], s_a: &[f64]) -> Result<()> {
    if s_v.len() != s_a.len() {
        return Err(Error::DimMismatch {
            what: "audio/visual score vectors",
            expected: s_v.len(),
            actual: s_a.len(),
        });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("{alpha} not in [0,1]")));
    }
    Ok(())
}

fn result(scheme: &str, k: usize, mut indices: Vec<usize>) -> SelectionResult {
    indices.sort_unstable();
    SelectionResult {
        video_id: String::new(),
        strategy: format!("av-{scheme}"),
        k_requested: k,
        indices,
        scores: None,
    }
}

/// Top-K over `alpha * s_v + (1 - alpha) * s_a`.
pub fn fuse_convex_score(s_v: &[f64], s_a: &[f64], alpha: f64, k: usize) -> Result<SelectionResult> {
    check_lengths(s_v, s_a)?;
    check_alpha(alpha)?;
    let combined: Vec<f64> = s_v.iter().zip(s_a).map(|(v, a)| alpha * v + (1.0 - alpha) * a).collect();
    Ok(select_topk(&combined, k).with_strategy("av-convex-score"))
}

/// K smallest weighted ranks `alpha * r_v + (1 - alpha) * r_a` (0 = best),
/// ties broken by visual rank, then clip index.
pub fn fuse_convex_list(s_v: &[f64], s_a: &[f64], alpha: f64, k: usize) -> Result<SelectionResult> {
    check_lengths(s_v, s_a)?;
    check_alpha(alpha)?;
    let r_v = ranks(s_v);
    let r_a = ranks(s_a);
    let combined: Vec<f64> = r_v
        .iter()
        .zip(&r_a)
        .map(|(&v, &a)| alpha * v as f64 + (1.0 - alpha) * a as f64)
        .collect();
    let mut idx: Vec<usize> = (0..s_v.len()).collect();
    idx.sort_by(|&a, &b| {
        combined[a]
            .total_cmp(&combined[b])
            .then(r_v[a].cmp(&r_v[b]))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(result("convex-list", k, idx))
}

/// Grows `m` from `k` until the top-`m` lists of both modalities share at
/// least `k` clips; an overshoot is trimmed by dropping the largest
/// `r_v + r_a` first (higher index dropped first on ties).
pub fn fuse_intersect_list(s_v: &[f64], s_a: &[f64], k: usize) -> Result<SelectionResult> {
    check_lengths(s_v, s_a)?;
    let l = s_v.len();
    if k == 0 || k > l {
        return Err(Error::InvalidInput(format!("intersect-list needs 1 <= K <= L, got K={k}, L={l}")));
    }
    let order_v = rank_order(s_v);
    let order_a = rank_order(s_a);
    let r_v = ranks(s_v);
    let r_a = ranks(s_a);
    let mut in_v = vec![false; l];
    let mut in_a = vec![false; l];
    let mut common = Vec::new();
    for m in 1..=l {
        let (cv, ca) = (order_v[m - 1], order_a[m - 1]);
        in_v[cv] = true;
        in_a[ca] = true;
        if in_a[cv] {
            common.push(cv);
        }
        if ca != cv && in_v[ca] {
            common.push(ca);
        }
        if m >= k && common.len() >= k {
            break;
        }
    }
    common.sort_by(|&a, &b| (r_v[a] + r_a[a]).cmp(&(r_v[b] + r_a[b])).then(a.cmp(&b)));
    common.truncate(k);
    Ok(result("intersect-list", k, common))
}

/// Visual top-`k_prime`, then the audio ranking's best clips not yet chosen
/// until `k` clips are selected.
pub fn fuse_union_list(s_v: &[f64], s_a: &[f64], k: usize, k_prime: usize) -> Result<SelectionResult> {
    check_lengths(s_v, s_a)?;
    let l = s_v.len();
    if !(0 < k_prime && k_prime < k && k <= l) {
        return Err(Error::InvalidInput(format!(
            "union-list needs 0 < K' < K <= L, got K'={k_prime}, K={k}, L={l}"
        )));
    }
    let mut chosen = vec![false; l];
    let mut out: Vec<usize> = rank_order(s_v).into_iter().take(k_prime).collect();
    for &i in &out {
        chosen[i] = true;
    }
    for i in rank_order(s_a) {
        if out.len() == k {
            break;
        }
        if !chosen[i] {
            chosen[i] = true;
            out.push(i);
        }
    }
    Ok(result("union-list", k, out))
}

/// Per-clip mean of the visual and audio scores.
pub fn mean_scores(s_v: &[f64], s_a: &[f64]) -> Result<Vec<f64>> {
    check_lengths(s_v, s_a)?;
    Ok(s_v.iter().zip(s_a).map(|(v, a)| 0.5 * (v + a)).collect())
}

/// Applies `cfg` to one pair of score vectors.
pub fn fuse(cfg: &FusionConfig, s_v: &[f64], s_a: &[f64], k: usize) -> Result<SelectionResult> {
    match *cfg {
        FusionConfig::ConvexScore { alpha } => fuse_convex_score(s_v, s_a, alpha, k),
        FusionConfig::ConvexList { alpha } => fuse_convex_list(s_v, s_a, alpha, k),
        FusionConfig::IntersectList => fuse_intersect_list(s_v, s_a, k),
        FusionConfig::UnionList { k_prime } => fuse_union_list(s_v, s_a, k, k_prime),
        FusionConfig::JointTraining => {
            let m = mean_scores(s_v, s_a)?;
            Ok(select_topk(&m, k).with_strategy("av-joint-training"))
        }
    }
}

/// Visual scorers (averaged) and an audio scorer, fused by a plain mean:
/// `s = (mean(s_v) + s_a) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSampler {
    pub visual: Vec<SaliencyScorer>,
    pub audio: SaliencyScorer,
}

impl JointSampler {
    pub fn new(visual: Vec<SaliencyScorer>, audio: SaliencyScorer) -> Result<Self> {
        if visual.is_empty() {
            return Err(Error::InvalidInput("joint sampler needs a visual scorer".into()));
        }
        Ok(JointSampler { visual, audio })
    }

    pub fn fused_score(&self, v: &VideoRecord, i: usize) -> Result<f64> {
        let mut sv = 0.0;
        for s in &self.visual {
            sv += s.score_clip(v, i)?;
        }
        sv /= self.visual.len() as f64;
        Ok(0.5 * (sv + self.audio.score_clip(v, i)?))
    }

    /// `d s / d params`, visual scorers first then audio, each in its own
    /// flat parameter order.
    pub fn fused_score_with_grad(&self, v: &VideoRecord, i: usize) -> Result<(f64, Vec<f64>)> {
        let wv = 0.5 / self.visual.len() as f64;
        let mut score = 0.0;
        let mut grad = Vec::with_capacity(self.num_params());
        for s in &self.visual {
            let (si, gi) = s.score_with_grad(v.feature(&s.modality, i)?)?;
            score += wv * si;
            grad.extend(gi.into_iter().map(|g| wv * g));
        }
        let (sa, ga) = self.audio.score_with_grad(v.feature(&self.audio.modality, i)?)?;
        score += 0.5 * sa;
        grad.extend(ga.into_iter().map(|g| 0.5 * g));
        Ok((score, grad))
    }

    pub fn num_params(&self) -> usize {
        self.visual.iter().map(|s| s.num_params()).sum::<usize>() + self.audio.num_params()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.visual
            .iter()
            .chain(std::iter::once(&self.audio))
            .flat_map(|s| s.flat_params())
            .collect()
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for s in self.visual.iter_mut().chain(std::iter::once(&mut self.audio)) {
            let n = s.num_params();
            s.set_flat_params(&p[off..off + n]);
            off += n;
        }
    }
}

impl PairModel for JointSampler {
    fn score(&self, v: &VideoRecord, i: usize) -> Result<f64> {
        self.fused_score(v, i)
    }

    fn score_with_grad(&self, v: &VideoRecord, i: usize) -> Result<(f64, Vec<f64>)> {
        self.fused_score_with_grad(v, i)
    }

    fn params(&self) -> Vec<f64> {
        self.flat_params()
    }

    fn set_params(&mut self, p: &[f64]) {
        self.set_flat_params(p)
    }
}

/// Fine-tunes pretrained visual and audio scorers through their averaged
/// score with the pairwise ranking hinge.
pub fn train_joint(
    train: &Dataset,
    f: &dyn ClipClassifier,
    visual: Vec<SaliencyScorer>,
    audio: SaliencyScorer,
    cfg: &TrainingConfig,
) -> Result<Trained<JointSampler>> {
    let joint = JointSampler::new(visual, audio)?;
    train_pairwise(joint, train, f, cfg, "joint")
}
