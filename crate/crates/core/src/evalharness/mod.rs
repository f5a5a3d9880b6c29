//! End-to-end experiments: per-strategy accuracy, selection histograms,
//! compute accounting, parameter sweeps and cross-classifier / cross-dataset
//! protocols.

mod cost;
mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_video, ClipClassifier};
use crate::datamodel::{Dataset, VideoRecord};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionConfig};
use crate::saliency::{score_video, SaliencyScorer};
use crate::seed::{derive_seed, hash_str};
use crate::selection::{
    select_dense, select_empirical, select_oracle, select_random, select_topk_among, select_uniform,
    stride_candidates, EmpiricalHistogram, SelectionResult, DEFAULT_BINS,
};

pub use cost::{compute_cost, CostModel, CostScheme};
pub use report::{
    location_histogram, write_report_jsonl, write_summary_csv, EvalReport, Provenance, VideoOutcome, CSV_HEADER,
};

/// A trained clip sampler: visual scorers (averaged), optionally fused with
/// an audio scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub visual: Vec<SaliencyScorer>,
    pub audio: Option<SaliencyScorer>,
    pub fusion: Option<FusionConfig>,
}

impl Sampler {
    pub fn visual_only(visual: Vec<SaliencyScorer>) -> Self {
        Sampler {
            visual,
            audio: None,
            fusion: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.visual.is_empty() {
            return Err(Error::config("sampler.visual", "at least one visual scorer required"));
        }
        if self.audio.is_some() != self.fusion.is_some() {
            return Err(Error::config("fusion", "an audio scorer and a fusion scheme go together"));
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<&str> {
        self.visual
            .iter()
            .chain(self.audio.as_ref())
            .map(|s| s.modality.as_str())
            .collect()
    }

    /// Selects up to `k` clips among every `n`-th clip.
    pub fn select(&self, v: &VideoRecord, k: usize, n: usize) -> Result<SelectionResult> {
        let s_v = score_video(&self.visual, v)?;
        let candidates = stride_candidates(v.num_clips, n);
        let sel = match (&self.audio, &self.fusion) {
            (Some(audio), Some(cfg)) => {
                let s_a = audio.score_all(v)?;
                if k >= candidates.len() {
                    candidates.clone()
                } else if matches!(cfg, FusionConfig::UnionList { k_prime } if k <= *k_prime) {
                    // The visual prefix alone already fills the budget.
                    let pairs: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, s_v[i])).collect();
                    select_topk_among(&pairs, k)
                } else {
                    let sub_v: Vec<f64> = candidates.iter().map(|&i| s_v[i]).collect();
                    let sub_a: Vec<f64> = candidates.iter().map(|&i| s_a[i]).collect();
                    let fused = fuse(cfg, &sub_v, &sub_a, k)?;
                    fused.indices.into_iter().map(|j| candidates[j]).collect()
                }
            }
            _ => {
                let pairs: Vec<(usize, f64)> = candidates.iter().map(|&i| (i, s_v[i])).collect();
                select_topk_among(&pairs, k)
            }
        };
        Ok(SelectionResult {
            video_id: v.id.clone(),
            strategy: STRATEGY_SCSAMPLER.into(),
            k_requested: k,
            indices: sel,
            scores: None,
        }
        .with_scores_from(&s_v))
    }
}

pub const STRATEGY_DENSE: &str = "dense";
pub const STRATEGY_RANDOM: &str = "random";
pub const STRATEGY_UNIFORM: &str = "uniform";
pub const STRATEGY_EMPIRICAL: &str = "empirical";
pub const STRATEGY_ORACLE: &str = "oracle";
pub const STRATEGY_SCSAMPLER: &str = "scsampler";

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Dense,
    Random,
    Uniform,
    Empirical(EmpiricalHistogram),
    Oracle,
    SCSampler(Sampler),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dense => STRATEGY_DENSE,
            Strategy::Random => STRATEGY_RANDOM,
            Strategy::Uniform => STRATEGY_UNIFORM,
            Strategy::Empirical(_) => STRATEGY_EMPIRICAL,
            Strategy::Oracle => STRATEGY_ORACLE,
            Strategy::SCSampler(_) => STRATEGY_SCSAMPLER,
        }
    }

    /// Clip selection for one video. `seed` is the per-video seed.
    pub fn select(
        &self,
        f: &dyn ClipClassifier,
        v: &VideoRecord,
        k: usize,
        n: usize,
        seed: u64,
    ) -> Result<SelectionResult> {
        let l = v.num_clips;
        let sel = match self {
            Strategy::Dense => select_dense(l),
            Strategy::Random => select_random(l, k, seed),
            Strategy::Uniform => select_uniform(l, k),
            Strategy::Empirical(h) => select_empirical(h, l, k, seed),
            Strategy::Oracle => select_oracle(f, v, k)?,
            Strategy::SCSampler(s) => s.select(v, k, n)?,
        };
        Ok(sel.for_video(&v.id).with_strategy(self.name()))
    }

    fn cost_scheme(&self) -> CostScheme {
        match self {
            Strategy::Dense | Strategy::Oracle => CostScheme::Dense,
            Strategy::Random | Strategy::Uniform | Strategy::Empirical(_) => CostScheme::Blind,
            Strategy::SCSampler(_) => CostScheme::Sampled,
        }
    }

    fn cost_model(&self, base: &CostModel) -> CostModel {
        match self {
            Strategy::SCSampler(s) => base.restricted_to(s.modalities()),
            _ => base.restricted_to(std::iter::empty()),
        }
    }
}

/// Evaluation knobs that are not swept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub bins: usize,
    pub cost: CostModel,
    /// Worker threads for per-video evaluation; 0 uses the global pool.
    /// Has no effect on results.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            bins: DEFAULT_BINS,
            cost: CostModel::default(),
            workers: 0,
        }
    }
}

fn run_parallel<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    Ok(pool.install(job))
}

/// Per-video seed, independent of video order.
pub fn video_seed(seed: u64, video_id: &str) -> u64 {
    derive_seed(seed, hash_str(video_id))
}

fn evaluate_video(
    f: &dyn ClipClassifier,
    strategy: &Strategy,
    v: &VideoRecord,
    k: usize,
    n: usize,
    seed: u64,
) -> Result<VideoOutcome> {
    let sel = strategy.select(f, v, k, n, video_seed(seed, &v.id))?;
    let pred = predict_video(f, v, &sel.indices)?;
    let mut mass = 0.0;
    for &i in &sel.indices {
        mass += f.classify_clip(v, i)?.probs()[v.label];
    }
    Ok(VideoOutcome {
        id: v.id.clone(),
        label: v.label,
        predicted: pred.class,
        num_clips: v.num_clips,
        indices: sel.indices,
        true_class_mass: mass,
    })
}

/// Selects, predicts and prices every test video under one strategy.
pub fn evaluate_strategy(
    test: &Dataset,
    f: &dyn ClipClassifier,
    strategy: &Strategy,
    k: usize,
    n: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if k == 0 || n == 0 {
        return Err(Error::config("K/N", "K and N must be >= 1"));
    }
    if let Strategy::SCSampler(s) = strategy {
        s.check()?;
    }
    if test.videos.is_empty() {
        return Err(Error::InvalidInput(format!("dataset `{}` has no videos", test.name())));
    }
    opts.cost.check()?;
    let outcomes = run_parallel(opts.workers, || {
        test.videos
            .par_iter()
            .map(|v| evaluate_video(f, strategy, v, k, n, seed))
            .collect::<Result<Vec<_>>>()
    })??;

    let correct = outcomes.iter().filter(|o| o.label == o.predicted).count();
    let cost_model = strategy.cost_model(&opts.cost);
    let scheme = strategy.cost_scheme();
    let total: f64 = outcomes
        .iter()
        .map(|o| compute_cost(&cost_model, o.num_clips, k, n, scheme))
        .sum();
    let histogram = location_histogram(
        outcomes.iter().map(|o| (o.num_clips, o.indices.as_slice())),
        opts.bins,
        test.name(),
    )?;
    Ok(EvalReport {
        dataset: test.name().to_string(),
        strategy: strategy.name().to_string(),
        k,
        n,
        fusion: match strategy {
            Strategy::SCSampler(s) => s.fusion.map(|c| c.to_string()),
            _ => None,
        },
        provenance: None,
        accuracy: correct as f64 / outcomes.len() as f64,
        gflops_per_video: total / outcomes.len() as f64,
        histogram,
        videos: outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values")]
pub enum SweepSpec {
    K(Vec<usize>),
    N(Vec<usize>),
    #[serde(rename = "alpha")]
    Alpha(Vec<f64>),
    #[serde(rename = "K'")]
    KPrime(Vec<usize>),
}

impl SweepSpec {
    pub fn len(&self) -> usize {
        match self {
            SweepSpec::K(v) | SweepSpec::N(v) | SweepSpec::KPrime(v) => v.len(),
            SweepSpec::Alpha(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn with_fusion(strategy: &Strategy, edit: impl Fn(FusionConfig) -> Result<FusionConfig>) -> Result<Strategy> {
    match strategy {
        Strategy::SCSampler(s) => {
            let cfg = s
                .fusion
                .ok_or_else(|| Error::config("sweep", "sampler has no fusion scheme to sweep"))?;
            let mut s = s.clone();
            s.fusion = Some(edit(cfg)?);
            Ok(Strategy::SCSampler(s))
        }
        other => Err(Error::config("sweep", format!("{} has no fusion parameters", other.name()))),
    }
}

/// One report per swept value; everything else, seeds included, stays fixed.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    test: &Dataset,
    f: &dyn ClipClassifier,
    strategy: &Strategy,
    k: usize,
    n: usize,
    seed: u64,
    spec: &SweepSpec,
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    match spec {
        SweepSpec::K(ks) => ks
            .iter()
            .map(|&k| evaluate_strategy(test, f, strategy, k, n, seed, opts))
            .collect(),
        SweepSpec::N(ns) => ns
            .iter()
            .map(|&n| evaluate_strategy(test, f, strategy, k, n, seed, opts))
            .collect(),
        SweepSpec::Alpha(alphas) => alphas
            .iter()
            .map(|&a| {
                let s = with_fusion(strategy, |c| c.with_alpha(a))?;
                evaluate_strategy(test, f, &s, k, n, seed, opts)
            })
            .collect(),
        SweepSpec::KPrime(kps) => kps
            .iter()
            .map(|&kp| {
                let s = with_fusion(strategy, |c| c.with_k_prime(kp))?;
                evaluate_strategy(test, f, &s, k, n, seed, opts)
            })
            .collect(),
    }
}

/// Evaluates a sampler built against one (classifier, dataset) pair with a
/// possibly different classifier on a possibly different dataset.
#[allow(clippy::too_many_arguments)]
pub fn cross_protocol(
    provenance: Provenance,
    test: &Dataset,
    f: &dyn ClipClassifier,
    strategy: &Strategy,
    k: usize,
    n: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if f.num_classes() != test.num_classes() {
        return Err(Error::LabelSpaceMismatch(format!(
            "classifier `{}` has {} classes, dataset `{}` has {}",
            provenance.eval_classifier,
            f.num_classes(),
            test.name(),
            test.num_classes()
        )));
    }
    let mut report = evaluate_strategy(test, f, strategy, k, n, seed, opts)?;
    report.provenance = Some(provenance);
    Ok(report)
}
