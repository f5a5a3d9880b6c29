#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use scsampler::classifier::{train_linear_classifier, LinearClipClassifier, ScriptedClassifier};
use scsampler::datamodel::{Dataset, VideoRecord};
use scsampler::saliency::{train_sal_rank, SaliencyScorer, ScorerKind, ScorerSpec};
use scsampler::selection::{build_empirical_histogram, EmpiricalHistogram};
use scsampler::synthgen::{generate_dataset, SynthConfig};
use scsampler::training::TrainingConfig;

/// The frozen reference benchmark.
pub fn bench_config() -> SynthConfig {
    let cfg = SynthConfig::default();
    assert_eq!(cfg.seed, 1);
    assert_eq!(cfg.num_classes, 10);
    assert_eq!((cfg.train_per_class, cfg.test_per_class), (20, 10));
    assert_eq!((cfg.clips_min, cfg.clips_max), (60, 60));
    assert_eq!(cfg.salient_fraction, 0.2);
    assert!(cfg.modalities.values().all(|d| *d == 16));
    cfg
}

pub const K: usize = 10;
pub const EVAL_SEED: u64 = 1;

pub struct Bench {
    pub train: Dataset,
    pub test: Dataset,
    pub f: LinearClipClassifier,
    pub visual: SaliencyScorer,
    pub audio: SaliencyScorer,
    pub hist: EmpiricalHistogram,
    pub segment_len: usize,
}

pub fn load_split(cfg: &SynthConfig, dir: &Path) -> (Dataset, Dataset) {
    let out = generate_dataset(cfg, dir).unwrap();
    (
        Dataset::load(&out.train_manifest_path).unwrap(),
        Dataset::load(&out.test_manifest_path).unwrap(),
    )
}

pub fn linear_spec() -> ScorerSpec {
    ScorerSpec {
        kind: ScorerKind::LinearSigmoid,
        hidden_width: 16,
    }
}

/// Classifier on `visual-rgbr`, SAL-RANK linear scorers on `visual-md` and
/// `audio-mel`, empirical histogram from the training split.
pub fn build_bench(cfg: &SynthConfig, dir: &Path) -> Bench {
    let (train, test) = load_split(cfg, dir);
    let tc = TrainingConfig::default();
    let f = train_linear_classifier(&train, "visual-rgbr", &tc).unwrap().model;
    let visual = train_sal_rank(&train, &f, "visual-md", linear_spec(), &tc).unwrap().model;
    let audio = train_sal_rank(&train, &f, "audio-mel", linear_spec(), &tc).unwrap().model;
    let hist = build_empirical_histogram(&train, &f, K, 100).unwrap();
    Bench {
        segment_len: cfg.segment_len(cfg.clips_min),
        train,
        test,
        f,
        visual,
        audio,
        hist,
    }
}

/// Central finite-difference gradient.
pub fn numeric_grad(params: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|k| {
            let orig = p[k];
            p[k] = orig + h;
            let up = loss(&p);
            p[k] = orig - h;
            let down = loss(&p);
            p[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn video(id: &str, label: usize, features: &[(&str, Array2<f64>)]) -> VideoRecord {
    let num_clips = features[0].1.nrows();
    VideoRecord {
        id: id.into(),
        label,
        num_clips,
        features: features.iter().map(|(n, m)| (n.to_string(), m.clone())).collect::<BTreeMap<_, _>>(),
        scripted_scores: None,
    }
}

/// Two-class scripted classifier with `p_true[i]` on the true label.
pub fn scripted_two_class(id: &str, label: usize, p_true: &[f64]) -> ScriptedClassifier {
    let mut f = ScriptedClassifier::new(2);
    let rows: Vec<f64> = p_true
        .iter()
        .flat_map(|&p| if label == 0 { [p, 1.0 - p] } else { [1.0 - p, p] })
        .collect();
    f.insert(id, Array2::from_shape_vec((p_true.len(), 2), rows).unwrap()).unwrap();
    f
}

/// All size-`k` subsets of `0..n`, each ascending.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Top-`k` by full sort: descending score, lower index first; ascending output.
pub fn sort_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut top: Vec<usize> = idx.into_iter().take(k).collect();
    top.sort();
    top
}
