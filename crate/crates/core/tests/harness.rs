use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;
use scsampler::classifier::ScriptedClassifier;
use scsampler::datamodel::{Dataset, DatasetManifest, LabelSpace, ModalityDescriptor, Split, VideoRecord};
use scsampler::evalharness::{
    compute_cost, evaluate_strategy, sweep, CostModel, CostScheme, EvalOptions, Sampler, Strategy, SweepSpec,
};
use scsampler::saliency::{SaliencyScorer, ScorerKind};
use scsampler::seed::rng_from;
use scsampler::selection::EmpiricalHistogram;

const CLASSES: usize = 3;

/// In-memory dataset plus a scripted classifier over random probability rows.
fn scripted(name: &str, shapes: &[(usize, usize, u64)]) -> (Dataset, ScriptedClassifier) {
    let mut f = ScriptedClassifier::new(CLASSES);
    let mut videos = Vec::new();
    for (idx, &(l, label, seed)) in shapes.iter().enumerate() {
        let mut rng = rng_from(seed, idx as u64);
        let id = format!("v{idx}");
        let mut probs = Array2::from_shape_fn((l, CLASSES), |_| rng.random_range(0.01..1.0));
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        f.insert(id.clone(), probs).unwrap();
        let feats = Array2::from_shape_fn((l, 2), |_| rng.random_range(-2.0..2.0));
        videos.push(VideoRecord {
            id,
            label,
            num_clips: l,
            features: BTreeMap::from([("m".to_string(), feats)]),
            scripted_scores: None,
        });
    }
    let manifest = DatasetManifest {
        root: PathBuf::new(),
        name: name.into(),
        split: Split::Test,
        label_space: LabelSpace::numbered(CLASSES).unwrap(),
        modalities: vec![ModalityDescriptor::canonical("m", 2)],
        metadata: BTreeMap::new(),
        videos: Vec::new(),
    };
    (Dataset { manifest, videos }, f)
}

fn sampler(seed: u64) -> Strategy {
    Strategy::SCSampler(Sampler::visual_only(vec![SaliencyScorer::init(
        "m",
        ScorerKind::LinearSigmoid,
        2,
        16,
        CLASSES,
        seed,
    )]))
}

fn shapes() -> impl proptest::strategy::Strategy<Value = Vec<(usize, usize, u64)>> {
    prop::collection::vec((1usize..15, 0usize..CLASSES, any::<u64>()), 1..6)
}

fn opts() -> EvalOptions {
    EvalOptions::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_mass_dominates(shapes in shapes(), k in 1usize..8, seed: u64) {
        let (ds, f) = scripted("p", &shapes);
        let oracle = evaluate_strategy(&ds, &f, &Strategy::Oracle, k, 1, seed, &opts()).unwrap();
        let others = [
            Strategy::Random,
            Strategy::Uniform,
            Strategy::Empirical(EmpiricalHistogram::uniform(100)),
            sampler(seed),
        ];
        for s in &others {
            let r = evaluate_strategy(&ds, &f, s, k, 1, seed, &opts()).unwrap();
            for (o, x) in oracle.videos.iter().zip(&r.videos) {
                prop_assert_eq!(o.indices.len(), x.indices.len());
                prop_assert!(o.true_class_mass >= x.true_class_mass - 1e-12, "{} {}", s.name(), o.id);
            }
        }
    }

    #[test]
    fn budget_covering_every_clip_is_dense(shapes in shapes(), seed: u64) {
        let (ds, f) = scripted("p", &shapes);
        let k = ds.max_clips();
        let dense = evaluate_strategy(&ds, &f, &Strategy::Dense, k, 1, seed, &opts()).unwrap();
        for s in [sampler(seed), Strategy::Oracle, Strategy::Random, Strategy::Uniform] {
            let r = evaluate_strategy(&ds, &f, &s, k, 1, seed, &opts()).unwrap();
            prop_assert_eq!(r.accuracy, dense.accuracy);
            for (a, b) in r.videos.iter().zip(&dense.videos) {
                prop_assert_eq!(&a.indices, &b.indices);
                prop_assert_eq!(a.predicted, b.predicted);
            }
        }
    }

    #[test]
    fn sweep_points_match_single_runs(shapes in shapes(), seed: u64) {
        let (ds, f) = scripted("p", &shapes);
        for s in [Strategy::Random, Strategy::Empirical(EmpiricalHistogram::uniform(100)), sampler(seed)] {
            let reports = sweep(&ds, &f, &s, 4, 1, seed, &SweepSpec::K(vec![2, 4, 6]), &opts()).unwrap();
            let base = evaluate_strategy(&ds, &f, &s, 4, 1, seed, &opts()).unwrap();
            prop_assert_eq!(&reports[1], &base);
            let reports = sweep(&ds, &f, &s, 4, 1, seed, &SweepSpec::N(vec![1, 3]), &opts()).unwrap();
            prop_assert_eq!(&reports[0], &base);
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let shapes: Vec<_> = (0..40).map(|i| (5 + i % 9, i % CLASSES, i as u64)).collect();
    let (ds, f) = scripted("w", &shapes);
    for s in [Strategy::Random, sampler(3), Strategy::Oracle] {
        let one = evaluate_strategy(&ds, &f, &s, 3, 2, 7, &EvalOptions { workers: 1, ..opts() }).unwrap();
        let many = evaluate_strategy(&ds, &f, &s, 3, 2, 7, &EvalOptions { workers: 4, ..opts() }).unwrap();
        assert_eq!(one, many);
    }
}

#[test]
fn seeds_are_per_video_not_per_position() {
    let shapes: Vec<_> = (0..6).map(|i| (20, i % CLASSES, i as u64)).collect();
    let (ds, f) = scripted("order", &shapes);
    let mut rev = ds.clone();
    rev.videos.reverse();
    let a = evaluate_strategy(&ds, &f, &Strategy::Random, 4, 1, 11, &opts()).unwrap();
    let b = evaluate_strategy(&rev, &f, &Strategy::Random, 4, 1, 11, &opts()).unwrap();
    for v in &a.videos {
        let w = b.videos.iter().find(|w| w.id == v.id).unwrap();
        assert_eq!(v.indices, w.indices);
    }
}

fn cost_model(c_f: f64, c_s: f64) -> CostModel {
    CostModel {
        classifier_per_clip: c_f,
        sampler_per_clip: BTreeMap::from([("m".to_string(), c_s)]),
        fixed_overhead: 0.0,
    }
}

#[test]
fn sampled_beats_dense_exactly_when_sampler_is_cheap_enough() {
    // With N dividing L, sampled <= dense iff sum(c_s) <= c_f (1 - K/L) N.
    for &c_f in &[1.0, 9.8, 40.0] {
        for &c_s in &[0.05, 0.3, 1.0, 4.0, 12.0] {
            for n in 1..=5usize {
                for l in (n..=120).step_by(n) {
                    for k in [1usize, 5, 10] {
                        if k * n > l {
                            continue;
                        }
                        let m = cost_model(c_f, c_s);
                        let sampled = compute_cost(&m, l, k, n, CostScheme::Sampled);
                        let dense = compute_cost(&m, l, k, n, CostScheme::Dense);
                        let bound = c_f * (1.0 - k as f64 / l as f64) * n as f64;
                        let slack = 1e-9 * dense;
                        if c_s <= bound - slack {
                            assert!(sampled <= dense + slack, "c_f={c_f} c_s={c_s} L={l} K={k} N={n}");
                        } else if c_s > bound + slack {
                            assert!(sampled > dense - slack, "c_f={c_f} c_s={c_s} L={l} K={k} N={n}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn stride_two_halves_sampler_term() {
    for l in (2..=200usize).step_by(2) {
        for k in [1usize, 10] {
            let m = cost_model(9.8, 0.7);
            let classifier = |n: usize| k.min(l.div_ceil(n)) as f64 * 9.8;
            let s1 = compute_cost(&m, l, k, 1, CostScheme::Sampled) - classifier(1);
            let s2 = compute_cost(&m, l, k, 2, CostScheme::Sampled) - classifier(2);
            assert!((s2 - s1 / 2.0).abs() < 1e-9, "L={l} K={k}");
        }
    }
    // Blind strategies pay only for the clips they classify.
    let m = cost_model(2.0, 5.0);
    assert_eq!(compute_cost(&m, 7, 10, 1, CostScheme::Blind), 14.0);
    assert_eq!(compute_cost(&m, 70, 10, 1, CostScheme::Blind), 20.0);
}

#[test]
fn reported_cost_follows_strategy_scheme() {
    let shapes: Vec<_> = (0..5).map(|i| (10 + i, 0, i as u64)).collect();
    let (ds, f) = scripted("c", &shapes);
    let o = EvalOptions {
        cost: cost_model(2.0, 0.5),
        ..opts()
    };
    let mean = |g: &dyn Fn(usize) -> f64| shapes.iter().map(|s| g(s.0)).sum::<f64>() / shapes.len() as f64;
    let dense = evaluate_strategy(&ds, &f, &Strategy::Dense, 4, 3, 1, &o).unwrap();
    assert!((dense.gflops_per_video - mean(&|l| 2.0 * l as f64)).abs() < 1e-12);
    let oracle = evaluate_strategy(&ds, &f, &Strategy::Oracle, 4, 3, 1, &o).unwrap();
    assert_eq!(oracle.gflops_per_video, dense.gflops_per_video);
    let random = evaluate_strategy(&ds, &f, &Strategy::Random, 4, 3, 1, &o).unwrap();
    assert!((random.gflops_per_video - 8.0).abs() < 1e-12);
    let sc = evaluate_strategy(&ds, &f, &sampler(1), 4, 3, 1, &o).unwrap();
    let want = mean(&|l| l.div_ceil(3) as f64 * 0.5 + 4usize.min(l.div_ceil(3)) as f64 * 2.0);
    assert!((sc.gflops_per_video - want).abs() < 1e-12);
}
