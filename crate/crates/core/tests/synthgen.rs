mod common;

use ndarray::Array1;
use scsampler::classifier::train_linear_classifier;
use scsampler::datamodel::{validate_dataset, Split};
use scsampler::saliency::{pair_ranking_accuracy, train_sal_rank};
use scsampler::synthgen::{generate_dataset, generate_videos, read_masks, PositionBias, SynthConfig};
use scsampler::training::TrainingConfig;

use common::{linear_spec, load_split};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        num_classes: 4,
        train_per_class: 10,
        test_per_class: 5,
        clips_min: 30,
        clips_max: 50,
        ..Default::default()
    }
}

#[test]
fn edges_bias_puts_segments_near_the_ends() {
    let cfg = SynthConfig {
        train_per_class: 50,
        test_per_class: 0,
        position_bias: PositionBias::Edges,
        ..small(4)
    };
    let videos = generate_videos(&cfg).unwrap();
    let near_edge = videos
        .iter()
        .filter(|g| {
            let s = cfg.segment_len(g.record.num_clips);
            let max_start = g.record.num_clips - s;
            let q = max_start / 4;
            g.segment_start <= q || g.segment_start >= max_start - q
        })
        .count();
    let frac = near_edge as f64 / videos.len() as f64;
    assert!(frac >= 0.8, "edge fraction {frac}");
}

#[test]
fn uniform_bias_spreads_segments() {
    let cfg = SynthConfig {
        train_per_class: 100,
        test_per_class: 0,
        position_bias: PositionBias::Uniform,
        clips_min: 60,
        clips_max: 60,
        ..small(5)
    };
    let videos = generate_videos(&cfg).unwrap();
    let max_start = 60 - cfg.segment_len(60);
    let middle = videos
        .iter()
        .filter(|g| g.segment_start > max_start / 4 && g.segment_start < max_start - max_start / 4)
        .count() as f64
        / videos.len() as f64;
    // About half of the starts fall in the middle half.
    assert!((0.4..0.6).contains(&middle), "middle fraction {middle}");
}

#[test]
fn masks_on_disk_match_generation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(6);
    let out = generate_dataset(&cfg, dir.path()).unwrap();
    let masks = read_masks(&dir.path().join("train").join("masks.txt")).unwrap();
    assert_eq!(masks.len(), 40);
    for (id, m) in &masks {
        assert_eq!(out.saliency_mask(id).unwrap(), m.as_slice());
        let on: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
        assert_eq!(on.len(), cfg.segment_len(m.len()));
        assert_eq!(on.last().unwrap() - on[0] + 1, on.len(), "segment is contiguous");
    }
    assert!(out.saliency_mask("nope").is_err());
    assert_eq!(out.test.split, Split::Test);
    assert!(validate_dataset(&out.train).unwrap().is_empty());
    assert!(validate_dataset(&out.test).unwrap().is_empty());
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_dataset(&small(7), a.path()).unwrap();
    generate_dataset(&small(7), b.path()).unwrap();
    let read = |d: &std::path::Path| scsampler::cli::checksums(d).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&small(8), c.path()).unwrap();
    assert_ne!(read(a.path()), read(c.path()));
}

/// Per-class mean of the salient `visual-md` rows.
fn salient_class_means(cfg: &SynthConfig) -> Vec<Array1<f64>> {
    let videos = generate_videos(cfg).unwrap();
    (0..cfg.num_classes)
        .map(|c| {
            let mut sum = Array1::zeros(16);
            let mut n = 0.0;
            for g in videos.iter().filter(|g| g.record.label == c) {
                let m = &g.record.features["visual-md"];
                for (i, on) in g.mask.iter().enumerate() {
                    if *on {
                        sum += &m.row(i);
                        n += 1.0;
                    }
                }
            }
            sum / n
        })
        .collect()
}

#[test]
fn shared_geometry_disjoint_classes() {
    let dist = |a: &[Array1<f64>], b: &[Array1<f64>]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).mapv(|d| d * d).sum().sqrt()).sum::<f64>() / a.len() as f64
    };
    let x = salient_class_means(&small(1));
    // Fresh noise, same classes.
    let x2 = salient_class_means(&SynthConfig {
        seed: 3,
        geometry_seed: Some(1),
        class_seed: Some(1),
        ..small(1)
    });
    // Fresh noise, new classes on the same geometry.
    let y = salient_class_means(&SynthConfig {
        seed: 2,
        geometry_seed: Some(1),
        class_seed: Some(2),
        ..small(1)
    });
    let (same, diff) = (dist(&x, &x2), dist(&x, &y));
    assert!(same < 1.0 && diff > 2.0, "same-class drift {same}, cross-dataset distance {diff}");
}

#[test]
fn uncorrelated_audio_ranks_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        audio_visual_correlation: 0.0,
        num_classes: 5,
        train_per_class: 12,
        test_per_class: 8,
        ..Default::default()
    };
    let (train, test) = load_split(&cfg, dir.path());
    let tc = TrainingConfig::default();
    let f = train_linear_classifier(&train, "visual-rgbr", &tc).unwrap().model;
    let audio = train_sal_rank(&train, &f, "audio-mel", linear_spec(), &tc).unwrap().model;
    let acc = pair_ranking_accuracy(&[audio], &f, &test.videos).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "pair accuracy {acc}");
    // The visual motion channel carries the planted signal.
    let visual = train_sal_rank(&train, &f, "visual-md", linear_spec(), &tc).unwrap().model;
    let acc_v = pair_ranking_accuracy(&[visual], &f, &test.videos).unwrap();
    assert!(acc_v > 0.6, "visual pair accuracy {acc_v}");
}

#[test]
fn rho_zero_is_rejected_by_name() {
    let cfg = SynthConfig {
        salient_fraction: 0.0,
        ..Default::default()
    };
    let err = cfg.check().unwrap_err().to_string();
    assert!(err.contains("salient_fraction"), "{err}");
}
