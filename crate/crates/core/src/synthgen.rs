//! Deterministic synthetic video datasets with planted salient segments.
//!
//! Each video has one contiguous salient segment. Salient clips draw visual
//! features around a class mean; the rest come from a shared zero-mean
//! background. Class means mix a modality-wide "activity" axis, shared by all
//! classes, with a class-specific direction.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::binfile::{write_matrix, FEATURE_MAGIC};
use crate::datamodel::{
    write_manifest, DatasetManifest, LabelSpace, ModalityDescriptor, Split, VideoEntry, VideoRecord, AUDIO_MEL,
    VISUAL_MD, VISUAL_RGBR,
};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash_str, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionBias {
    Uniform,
    /// Segment usually starts near the beginning or (more often) the end.
    Edges,
}

/// Probability that an `Edges` segment is placed in an edge quartile.
pub const EDGE_PROBABILITY: f64 = 0.9;
/// Given an edge placement, probability of the last quartile.
pub const LAST_EDGE_SHARE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Seed for clip layout and feature noise.
    pub seed: u64,
    /// Seed for the per-modality activity axes; defaults to `seed`.
    pub geometry_seed: Option<u64>,
    /// Seed for the class means; defaults to the geometry seed. Datasets that
    /// share a geometry seed but not a class seed have the same feature
    /// geometry and disjoint class means.
    pub class_seed: Option<u64>,
    pub name: String,
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub clips_min: usize,
    pub clips_max: usize,
    /// Modality name to feature dimension.
    pub modalities: BTreeMap<String, usize>,
    pub salient_fraction: f64,
    pub class_signal_strength: f64,
    pub noise_sigma: f64,
    pub audio_visual_correlation: f64,
    /// Weight of the shared activity axis in every class mean, in `[0,1]`.
    pub activity_axis_weight: f64,
    pub position_bias: PositionBias,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let modalities = [(VISUAL_RGBR, 16), (VISUAL_MD, 16), (AUDIO_MEL, 16)]
            .into_iter()
            .map(|(n, d)| (n.to_string(), d))
            .collect();
        SynthConfig {
            seed: 1,
            geometry_seed: None,
            class_seed: None,
            name: "synth".into(),
            num_classes: 10,
            train_per_class: 20,
            test_per_class: 10,
            clips_min: 60,
            clips_max: 60,
            modalities,
            salient_fraction: 0.2,
            class_signal_strength: 3.0,
            noise_sigma: 1.0,
            audio_visual_correlation: 0.5,
            activity_axis_weight: 0.6,
            position_bias: PositionBias::Edges,
        }
    }
}

impl SynthConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.num_classes < 2 {
            return bad("num_classes", "must be >= 2");
        }
        if self.train_per_class == 0 {
            return bad("train_per_class", "must be >= 1");
        }
        if self.clips_min == 0 || self.clips_max < self.clips_min {
            return bad("clips_min", "need 1 <= clips_min <= clips_max");
        }
        if self.modalities.is_empty() {
            return bad("modalities", "at least one modality required");
        }
        if let Some((n, _)) = self.modalities.iter().find(|(_, d)| **d == 0) {
            return Err(Error::config(format!("modalities.{n}"), "dim must be >= 1"));
        }
        if !(self.salient_fraction > 0.0 && self.salient_fraction <= 1.0) {
            return bad("salient_fraction", "must lie in (0, 1]");
        }
        if self.salient_fraction * (self.clips_min as f64) < 1.0 {
            return bad("salient_fraction", "salient_fraction * clips_min must be >= 1");
        }
        if !(self.class_signal_strength > 0.0 && self.class_signal_strength.is_finite()) {
            return bad("class_signal_strength", "must be positive");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.audio_visual_correlation) {
            return bad("audio_visual_correlation", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.activity_axis_weight) {
            return bad("activity_axis_weight", "must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn segment_len(&self, num_clips: usize) -> usize {
        ((self.salient_fraction * num_clips as f64).ceil() as usize).clamp(1, num_clips)
    }

    fn descriptors(&self) -> Vec<ModalityDescriptor> {
        self.modalities
            .iter()
            .map(|(n, d)| ModalityDescriptor::canonical(n, *d))
            .collect()
    }
}

/// Per-modality geometry: activity axis and class means.
struct Geometry {
    class_means: BTreeMap<String, Vec<Array1<f64>>>,
}

fn random_unit(rng: &mut Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

impl Geometry {
    fn new(cfg: &SynthConfig) -> Self {
        let geometry_seed = cfg.geometry_seed.unwrap_or(cfg.seed);
        let class_seed = cfg.class_seed.unwrap_or(geometry_seed);
        let mut class_means = BTreeMap::new();
        for (name, &dim) in &cfg.modalities {
            // A single dimension leaves no room for a class-specific direction.
            let (a, b) = if dim == 1 {
                (1.0, 0.0)
            } else {
                let a = cfg.activity_axis_weight;
                (a, (1.0 - a * a).sqrt())
            };
            let tag = hash_str(name);
            let axis = random_unit(&mut rng_from(geometry_seed, derive_seed(tag, 1)), dim);
            let mut crng = rng_from(class_seed, derive_seed(tag, 2));
            let means = (0..cfg.num_classes)
                .map(|_| {
                    let u = random_unit(&mut crng, dim);
                    // Class-specific part orthogonal to the activity axis.
                    let mut perp = &u - &(&axis * u.dot(&axis));
                    let n = perp.dot(&perp).sqrt();
                    if n < 1e-9 {
                        perp.fill(0.0);
                    } else {
                        perp /= n;
                    }
                    (&axis * a + &perp * b) * cfg.class_signal_strength
                })
                .collect();
            class_means.insert(name.clone(), means);
        }
        Geometry { class_means }
    }
}

/// One generated video with its planted ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub record: VideoRecord,
    pub split: Split,
    pub mask: Vec<bool>,
    pub segment_start: usize,
}

fn place_segment(rng: &mut Rng, l: usize, s: usize, bias: PositionBias) -> usize {
    let max_start = l - s;
    if max_start == 0 {
        return 0;
    }
    match bias {
        PositionBias::Uniform => rng.random_range(0..=max_start),
        PositionBias::Edges => {
            if rng.random::<f64>() < EDGE_PROBABILITY {
                let q = max_start / 4;
                if rng.random::<f64>() < LAST_EDGE_SHARE {
                    rng.random_range(max_start - q..=max_start)
                } else {
                    rng.random_range(0..=q)
                }
            } else {
                rng.random_range(0..=max_start)
            }
        }
    }
}

fn gen_video(cfg: &SynthConfig, geo: &Geometry, index: usize, split: Split, local: usize) -> GeneratedVideo {
    let mut rng = rng_from(cfg.seed, derive_seed(index as u64, 0x5EED));
    let label = local % cfg.num_classes;
    let l = rng.random_range(cfg.clips_min..=cfg.clips_max);
    let s = cfg.segment_len(l);
    let start = place_segment(&mut rng, l, s, cfg.position_bias);
    let mask: Vec<bool> = (0..l).map(|i| i >= start && i < start + s).collect();
    let sigma = cfg.noise_sigma;
    let r = cfg.audio_visual_correlation;

    let mut features = BTreeMap::new();
    for (name, &dim) in &cfg.modalities {
        let mean = &geo.class_means[name][label];
        let window = ModalityDescriptor::canonical(name, dim).window_clips;
        let mut m = Array2::zeros((l, dim));
        for i in 0..l {
            let mut row = m.row_mut(i);
            if window > 1 {
                // Window [i, i + window) truncated at the end of the video.
                let end = (i + window).min(l);
                let frac = mask[i..end].iter().filter(|b| **b).count() as f64 / (end - i) as f64;
                for k in 0..dim {
                    let e1: f64 = rng.sample(StandardNormal);
                    let e2: f64 = rng.sample(StandardNormal);
                    row[k] = r * (frac * mean[k] + sigma * e1) + (1.0 - r) * sigma * e2;
                }
            } else {
                let base = if mask[i] { Some(mean) } else { None };
                for k in 0..dim {
                    let e: f64 = rng.sample(StandardNormal);
                    row[k] = base.map_or(0.0, |mu| mu[k]) + sigma * e;
                }
            }
        }
        // Stored as f32 on disk; round here so in-memory and on-disk agree.
        m.mapv_inplace(|x| x as f32 as f64);
        features.insert(name.clone(), m);
    }
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    GeneratedVideo {
        record: VideoRecord {
            id: format!("{}-{prefix}-{local:05}", cfg.name),
            label,
            num_clips: l,
            features,
            scripted_scores: None,
        },
        split,
        mask,
        segment_start: start,
    }
}

/// Generates every video in memory: train split first, then test.
pub fn generate_videos(cfg: &SynthConfig) -> Result<Vec<GeneratedVideo>> {
    cfg.check()?;
    let geo = Geometry::new(cfg);
    let n_train = cfg.train_per_class * cfg.num_classes;
    let n_test = cfg.test_per_class * cfg.num_classes;
    let jobs: Vec<(usize, Split, usize)> = (0..n_train)
        .map(|i| (i, Split::Train, i))
        .chain((0..n_test).map(|i| (n_train + i, Split::Test, i)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(idx, split, local)| gen_video(cfg, &geo, idx, split, local))
        .collect())
}

/// A generated dataset on disk.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    pub train_manifest_path: PathBuf,
    pub test_manifest_path: PathBuf,
    pub masks: BTreeMap<String, Vec<bool>>,
}

impl SynthOutput {
    /// Ground-truth salient clips of a generated video.
    pub fn saliency_mask(&self, video_id: &str) -> Result<&[bool]> {
        self.masks
            .get(video_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownVideo(video_id.to_string()))
    }
}

pub const MASK_FILE: &str = "masks.txt";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn mask_line(id: &str, mask: &[bool]) -> String {
    let bits: String = mask.iter().map(|b| if *b { '1' } else { '0' }).collect();
    format!("{id} {bits}\n")
}

/// Parses a mask file (`<video id> <bits>` per line).
pub fn read_masks(path: &Path) -> Result<BTreeMap<String, Vec<bool>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let parse = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: message.to_string(),
        };
        let (id, bits) = line.split_once(' ').ok_or_else(|| parse("expected `<id> <bits>`"))?;
        let mask = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(parse("mask bits must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(id.to_string(), mask);
    }
    Ok(out)
}

fn write_split(
    cfg: &SynthConfig,
    dir: &Path,
    split: Split,
    videos: &[&GeneratedVideo],
) -> Result<(DatasetManifest, PathBuf)> {
    let feat_dir = dir.join("feat");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    let mut masks = String::new();
    for g in videos {
        let v = &g.record;
        let mut features = BTreeMap::new();
        for (name, m) in &v.features {
            let rel = format!("feat/{}.{}.scft", v.id, name);
            write_matrix(&dir.join(&rel), FEATURE_MAGIC, m)?;
            features.insert(name.clone(), rel);
        }
        entries.push(VideoEntry {
            id: v.id.clone(),
            label: v.label,
            num_clips: v.num_clips,
            features,
            scores: None,
        });
        masks.push_str(&mask_line(&v.id, &g.mask));
    }
    let mut metadata = BTreeMap::new();
    if cfg.modalities.contains_key(AUDIO_MEL) {
        metadata.insert(format!("{AUDIO_MEL}.final_window"), "truncated-to-1-clip".to_string());
    }
    metadata.insert("generator.seed".into(), cfg.seed.to_string());
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        name: format!("{}-{split}", cfg.name),
        split,
        label_space: LabelSpace::numbered(cfg.num_classes)?,
        modalities: cfg.descriptors(),
        metadata,
        videos: entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &mpath)?;
    let mask_path = dir.join(MASK_FILE);
    fs::File::create(&mask_path)
        .and_then(|mut f| f.write_all(masks.as_bytes()))
        .map_err(|e| Error::io(&mask_path, e))?;
    Ok((manifest, mpath))
}

/// Generates and writes `out_dir/train` and `out_dir/test`.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let videos = generate_videos(cfg)?;
    let train: Vec<&GeneratedVideo> = videos.iter().filter(|g| g.split == Split::Train).collect();
    let test: Vec<&GeneratedVideo> = videos.iter().filter(|g| g.split == Split::Test).collect();
    let (train_m, train_p) = write_split(cfg, &out_dir.join("train"), Split::Train, &train)?;
    let (test_m, test_p) = write_split(cfg, &out_dir.join("test"), Split::Test, &test)?;
    let masks = videos.iter().map(|g| (g.record.id.clone(), g.mask.clone())).collect();
    Ok(SynthOutput {
        train: train_m,
        test: test_m,
        train_manifest_path: train_p,
        test_manifest_path: test_p,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            train_per_class: 4,
            test_per_class: 2,
            clips_min: 10,
            clips_max: 10,
            ..Default::default()
        }
    }

    #[test]
    fn mask_cardinality_and_contiguity() {
        let cfg = SynthConfig {
            salient_fraction: 0.2,
            ..small()
        };
        for g in generate_videos(&cfg).unwrap() {
            let on: Vec<usize> = (0..g.mask.len()).filter(|&i| g.mask[i]).collect();
            assert_eq!(on.len(), 2);
            assert_eq!(on[1], on[0] + 1);
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_videos(&small()).unwrap();
        let b = generate_videos(&small()).unwrap();
        assert_eq!(a.len(), 18);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.record, y.record);
        }
        let train_labels: Vec<usize> = a.iter().filter(|g| g.split == Split::Train).map(|g| g.record.label).collect();
        for c in 0..3 {
            assert_eq!(train_labels.iter().filter(|l| **l == c).count(), 4);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthConfig {
            salient_fraction: 0.0,
            ..small()
        };
        match cfg.check() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "salient_fraction"),
            other => panic!("{other:?}"),
        }
        let cfg = SynthConfig {
            salient_fraction: 0.05,
            ..small()
        };
        assert!(cfg.check().is_err());
    }

    #[test]
    fn class_means_have_requested_norm() {
        let cfg = small();
        let geo = Geometry::new(&cfg);
        for means in geo.class_means.values() {
            for m in means {
                assert!((m.dot(m).sqrt() - cfg.class_signal_strength).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_dataset(&small(), dir.path()).unwrap();
        let masks = read_masks(&dir.path().join("train").join(MASK_FILE)).unwrap();
        for (id, m) in &masks {
            assert_eq!(out.saliency_mask(id).unwrap(), m.as_slice());
        }
        assert!(out.saliency_mask("nope").is_err());
    }
}
