use std::fmt;

use super::binfile::{self, FEATURE_MAGIC, SCORE_MAGIC};
use super::{DatasetManifest, LabelSpace, ModalityDescriptor, VideoRecord};
use crate::error::{Error, Result};

/// Allowed deviation of a probability row sum from 1.
pub const SCORE_ROW_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub video: String,
    pub modality: Option<String>,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.modality {
            Some(m) => write!(f, "{} [{}] {}: {}", self.video, m, self.rule, self.detail),
            None => write!(f, "{} {}: {}", self.video, self.rule, self.detail),
        }
    }
}

fn violation(video: &str, modality: Option<&str>, rule: &'static str, detail: String) -> Violation {
    Violation {
        video: video.to_string(),
        modality: modality.map(str::to_string),
        rule,
        detail,
    }
}

/// Checks every record invariant on already-loaded videos.
pub fn validate_videos(
    labels: &LabelSpace,
    modalities: &[ModalityDescriptor],
    videos: &[VideoRecord],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let c = labels.num_classes();
    for v in videos {
        let id = v.id.as_str();
        if v.num_clips == 0 {
            out.push(violation(id, None, "num-clips", "video has no clips".into()));
        }
        if v.label >= c {
            out.push(violation(id, None, "label-range", format!("label {} >= {c}", v.label)));
        }
        for m in modalities {
            let Some(mat) = v.features.get(&m.name) else {
                out.push(violation(id, Some(&m.name), "modality-present", "missing".into()));
                continue;
            };
            if mat.dim() != (v.num_clips, m.dim) {
                out.push(violation(
                    id,
                    Some(&m.name),
                    "feature-shape",
                    format!("{:?} != ({}, {})", mat.dim(), v.num_clips, m.dim),
                ));
            }
            if let Some(pos) = mat.iter().position(|x| !x.is_finite()) {
                out.push(violation(
                    id,
                    Some(&m.name),
                    "feature-finite",
                    format!("non-finite entry at flat index {pos}"),
                ));
            }
        }
        for name in v.features.keys() {
            if !modalities.iter().any(|m| &m.name == name) {
                out.push(violation(id, Some(name), "modality-declared", "undeclared".into()));
            }
        }
        if let Some(scores) = &v.scripted_scores {
            if scores.dim() != (v.num_clips, c) {
                out.push(violation(
                    id,
                    Some("scores"),
                    "score-shape",
                    format!("{:?} != ({}, {c})", scores.dim(), v.num_clips),
                ));
            }
            for (r, row) in scores.rows().into_iter().enumerate() {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    out.push(violation(
                        id,
                        Some("scores"),
                        "score-range",
                        format!("row {r} has an entry outside [0,1]"),
                    ));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > SCORE_ROW_TOLERANCE {
                    out.push(violation(
                        id,
                        Some("scores"),
                        "score-row-sum",
                        format!("row {r} sums to {sum}"),
                    ));
                }
            }
        }
    }
    out
}

/// Full validation of a manifest and the files it references.
///
/// Only I/O failures are returned as errors; everything else is a violation.
pub fn validate_dataset(m: &DatasetManifest) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    if let Err(e) = m.label_space.check() {
        out.push(violation("<header>", None, "label-space", e.to_string()));
    }
    let mut videos = Vec::with_capacity(m.videos.len());
    for entry in &m.videos {
        let mut rec = VideoRecord {
            id: entry.id.clone(),
            label: entry.label,
            num_clips: entry.num_clips,
            features: Default::default(),
            scripted_scores: None,
        };
        for (name, rel) in &entry.features {
            let path = m.resolve(rel);
            match binfile::read_matrix(&path, FEATURE_MAGIC) {
                Ok(mat) => {
                    rec.features.insert(name.clone(), mat);
                }
                Err(Error::Io { path, source }) => return Err(Error::Io { path, source }),
                Err(e) => out.push(violation(&entry.id, Some(name), "feature-file", e.to_string())),
            }
        }
        if let Some(rel) = &entry.scores {
            match binfile::read_matrix(&m.resolve(rel), SCORE_MAGIC) {
                Ok(mat) => rec.scripted_scores = Some(mat),
                Err(Error::Io { path, source }) => return Err(Error::Io { path, source }),
                Err(e) => out.push(violation(&entry.id, Some("scores"), "score-file", e.to_string())),
            }
        }
        videos.push(rec);
    }
    out.extend(validate_videos(&m.label_space, &m.modalities, &videos));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use std::collections::BTreeMap;

    fn video(id: &str, scores: Option<Array2<f64>>) -> VideoRecord {
        let mut features = BTreeMap::new();
        features.insert("visual-md".to_string(), Array2::zeros((2, 3)));
        VideoRecord {
            id: id.into(),
            label: 0,
            num_clips: 2,
            features,
            scripted_scores: scores,
        }
    }

    #[test]
    fn valid_videos_have_no_violations() {
        let ls = LabelSpace::numbered(2).unwrap();
        let mods = vec![ModalityDescriptor::canonical("visual-md", 3)];
        let vids: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|id| video(id, Some(array![[0.5, 0.5], [1.0, 0.0]])))
            .collect();
        assert!(validate_videos(&ls, &mods, &vids).is_empty());
    }

    #[test]
    fn short_row_sum_is_one_violation() {
        let ls = LabelSpace::numbered(2).unwrap();
        let mods = vec![ModalityDescriptor::canonical("visual-md", 3)];
        let vids = vec![video("a", Some(array![[0.5, 0.5], [0.4, 0.4]]))];
        let v = validate_videos(&ls, &mods, &vids);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "score-row-sum");
        assert!(v[0].detail.contains("row 1"));
    }

    #[test]
    fn missing_modality_is_flagged() {
        let ls = LabelSpace::numbered(2).unwrap();
        let mods = vec![
            ModalityDescriptor::canonical("visual-md", 3),
            ModalityDescriptor::canonical("audio-mel", 4),
        ];
        let v = validate_videos(&ls, &mods, &[video("a", None)]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].modality.as_deref(), Some("audio-mel"));
    }
}
