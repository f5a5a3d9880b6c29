use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::binfile::{self, FEATURE_MAGIC, SCORE_MAGIC};
use super::{LabelSpace, ModalityDescriptor, VideoRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub label: usize,
    pub num_clips: usize,
    pub features: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    name: String,
    split: Split,
    label_space: LabelSpace,
    modalities: Vec<ModalityDescriptor>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory that entry paths are resolved against.
    pub root: PathBuf,
    pub name: String,
    pub split: Split,
    pub label_space: LabelSpace,
    pub modalities: Vec<ModalityDescriptor>,
    pub metadata: BTreeMap<String, String>,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn modality(&self, name: &str) -> Option<&ModalityDescriptor> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Canonical line-delimited text: a header line, then one line per video.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine {
            name: self.name.clone(),
            split: self.split,
            label_space: self.label_space.clone(),
            modalities: self.modalities.clone(),
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for v in &self.videos {
            out.push_str(&serde_json::to_string(v).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Loads the feature (and score) matrices of video `idx`.
    pub fn load_video(&self, idx: usize) -> Result<VideoRecord> {
        let entry = self.videos.get(idx).ok_or(Error::IndexOutOfRange {
            what: "video",
            index: idx,
            len: self.videos.len(),
        })?;
        let mut features = BTreeMap::new();
        for (name, rel) in &entry.features {
            let m = binfile::read_matrix(&self.resolve(rel), FEATURE_MAGIC)?;
            features.insert(name.clone(), m);
        }
        let scripted_scores = entry
            .scores
            .as_ref()
            .map(|rel| binfile::read_matrix(&self.resolve(rel), SCORE_MAGIC))
            .transpose()?;
        Ok(VideoRecord {
            id: entry.id.clone(),
            label: entry.label,
            num_clips: entry.num_clips,
            features,
            scripted_scores,
        })
    }

    pub fn load_videos(&self) -> Result<Vec<VideoRecord>> {
        (0..self.videos.len()).map(|i| self.load_video(i)).collect()
    }

    fn check_headers(&self) -> Result<()> {
        for entry in &self.videos {
            for m in &self.modalities {
                let rel = entry.features.get(&m.name).ok_or_else(|| Error::MissingModality {
                    video: entry.id.clone(),
                    modality: m.name.clone(),
                })?;
                let path = self.resolve(rel);
                let h = binfile::read_header(&path)?;
                binfile::check_magic(&path, &h, FEATURE_MAGIC)?;
                if h.rows as usize != entry.num_clips || h.cols as usize != m.dim {
                    return Err(Error::HeaderMismatch {
                        video: entry.id.clone(),
                        modality: m.name.clone(),
                        message: format!(
                            "file has {}x{}, manifest expects {}x{}",
                            h.rows, h.cols, entry.num_clips, m.dim
                        ),
                    });
                }
            }
            if let Some(rel) = &entry.scores {
                let path = self.resolve(rel);
                let h = binfile::read_header(&path)?;
                binfile::check_magic(&path, &h, SCORE_MAGIC)?;
                let c = self.label_space.num_classes();
                if h.rows as usize != entry.num_clips || h.cols as usize != c {
                    return Err(Error::HeaderMismatch {
                        video: entry.id.clone(),
                        modality: "scores".into(),
                        message: format!(
                            "file has {}x{}, manifest expects {}x{}",
                            h.rows, h.cols, entry.num_clips, c
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

fn parse_manifest_text(text: &str, path: &Path) -> Result<DatasetManifest> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty manifest".into()))?;
    let header: HeaderLine =
        serde_json::from_str(htext).map_err(|e| parse_err(hline + 1, e.to_string()))?;
    header
        .label_space
        .check()
        .map_err(|e| parse_err(hline + 1, e.to_string()))?;
    let mut names = BTreeSet::new();
    for m in &header.modalities {
        m.check().map_err(|e| parse_err(hline + 1, e.to_string()))?;
        if !names.insert(m.name.as_str()) {
            return Err(parse_err(hline + 1, format!("duplicate modality `{}`", m.name)));
        }
    }

    let num_classes = header.label_space.num_classes();
    let mut ids = BTreeSet::new();
    let mut videos = Vec::new();
    for (idx, text) in lines {
        let entry: VideoEntry =
            serde_json::from_str(text).map_err(|e| parse_err(idx + 1, e.to_string()))?;
        if !ids.insert(entry.id.clone()) {
            return Err(parse_err(idx + 1, format!("duplicate video id `{}`", entry.id)));
        }
        if entry.num_clips == 0 {
            return Err(parse_err(idx + 1, format!("video `{}` has no clips", entry.id)));
        }
        if entry.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                video: entry.id,
                label: entry.label,
                num_classes,
            });
        }
        if let Some(extra) = entry.features.keys().find(|k| !names.contains(k.as_str())) {
            return Err(parse_err(
                idx + 1,
                format!("video `{}` references undeclared modality `{extra}`", entry.id),
            ));
        }
        videos.push(entry);
    }

    Ok(DatasetManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        name: header.name,
        split: header.split,
        label_space: header.label_space,
        modalities: header.modalities,
        metadata: header.metadata,
        videos,
    })
}

/// Parses and validates a manifest; feature file headers are checked eagerly,
/// payloads are read on demand.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest_text(&text, path)?;
    m.check_headers()?;
    Ok(m)
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, m.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// A manifest together with its fully loaded videos.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = load_manifest(path)?;
        let videos = manifest.load_videos()?;
        Ok(Dataset { manifest, videos })
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.manifest.label_space
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.label_space.num_classes()
    }

    pub fn max_clips(&self) -> usize {
        self.videos.iter().map(|v| v.num_clips).max().unwrap_or(0)
    }
}
