//! Domain types, dataset manifests and feature-file ingestion.

pub mod binfile;
mod manifest;
mod validate;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{load_manifest, write_manifest, Dataset, DatasetManifest, Split, VideoEntry};
pub use validate::{validate_dataset, validate_videos, Violation, SCORE_ROW_TOLERANCE};

pub const VISUAL_MD: &str = "visual-md";
pub const VISUAL_RGBR: &str = "visual-rgbr";
pub const VISUAL_IF: &str = "visual-if";
pub const AUDIO_MEL: &str = "audio-mel";

/// The set of action classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let ls = LabelSpace { names };
        ls.check()?;
        Ok(ls)
    }

    /// `class-0`, `class-1`, ...
    pub fn numbered(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|c| format!("class-{c}")).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.names.len() < 2 {
            return Err(Error::config("label_space", "at least 2 classes required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &self.names {
            if !seen.insert(n.as_str()) {
                return Err(Error::config("label_space", format!("duplicate class name `{n}`")));
            }
        }
        Ok(())
    }
}

/// A named per-clip feature channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityDescriptor {
    pub name: String,
    pub dim: usize,
    /// Number of consecutive clips one feature row summarizes.
    pub window_clips: usize,
}

impl ModalityDescriptor {
    /// Descriptor with the canonical window for `name` (2 for audio, 1 otherwise).
    pub fn canonical(name: &str, dim: usize) -> Self {
        let window_clips = if name == AUDIO_MEL { 2 } else { 1 };
        ModalityDescriptor {
            name: name.to_string(),
            dim,
            window_clips,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config(format!("modality {}", self.name), "dim must be >= 1"));
        }
        if self.window_clips == 0 {
            return Err(Error::config(
                format!("modality {}", self.name),
                "window_clips must be >= 1",
            ));
        }
        Ok(())
    }
}

/// One labeled video, split into `num_clips` clips.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub label: usize,
    pub num_clips: usize,
    /// Modality name to an `L x d` feature matrix.
    pub features: BTreeMap<String, Array2<f64>>,
    /// Optional `L x C` matrix of precomputed clip-classifier probabilities.
    pub scripted_scores: Option<Array2<f64>>,
}

impl VideoRecord {
    pub fn modality(&self, name: &str) -> Result<&Array2<f64>> {
        self.features.get(name).ok_or_else(|| Error::MissingModality {
            video: self.id.clone(),
            modality: name.to_string(),
        })
    }

    /// Feature vector of clip `i` in modality `name`.
    pub fn feature(&self, name: &str, i: usize) -> Result<ArrayView1<'_, f64>> {
        let m = self.modality(name)?;
        if i >= m.nrows() {
            return Err(Error::IndexOutOfRange {
                what: "clip",
                index: i,
                len: m.nrows(),
            });
        }
        Ok(m.row(i))
    }
}

/// Center of clip `i` on the unit interval: `(i + 0.5) / L`.
pub fn normalized_location(i: usize, num_clips: usize) -> Result<f64> {
    if i >= num_clips {
        return Err(Error::IndexOutOfRange {
            what: "clip",
            index: i,
            len: num_clips,
        });
    }
    Ok((i as f64 + 0.5) / num_clips as f64)
}
