use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-clip compute prices in GFLOPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub classifier_per_clip: f64,
    /// Sampler cost per clip, keyed by modality.
    pub sampler_per_clip: BTreeMap<String, f64>,
    pub fixed_overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            classifier_per_clip: 1.0,
            sampler_per_clip: BTreeMap::new(),
            fixed_overhead: 0.0,
        }
    }
}

impl CostModel {
    pub fn check(&self) -> Result<()> {
        let ok = |x: f64| x >= 0.0 && x.is_finite();
        if !ok(self.classifier_per_clip) || !ok(self.fixed_overhead) || !self.sampler_per_clip.values().all(|c| ok(*c))
        {
            return Err(Error::config("cost", "costs must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Total sampler cost per clip over every listed modality.
    pub fn sampler_sum(&self) -> f64 {
        self.sampler_per_clip.values().sum()
    }

    /// The same model priced only for `modalities` (missing entries cost 0).
    pub fn restricted_to<'a>(&self, modalities: impl IntoIterator<Item = &'a str>) -> CostModel {
        let mut sampler_per_clip = BTreeMap::new();
        for m in modalities {
            if let Some(c) = self.sampler_per_clip.get(m) {
                sampler_per_clip.insert(m.to_string(), *c);
            }
        }
        CostModel {
            classifier_per_clip: self.classifier_per_clip,
            sampler_per_clip,
            fixed_overhead: self.fixed_overhead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostScheme {
    /// Classifier on every clip.
    Dense,
    /// Sampler on every N-th clip, classifier on the top K of those.
    Sampled,
    /// Classifier on K clips chosen without any scoring.
    Blind,
}

/// Per-video GFLOPs:
/// dense `L c_f`, sampled `ceil(L/N) sum(c_s) + min(K, ceil(L/N)) c_f`,
/// blind `min(K, L) c_f`; each plus the fixed overhead.
pub fn compute_cost(model: &CostModel, num_clips: usize, k: usize, n: usize, scheme: CostScheme) -> f64 {
    let l = num_clips as f64;
    let body = match scheme {
        CostScheme::Dense => l * model.classifier_per_clip,
        CostScheme::Sampled => {
            let candidates = num_clips.div_ceil(n.max(1));
            candidates as f64 * model.sampler_sum() + k.min(candidates) as f64 * model.classifier_per_clip
        }
        CostScheme::Blind => k.min(num_clips) as f64 * model.classifier_per_clip,
    };
    body + model.fixed_overhead
}
