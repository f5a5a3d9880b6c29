//! Clip classifiers and video-level mean aggregation.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::datamodel::{Dataset, VideoRecord, SCORE_ROW_TOLERANCE};
use crate::error::{Error, Result};
use crate::training::{self, Example, SoftmaxHead, Trained, TrainingConfig};

/// Probability vector over the action classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(format!("probability outside [0,1]: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SCORE_ROW_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
        }
        Ok(ClassDistribution { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        ClassDistribution {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// A clip classifier `f`: clip -> distribution over classes.
pub trait ClipClassifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn classify_clip(&self, v: &VideoRecord, i: usize) -> Result<ClassDistribution>;

    /// `f_y(v^(i))` for every clip, with `y` the video's label.
    fn true_class_scores(&self, v: &VideoRecord) -> Result<Vec<f64>> {
        (0..v.num_clips)
            .map(|i| Ok(self.classify_clip(v, i)?.probs()[v.label]))
            .collect()
    }
}

/// Multinomial logistic regression over one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClipClassifier {
    pub modality: String,
    pub head: SoftmaxHead,
}

impl ClipClassifier for LinearClipClassifier {
    fn num_classes(&self) -> usize {
        self.head.classes()
    }

    fn classify_clip(&self, v: &VideoRecord, i: usize) -> Result<ClassDistribution> {
        let x = v.feature(&self.modality, i)?;
        if x.len() != self.head.dim() {
            return Err(Error::DimMismatch {
                what: "classifier input",
                expected: self.head.dim(),
                actual: x.len(),
            });
        }
        Ok(ClassDistribution {
            probs: self.head.probs(x),
        })
    }
}

/// Table-driven classifier replaying externally computed clip scores.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClassifier {
    num_classes: usize,
    table: BTreeMap<String, Array2<f64>>,
}

impl ScriptedClassifier {
    pub fn new(num_classes: usize) -> Self {
        ScriptedClassifier {
            num_classes,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, video: impl Into<String>, scores: Array2<f64>) -> Result<()> {
        let video = video.into();
        if scores.ncols() != self.num_classes {
            return Err(Error::DimMismatch {
                what: "scripted score columns",
                expected: self.num_classes,
                actual: scores.ncols(),
            });
        }
        for row in scores.rows() {
            ClassDistribution::new(row.to_vec())?;
        }
        self.table.insert(video, scores);
        Ok(())
    }

    /// Collects the scripted scores of every video that carries them.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut f = ScriptedClassifier::new(ds.num_classes());
        for v in &ds.videos {
            if let Some(s) = &v.scripted_scores {
                f.insert(v.id.clone(), s.clone())?;
            }
        }
        Ok(f)
    }
}

impl ClipClassifier for ScriptedClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn classify_clip(&self, v: &VideoRecord, i: usize) -> Result<ClassDistribution> {
        let table = self
            .table
            .get(&v.id)
            .ok_or_else(|| Error::MissingScores { video: v.id.clone() })?;
        if i >= table.nrows() {
            return Err(Error::IndexOutOfRange {
                what: "clip",
                index: i,
                len: table.nrows(),
            });
        }
        Ok(ClassDistribution {
            probs: table.row(i).to_vec(),
        })
    }
}

/// Elementwise arithmetic mean.
pub fn aggregate_mean(dists: &[ClassDistribution]) -> Result<ClassDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot aggregate zero clip predictions".into()))?;
    let c = first.num_classes();
    let mut acc = vec![0.0; c];
    for d in dists {
        if d.num_classes() != c {
            return Err(Error::DimMismatch {
                what: "class distribution",
                expected: c,
                actual: d.num_classes(),
            });
        }
        for (a, p) in acc.iter_mut().zip(d.probs()) {
            *a += p;
        }
    }
    let n = dists.len() as f64;
    Ok(ClassDistribution {
        probs: acc.into_iter().map(|a| a / n).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub class: usize,
    pub distribution: ClassDistribution,
}

/// Video-level prediction from the mean over the selected clips only.
pub fn predict_video(
    f: &dyn ClipClassifier,
    v: &VideoRecord,
    indices: &[usize],
) -> Result<VideoPrediction> {
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!("video `{}`: empty clip selection", v.id)));
    }
    let dists = indices
        .iter()
        .map(|&i| f.classify_clip(v, i))
        .collect::<Result<Vec<_>>>()?;
    let distribution = aggregate_mean(&dists)?;
    Ok(VideoPrediction {
        class: distribution.argmax(),
        distribution,
    })
}

/// Every `(clip feature, video label)` pair of `modality`.
pub(crate) fn clip_examples<'a>(train: &'a Dataset, modality: &str) -> Result<Vec<Example<'a>>> {
    let mut out = Vec::new();
    for v in &train.videos {
        let m = v.modality(modality)?;
        out.extend(m.rows().into_iter().map(|r| (r, v.label)));
    }
    Ok(out)
}

/// Trains the reference classifier on every clip, each labeled with its
/// video's label.
pub fn train_linear_classifier(
    train: &Dataset,
    modality: &str,
    cfg: &TrainingConfig,
) -> Result<Trained<LinearClipClassifier>> {
    let examples = clip_examples(train, modality)?;
    let dim = examples
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::InvalidInput("empty training set".into()))?;
    let init = SoftmaxHead::seeded(train.num_classes(), dim, cfg.seed);
    let out = training::train_softmax(init, &examples, cfg, "classifier")?;
    Ok(Trained {
        model: LinearClipClassifier {
            modality: modality.to_string(),
            head: out.model,
        },
        history: out.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn video_with(feat: Array2<f64>) -> VideoRecord {
        let mut features = BTreeMap::new();
        let n = feat.nrows();
        features.insert("m".to_string(), feat);
        VideoRecord {
            id: "a".into(),
            label: 0,
            num_clips: n,
            features,
            scripted_scores: None,
        }
    }

    #[test]
    fn zero_linear_is_uniform() {
        let f = LinearClipClassifier {
            modality: "m".into(),
            head: SoftmaxHead::zeros(4, 3),
        };
        let v = video_with(array![[1.0, -2.0, 3.0]]);
        let d = f.classify_clip(&v, 0).unwrap();
        assert!(d.probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn scripted_returns_table_row() {
        let mut f = ScriptedClassifier::new(2);
        let table = array![[0.1, 0.9], [0.4, 0.6], [0.7, 0.3]];
        f.insert("a", table.clone()).unwrap();
        let v = video_with(Array2::zeros((3, 1)));
        assert_eq!(f.classify_clip(&v, 2).unwrap().probs(), &[0.7, 0.3]);
        let mut other = v.clone();
        other.id = "b".into();
        assert!(matches!(f.classify_clip(&other, 0), Err(Error::MissingScores { .. })));
    }

    #[test]
    fn missing_modality_errors() {
        let f = LinearClipClassifier {
            modality: "audio".into(),
            head: SoftmaxHead::zeros(2, 1),
        };
        let v = video_with(Array2::zeros((1, 1)));
        assert!(matches!(f.classify_clip(&v, 0), Err(Error::MissingModality { .. })));
    }

    #[test]
    fn aggregate_examples() {
        let p = ClassDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(aggregate_mean(&[p.clone(), p.clone()]).unwrap(), p);
        let a = ClassDistribution::new(vec![1.0, 0.0]).unwrap();
        let b = ClassDistribution::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(aggregate_mean(&[a, b]).unwrap().probs(), &[0.5, 0.5]);
        assert!(aggregate_mean(&[]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.3, 0.35, 0.35]), 1);
        assert_eq!(ClassDistribution::uniform(4).argmax(), 0);
    }

    #[test]
    fn singleton_selection_matches_clip() {
        let mut f = ScriptedClassifier::new(2);
        f.insert("a", array![[0.1, 0.9], [0.8, 0.2]]).unwrap();
        let v = video_with(Array2::zeros((2, 1)));
        let p = predict_video(&f, &v, &[1]).unwrap();
        assert_eq!(p.class, 0);
        assert_eq!(p.distribution.probs(), &[0.8, 0.2]);
        assert!(predict_video(&f, &v, &[]).is_err());
    }
}
