use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::selection::EmpiricalHistogram;

/// Where a cross-protocol sampler came from and where it was evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sampler_classifier: String,
    pub sampler_dataset: String,
    pub eval_classifier: String,
    pub eval_dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub num_clips: usize,
    pub indices: Vec<usize>,
    /// Sum of the classifier's true-class scores over the selected clips.
    pub true_class_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub strategy: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub accuracy: f64,
    pub gflops_per_video: f64,
    pub histogram: EmpiricalHistogram,
    #[serde(skip)]
    pub videos: Vec<VideoOutcome>,
}

impl EvalReport {
    pub fn correct(&self) -> usize {
        self.videos.iter().filter(|v| v.label == v.predicted).count()
    }

    /// One-line label, e.g. `scsampler[union-list(K'=8)]`.
    pub fn label(&self) -> String {
        match &self.fusion {
            Some(f) => format!("{}[{f}]", self.strategy),
            None => self.strategy.clone(),
        }
    }
}

/// Normalized histogram of selected clip centers `(i + 0.5) / L`.
pub fn location_histogram<'a, I>(selections: I, bins: usize, name: &str) -> Result<EmpiricalHistogram>
where
    I: IntoIterator<Item = (usize, &'a [usize])>,
{
    let mut locs = Vec::new();
    for (num_clips, indices) in selections {
        for &i in indices {
            locs.push(crate::datamodel::normalized_location(i, num_clips)?);
        }
    }
    EmpiricalHistogram::from_locations(&locs, bins, name)
}

/// Summary line followed by one line per video.
pub fn write_report_jsonl<W: Write>(mut w: W, report: &EvalReport) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, report)?;
    w.write_all(b"\n")?;
    for v in &report.videos {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub const CSV_HEADER: [&str; 5] = ["strategy", "K", "N", "accuracy", "gflops_per_video"];

pub fn write_summary_csv<W: Write>(w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.write_record([
            r.label(),
            r.k.to_string(),
            r.n.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.gflops_per_video),
        ])?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_first_clip_lands_in_first_bin() {
        let sel = vec![0usize];
        let items = (0..20).map(|_| (10usize, sel.as_slice()));
        let h = location_histogram(items, 100, "t").unwrap();
        assert_eq!(h.bins[5], 1.0);
        assert!(h.is_normalized());
    }

    #[test]
    fn csv_has_fixed_header() {
        let r = EvalReport {
            dataset: "d".into(),
            strategy: "dense".into(),
            k: 10,
            n: 1,
            fusion: None,
            provenance: None,
            accuracy: 0.5,
            gflops_per_video: 12.25,
            histogram: EmpiricalHistogram::uniform(2),
            videos: vec![],
        };
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,K,N,accuracy,gflops_per_video\ndense,10,1,0.500000,12.250000\n"
        );
    }
}
