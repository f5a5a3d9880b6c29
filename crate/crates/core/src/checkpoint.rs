//! Model checkpoints in the `SCLM` container.
//!
//! Layout, little-endian: the 16-byte matrix header (magic, version, rows and
//! cols of the first tensor), a kind tag byte, the modality name (u32 length
//! then UTF-8), a u32 tensor count, then each tensor as u32 rows, u32 cols and
//! row-major f64 values. Tensors come dims first, then weights, then bias.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::classifier::LinearClipClassifier;
use crate::datamodel::binfile::{MatrixHeader, FORMAT_VERSION, HEADER_LEN};
use crate::error::{Error, Result};
use crate::saliency::{SaliencyScorer, ScorerKind, ScorerParams};
use crate::training::SoftmaxHead;

pub const MODEL_MAGIC: [u8; 4] = *b"SCLM";
pub const CLASSIFIER_TAG: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Classifier(LinearClipClassifier),
    Scorer(SaliencyScorer),
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

impl Checkpoint {
    pub fn modality(&self) -> &str {
        match self {
            Checkpoint::Classifier(c) => &c.modality,
            Checkpoint::Scorer(s) => &s.modality,
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Checkpoint::Classifier(_) => CLASSIFIER_TAG,
            Checkpoint::Scorer(s) => s.kind().tag(),
        }
    }

    fn tensors(&self) -> Vec<Array2<f64>> {
        match self {
            Checkpoint::Classifier(c) => vec![c.head.weights.clone(), row(&c.head.bias)],
            Checkpoint::Scorer(s) => match &s.params {
                ScorerParams::LinearSigmoid { weights, bias } => vec![row(weights), scalar(*bias)],
                ScorerParams::Mlp {
                    hidden_w,
                    hidden_b,
                    out_w,
                    out_b,
                } => vec![hidden_w.clone(), row(hidden_b), row(out_w), scalar(*out_b)],
                ScorerParams::Ac(h) => vec![h.weights.clone(), row(&h.bias)],
            },
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let header = MatrixHeader {
            magic: MODEL_MAGIC,
            version: FORMAT_VERSION,
            rows: tensors[0].nrows() as u32,
            cols: tensors[0].ncols() as u32,
        };
        let mut out = header.encode().to_vec();
        out.push(self.tag());
        let name = self.modality().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let head: [u8; HEADER_LEN] = r.take(HEADER_LEN)?.try_into().expect("fixed length");
        let header = MatrixHeader::decode(&head);
        if header.magic != MODEL_MAGIC || header.version != FORMAT_VERSION {
            return Err(r.err("not an SCLM version 1 checkpoint"));
        }
        let tag = r.take(1)?[0];
        let name_len = r.u32()? as usize;
        let modality = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| r.err("modality is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(8));
        for _ in 0..count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| r.err("tensor too large"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"));
        }
        if r.pos != bytes.len() {
            return Err(r.err("trailing bytes"));
        }
        if tensors.first().map(|t| (t.nrows() as u32, t.ncols() as u32)) != Some((header.rows, header.cols)) {
            return Err(r.err("header dims disagree with first tensor"));
        }
        build(tag, modality, tensors).map_err(|m| r.err(m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn flat_row(t: &Array2<f64>, len: usize) -> std::result::Result<Array1<f64>, &'static str> {
    if t.nrows() != 1 || t.ncols() != len {
        return Err("vector tensor has wrong shape");
    }
    Ok(t.row(0).to_owned())
}

fn one(t: &Array2<f64>) -> std::result::Result<f64, &'static str> {
    if t.dim() != (1, 1) {
        return Err("scalar tensor has wrong shape");
    }
    Ok(t[[0, 0]])
}

fn softmax_head(t: &[Array2<f64>]) -> std::result::Result<SoftmaxHead, &'static str> {
    let [w, b] = t else { return Err("expected 2 tensors") };
    Ok(SoftmaxHead {
        weights: w.clone(),
        bias: flat_row(b, w.nrows())?,
    })
}

fn build(tag: u8, modality: String, t: Vec<Array2<f64>>) -> std::result::Result<Checkpoint, &'static str> {
    if tag == CLASSIFIER_TAG {
        return Ok(Checkpoint::Classifier(LinearClipClassifier {
            modality,
            head: softmax_head(&t)?,
        }));
    }
    let params = match ScorerKind::from_tag(tag).ok_or("unknown kind tag")? {
        ScorerKind::LinearSigmoid => {
            let [w, b] = t.as_slice() else { return Err("expected 2 tensors") };
            ScorerParams::LinearSigmoid {
                weights: flat_row(w, w.ncols())?,
                bias: one(b)?,
            }
        }
        ScorerKind::Mlp1Hidden => {
            let [hw, hb, ow, ob] = t.as_slice() else { return Err("expected 4 tensors") };
            ScorerParams::Mlp {
                hidden_w: hw.clone(),
                hidden_b: flat_row(hb, hw.nrows())?,
                out_w: flat_row(ow, hw.nrows())?,
                out_b: one(ob)?,
            }
        }
        ScorerKind::AcClassifier => ScorerParams::Ac(softmax_head(&t)?),
    };
    Ok(Checkpoint::Scorer(SaliencyScorer { modality, params }))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err("truncated checkpoint"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
