//! Little-endian binary matrix container shared by feature, score and model files.
//!
//! Layout: 4-byte magic, `u32` version (=1), `u32` rows, `u32` cols, then
//! `rows * cols` IEEE-754 `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"SCFT";
pub const SCORE_MAGIC: [u8; 4] = *b"SCSC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub magic: [u8; 4],
    pub version: u32,
    pub rows: u32,
    pub cols: u32,
}

impl MatrixHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&self.magic);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..12].copy_from_slice(&self.rows.to_le_bytes());
        out[12..16].copy_from_slice(&self.cols.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Self {
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        MatrixHeader {
            magic: bytes[0..4].try_into().unwrap(),
            version: word(4),
            rows: word(8),
            cols: word(12),
        }
    }
}

pub fn encode_matrix(magic: [u8; 4], m: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let header = MatrixHeader {
        magic,
        version: FORMAT_VERSION,
        rows: rows as u32,
        cols: cols as u32,
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    buf.extend_from_slice(&header.encode());
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf
}

pub fn write_matrix(path: &Path, magic: [u8; 4], m: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_matrix(magic, m))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads only the 16-byte header.
pub fn read_header(path: &Path) -> Result<MatrixHeader> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = [0u8; HEADER_LEN];
    file.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(MatrixHeader::decode(&bytes))
}

/// Reads a whole matrix, checking magic and version.
pub fn read_matrix(path: &Path, magic: [u8; 4]) -> Result<Array2<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = [0u8; HEADER_LEN];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let header = MatrixHeader::decode(&bytes);
    check_magic(path, &header, magic)?;
    let n = header.rows as usize * header.cols as usize;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((header.rows as usize, header.cols as usize), data)
        .expect("shape matches length"))
}

pub(crate) fn check_magic(path: &Path, header: &MatrixHeader, magic: [u8; 4]) -> Result<()> {
    if header.magic != magic || header.version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!(
                "expected magic {:?} v{}, found {:?} v{}",
                String::from_utf8_lossy(&magic),
                FORMAT_VERSION,
                String::from_utf8_lossy(&header.magic),
                header.version
            ),
        });
    }
    Ok(())
}
