//! Labeled descriptor matrices and their on-disk form.
//!
//! ```text
//! "DSCR" | u32 version | u32 rows | u32 cols | (u32 id, u32 label, cols x f64)*
//! ```
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cosfire::FilterBank;
use crate::error::{Error, Result};
use crate::hashnet::Matrix;
use crate::imaging::Image;

pub const DESCRIPTORS_MAGIC: &[u8; 4] = b"DSCR";
pub const DESCRIPTORS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub ids: Vec<u32>,
    pub labels: Vec<usize>,
    pub features: Matrix,
}

impl DescriptorSet {
    pub fn new(ids: Vec<u32>, labels: Vec<usize>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() || labels.len() != features.rows() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                found: ids.len().min(labels.len()),
            });
        }
        Ok(Self {
            ids,
            labels,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn encode(&self) -> Vec<u8> {
        let cols = self.features.cols();
        let mut out = Vec::with_capacity(16 + self.len() * (8 + 8 * cols));
        out.extend_from_slice(DESCRIPTORS_MAGIC);
        out.extend_from_slice(&DESCRIPTORS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for r in 0..self.len() {
            out.extend_from_slice(&self.ids[r].to_le_bytes());
            out.extend_from_slice(&(self.labels[r] as u32).to_le_bytes());
            for v in self.features.row(r) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Corrupt("descriptor file shorter than its header".into()));
        }
        if &bytes[..4] != DESCRIPTORS_MAGIC {
            return Err(Error::Version("not a descriptor file (bad magic)".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != DESCRIPTORS_VERSION {
            return Err(Error::Version(format!("descriptor file version {version}")));
        }
        let rows = word(8) as usize;
        let cols = word(12) as usize;
        let record = 8 + 8 * cols;
        let body = &bytes[16..];
        if body.len() != rows * record {
            return Err(Error::Corrupt(format!(
                "expected {} record bytes, found {}",
                rows * record,
                body.len()
            )));
        }
        let mut ids = Vec::with_capacity(rows);
        let mut labels = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * cols);
        for rec in body.chunks_exact(record) {
            ids.push(u32::from_le_bytes(rec[..4].try_into().unwrap()));
            labels.push(u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize);
            data.extend(
                rec[8..]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
            );
        }
        Self::new(ids, labels, Matrix::new(rows, cols, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Descriptors of `images` as matrix rows, computed in parallel.
pub fn describe_images(bank: &FilterBank, images: &[Image]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| bank.compute_descriptor(img).map(|d| d.into_vec()))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, bank.len()));
    }
    Matrix::from_rows(&rows)
}
