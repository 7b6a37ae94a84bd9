//! Model file: `"CHSH" | u32 version | u32 layers | (u32 in, u32 out, u8 bn)* | f64 blocks`.
//!
//! Parameter blocks follow layer order: weights (`in x out`, row-major),
//! bias, then for batch-normalized layers gamma, beta, running mean and
//! running variance. Everything is little-endian. A JSON sidecar next to
//! the model records how it was trained.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::loss::DshLossParams;
use super::matrix::Matrix;
use super::mlp::{BatchNorm, DenseLayer, MlpParams};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CHSH";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(p: &MlpParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.layers().len() as u32).to_le_bytes());
    for l in p.layers() {
        out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
        out.push(l.norm.is_some() as u8);
    }
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for l in p.layers() {
        put(l.weights.data());
        put(&l.bias);
        if let Some(bn) = &l.norm {
            put(&bn.gamma);
            put(&bn.beta);
            put(&bn.running_mean);
            put(&bn.running_var);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "model truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<MlpParams> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Version("not a model file (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Version(format!(
            "model format version {version}, expected {MODEL_VERSION}"
        )));
    }
    let n_layers = r.u32()? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Corrupt(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let inputs = r.u32()? as usize;
        let outputs = r.u32()? as usize;
        let bn = match r.take(1)?[0] {
            0 => false,
            1 => true,
            other => return Err(Error::Corrupt(format!("invalid batch-norm flag {other}"))),
        };
        if inputs == 0 || outputs == 0 {
            return Err(Error::Corrupt("zero layer width".into()));
        }
        shapes.push((inputs, outputs, bn));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (inputs, outputs, bn) in shapes {
        let weights = Matrix::new(inputs, outputs, r.f64s(inputs * outputs)?)?;
        let bias = r.f64s(outputs)?;
        let norm = if bn {
            let norm = BatchNorm {
                gamma: r.f64s(outputs)?,
                beta: r.f64s(outputs)?,
                running_mean: r.f64s(outputs)?,
                running_var: r.f64s(outputs)?,
            };
            if norm.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Corrupt("non-positive running variance".into()));
            }
            Some(norm)
        } else {
            None
        };
        layers.push(DenseLayer {
            inputs,
            outputs,
            weights,
            bias,
            norm,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    MlpParams::from_layers(layers).map_err(|e| Error::Corrupt(e.to_string()))
}

/// Training provenance stored next to a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub bits: usize,
    pub sizes: Vec<usize>,
    pub train: TrainConfig,
    pub loss: DshLossParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_valid_map: Option<f64>,
}

pub fn sidecar_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("json")
}

pub fn serialize_model(p: &MlpParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(p)).map_err(|e| Error::io(path, e))
}

pub fn deserialize_model(path: impl AsRef<Path>) -> Result<MlpParams> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes the model and its JSON sidecar.
pub fn save_model(p: &MlpParams, sidecar: &ModelSidecar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    serialize_model(p, path)?;
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_string_pretty(sidecar)? + "\n").map_err(|e| Error::io(sp, e))
}

pub fn load_sidecar(model_path: impl AsRef<Path>) -> Result<ModelSidecar> {
    let sp = sidecar_path(model_path.as_ref());
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    Ok(serde_json::from_str(&text)?)
}
