//! Pipeline configuration and the hyperparameter grid.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cosfire::CosfireHyperparams;
use crate::error::{Error, Result};
use crate::hashnet::{DshLossParams, TrainConfig, GRID_BITS};
use crate::imaging::ImageFormat;
use crate::retrieval::threshold_grid;

/// Cross-product search space for the hashing network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub bits: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub l1_weights: Vec<f64>,
    pub l2_weights: Vec<f64>,
    pub margins: Vec<f64>,
    pub reg_weights: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            bits: GRID_BITS.to_vec(),
            learning_rates: vec![0.1, 0.01],
            batch_sizes: vec![32, 48, 64],
            l1_weights: vec![0.0, 1e-8],
            l2_weights: vec![0.0, 1e-8],
            margins: vec![24.0, 36.0, 48.0],
            reg_weights: vec![1e-3, 1e-5],
        }
    }
}

/// One combination from a [`HyperGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub bits: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub margin: f64,
    pub reg_weight: f64,
}

impl GridPoint {
    pub fn loss_params(&self) -> DshLossParams {
        DshLossParams {
            margin: self.margin,
            reg_weight: self.reg_weight,
            l1_weight: self.l1_weight,
            l2_weight: self.l2_weight,
        }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            ..base.clone()
        }
    }
}

impl HyperGrid {
    /// Combinations for a single bit size.
    pub fn points_for(&self, bits: usize) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &l1_weight in &self.l1_weights {
                    for &l2_weight in &self.l2_weights {
                        for &margin in &self.margins {
                            for &reg_weight in &self.reg_weights {
                                out.push(GridPoint {
                                    bits,
                                    learning_rate,
                                    batch_size,
                                    l1_weight,
                                    l2_weight,
                                    margin,
                                    reg_weight,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Every combination, bit sizes outermost.
    pub fn points(&self) -> Vec<GridPoint> {
        self.bits.iter().flat_map(|&b| self.points_for(b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub classes: Vec<String>,
    /// Input image format; guessed from each file's extension when absent.
    pub image_format: Option<ImageFormat>,
    pub n_sigma: f64,
    pub clip_max_iters: usize,
    pub cosfire: CosfireHyperparams,
    pub orientations: usize,
    pub filters_per_class: usize,
    pub train: TrainConfig,
    pub loss: DshLossParams,
    pub bits: usize,
    pub k_eval: usize,
    pub thresholds: Vec<f64>,
    pub grid: HyperGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            work_dir: PathBuf::from("work"),
            classes: ["Bent", "Compact", "FRI", "FRII"].map(String::from).to_vec(),
            image_format: None,
            n_sigma: 3.0,
            clip_max_iters: 10,
            cosfire: CosfireHyperparams::default(),
            orientations: 12,
            filters_per_class: 93,
            train: TrainConfig::default(),
            loss: DshLossParams::default(),
            bits: 72,
            k_eval: 100,
            thresholds: threshold_grid(),
            grid: HyperGrid::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidParameter("at least one class is required".into()));
        }
        if self.orientations == 0 || self.filters_per_class == 0 || self.bits == 0 || self.k_eval == 0 {
            return Err(Error::InvalidParameter(
                "orientations, filters_per_class, bits and k_eval must be >= 1".into(),
            ));
        }
        if self.thresholds.is_empty() {
            return Err(Error::InvalidParameter("threshold grid is empty".into()));
        }
        self.cosfire.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_size() {
        let g = HyperGrid::default();
        assert_eq!(g.points_for(72).len(), 144);
        assert_eq!(g.points().len(), 1296);
        let p = g.points()[0];
        assert_eq!((p.bits, p.learning_rate, p.batch_size), (16, 0.1, 32));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"bits": 16, "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.bits, 16);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.k_eval, 100);
        assert_eq!(cfg.thresholds.len(), 21);
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let cfg = PipelineConfig::default();
        cfg.save(&p).unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap(), cfg);
    }
}
