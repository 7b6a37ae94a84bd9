//! Shared fixtures for integration tests: the synthetic end-to-end pipeline.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use cosfire_hash::cosfire::{build_filter_bank, default_orientations, CosfireHyperparams, FilterBank, PrototypeCandidate};
use cosfire_hash::descriptors::{describe_images, DescriptorSet};
use cosfire_hash::hashnet::{train, DshLossParams, Matrix, MlpParams, TrainConfig, TrainHistory};
use cosfire_hash::imaging::{sigma_clip, Image, Split};
use cosfire_hash::synthetic::{generate, split_for, SyntheticConfig, SYNTHETIC_CLASSES};

pub fn synthetic_hyperparams() -> CosfireHyperparams {
    CosfireHyperparams {
        sigma_bank: vec![2.0, 3.0],
        radii: vec![0.0, 6.0, 12.0, 18.0],
        t1: 0.1,
        sigma0_blur: 1.0,
        alpha_blur: 0.1,
    }
}

pub struct Labeled {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub ids: Vec<u32>,
}

/// Clipped synthetic images grouped by split.
pub fn synthetic_splits(cfg: &SyntheticConfig) -> [Labeled; 3] {
    let samples = generate(cfg).unwrap();
    let mut out = [Split::Train, Split::Valid, Split::Test].map(|_| Labeled {
        images: Vec::new(),
        labels: Vec::new(),
        ids: Vec::new(),
    });
    for (i, s) in samples.into_iter().enumerate() {
        let slot = match split_for(i / SYNTHETIC_CLASSES.len(), cfg.per_class) {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        };
        out[slot].images.push(sigma_clip(&s.image, 3.0, 10).unwrap());
        out[slot].labels.push(s.label);
        out[slot].ids.push(i as u32);
    }
    out
}

pub fn synthetic_bank(train: &Labeled, filters_per_class: usize, seed: u64) -> FilterBank {
    let classes: Vec<String> = SYNTHETIC_CLASSES.map(String::from).to_vec();
    let candidates: Vec<PrototypeCandidate> = train
        .labels
        .iter()
        .enumerate()
        .map(|(i, &class)| PrototypeCandidate { id: i.to_string(), class })
        .collect();
    build_filter_bank(
        &classes,
        &candidates,
        filters_per_class,
        &synthetic_hyperparams(),
        default_orientations(12),
        seed,
        |c| Ok(train.images[c.id.parse::<usize>().unwrap()].clone()),
    )
    .unwrap()
}

pub fn describe(bank: &FilterBank, set: &Labeled) -> DescriptorSet {
    let features = describe_images(bank, &set.images).unwrap();
    DescriptorSet::new(set.ids.clone(), set.labels.clone(), features).unwrap()
}

pub struct PipelineRun {
    pub bank: FilterBank,
    pub train: DescriptorSet,
    pub valid: DescriptorSet,
    pub test: DescriptorSet,
    pub params: MlpParams,
    pub history: TrainHistory,
    pub train_time: Duration,
}

pub struct PipelineSettings {
    pub data: SyntheticConfig,
    pub filters_per_class: usize,
    pub bits: usize,
    pub train: TrainConfig,
    pub loss: DshLossParams,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            data: SyntheticConfig {
                per_class: 60,
                ..SyntheticConfig::default()
            },
            filters_per_class: 3,
            bits: 16,
            train: TrainConfig {
                learning_rate: 0.01,
                batch_size: 32,
                epochs: 60,
                seed: 3,
                patience: 0,
                k_eval: 10,
                valid_threshold: 0.0,
                hidden: vec![300, 200],
            },
            loss: DshLossParams {
                margin: 24.0,
                reg_weight: 1e-3,
                l1_weight: 0.0,
                l2_weight: 0.0,
            },
        }
    }
}

pub fn run_pipeline(s: &PipelineSettings) -> PipelineRun {
    let [train_imgs, valid_imgs, test_imgs] = synthetic_splits(&s.data);
    let bank = synthetic_bank(&train_imgs, s.filters_per_class, s.data.seed);
    let train_set = describe(&bank, &train_imgs);
    let valid = describe(&bank, &valid_imgs);
    let test = describe(&bank, &test_imgs);
    let start = Instant::now();
    let (params, history) = train(&train_set, &valid, s.bits, &s.train, &s.loss).unwrap();
    PipelineRun {
        bank,
        train: train_set,
        valid,
        test,
        params,
        history,
        train_time: start.elapsed(),
    }
}

pub fn activations(params: &MlpParams, set: &DescriptorSet) -> Matrix {
    params.infer(&set.features).unwrap()
}
