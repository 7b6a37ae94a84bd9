//! Seeded synthetic dataset of blob morphologies at random orientations.
//!
//! Four classes, each a sum of isotropic Gaussian blobs around the image
//! centre plus Gaussian noise:
//!
//! | class         | blobs                                              |
//! |---------------|----------------------------------------------------|
//! | `two_lobe`    | two lobes on opposite sides of the centre          |
//! | `bent_lobe`   | a core and two lobes 120 degrees apart             |
//! | `single_blob` | one wide blob at the centre                        |
//! | `three_blob`  | three lobes at 120 degree spacing                  |

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::{save_rawf32, DatasetManifest, Image, ManifestEntry, Split};

pub const SYNTHETIC_CLASSES: [&str; 4] = ["two_lobe", "bent_lobe", "single_blob", "three_blob"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Side length in pixels; odd sizes put the centre on a pixel.
    pub size: usize,
    pub per_class: usize,
    /// Distance of the lobes from the centre, in pixels.
    pub lobe_radius: f64,
    pub blob_sigma: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 65,
            per_class: 50,
            lobe_radius: 18.0,
            blob_sigma: 2.5,
            noise_std: 0.01,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Image,
    pub label: usize,
    pub orientation: f64,
}

/// Blob centres (x, y offset from the image centre), std and amplitude.
fn layout(class: usize, theta: f64, r: f64, s: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, f64, f64)> {
    let at = |angle: f64, radius: f64| (radius * angle.cos(), radius * angle.sin());
    let mut jitter = || rng.gen_range(0.9..1.1);
    let lobe = |angle: f64, amp: f64| {
        let (x, y) = at(angle, r);
        (x, y, s, amp)
    };
    match class {
        0 => vec![lobe(theta, jitter()), lobe(theta + PI, jitter())],
        1 => vec![
            (0.0, 0.0, s, jitter()),
            lobe(theta, jitter()),
            lobe(theta + 2.0 * PI / 3.0, jitter()),
        ],
        2 => vec![(0.0, 0.0, 1.6 * s, jitter())],
        3 => (0..3)
            .map(|i| lobe(theta + i as f64 * 2.0 * PI / 3.0, jitter()))
            .collect(),
        _ => unreachable!("synthetic class index out of range"),
    }
}

/// Renders one sample of `class` at orientation `theta` (radians).
pub fn render(cfg: &SyntheticConfig, class: usize, theta: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if class >= SYNTHETIC_CLASSES.len() {
        return Err(Error::InvalidParameter(format!("synthetic class {class} out of range")));
    }
    let blobs = layout(class, theta, cfg.lobe_radius, cfg.blob_sigma, rng);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let c = (cfg.size as f64 - 1.0) / 2.0;
    let mut pixels = Vec::with_capacity(cfg.size * cfg.size);
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            let (px, py) = (x as f64 - c, y as f64 - c);
            let v: f64 = blobs
                .iter()
                .map(|&(bx, by, s, a)| a * (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            pixels.push(v + noise.sample(rng));
        }
    }
    Image::new(cfg.size, cfg.size, pixels)
}

/// `per_class` samples of every class, classes interleaved, orientations uniform in `[0, 2pi)`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<SyntheticSample>> {
    if cfg.size < 3 {
        return Err(Error::InvalidParameter("synthetic image size must be >= 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.per_class * SYNTHETIC_CLASSES.len());
    for _ in 0..cfg.per_class {
        for label in 0..SYNTHETIC_CLASSES.len() {
            let orientation = rng.gen_range(0.0..TAU);
            let image = render(cfg, label, orientation, &mut rng)?;
            out.push(SyntheticSample {
                image,
                label,
                orientation,
            });
        }
    }
    Ok(out)
}

/// Split assignment by position within a class: 60% train, 20% valid, 20% test.
pub fn split_for(index_in_class: usize, per_class: usize) -> Split {
    let train = (per_class * 3).div_ceil(5);
    let valid = per_class.div_ceil(5);
    if index_in_class < train {
        Split::Train
    } else if index_in_class < train + valid {
        Split::Valid
    } else {
        Split::Test
    }
}

/// Writes the samples as rawf32 files plus a `manifest.csv` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let samples = generate(cfg)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{:05}_{}.rf32", i, SYNTHETIC_CLASSES[s.label]);
        save_rawf32(&s.image, images.join(&name))?;
        entries.push(ManifestEntry {
            path: Path::new("images").join(name),
            label: SYNTHETIC_CLASSES[s.label].to_string(),
            split: split_for(i / SYNTHETIC_CLASSES.len(), cfg.per_class),
        });
    }
    let manifest = DatasetManifest {
        classes: SYNTHETIC_CLASSES.map(String::from).to_vec(),
        entries,
    };
    manifest.write(dir.join("manifest.csv"))?;
    Ok(manifest)
}
