//! Trainable COSFIRE filters.
//!
//! A filter is configured on a prototype image by scanning concentric circles
//! around a reference point for local maxima of thresholded DoG responses.
//! Each maximum becomes a keypoint tuple `(rho, phi, sigma, polarity)`. On
//! application every tuple's DoG map is blurred, shifted back towards the
//! filter centre and the aligned maps are combined by a per-pixel geometric
//! mean. Rotation tolerance comes from applying rotated copies of the filter
//! and keeping the per-pixel maximum.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dog::{dog_difference, gaussian_blur, rectify, threshold_map, Polarity, ResponseMap};
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Number of angular samples per configuration circle.
pub const ANGULAR_SAMPLES: usize = 360;

/// Consecutive configuration failures tolerated per class while building a bank.
pub const MAX_CONSECUTIVE_FAILURES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosfireHyperparams {
    /// Outer-Gaussian standard deviations of the DoG bank, in pixels.
    pub sigma_bank: Vec<f64>,
    /// Radii of the configuration circles, in pixels. Zero is allowed.
    pub radii: Vec<f64>,
    /// DoG threshold as a fraction of each map's maximum.
    pub t1: f64,
    /// Base blur std (sigma').
    pub sigma0_blur: f64,
    /// Growth of the blur std with radius (alpha).
    pub alpha_blur: f64,
}

impl Default for CosfireHyperparams {
    fn default() -> Self {
        Self {
            sigma_bank: vec![2.0],
            radii: vec![0.0, 8.0, 16.0, 24.0],
            t1: 0.1,
            sigma0_blur: 1.0,
            alpha_blur: 0.1,
        }
    }
}

impl CosfireHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.sigma_bank.is_empty() {
            return bad("sigma bank is empty".into());
        }
        if self.sigma_bank.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return bad(format!("sigma bank must be positive: {:?}", self.sigma_bank));
        }
        if self.radii.is_empty() {
            return bad("radii set is empty".into());
        }
        if self.radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return bad(format!("radii must be nonnegative: {:?}", self.radii));
        }
        if !(0.0..=1.0).contains(&self.t1) {
            return bad(format!("t1 must lie in [0, 1], got {}", self.t1));
        }
        if !(self.sigma0_blur > 0.0) || !self.sigma0_blur.is_finite() {
            return bad(format!("sigma0_blur must be positive, got {}", self.sigma0_blur));
        }
        if !(self.alpha_blur >= 0.0) || !self.alpha_blur.is_finite() {
            return bad(format!("alpha_blur must be nonnegative, got {}", self.alpha_blur));
        }
        Ok(())
    }

    /// Std of the blur applied to a DoG map used at radius `rho`.
    pub fn blur_sigma(&self, rho: f64) -> f64 {
        self.sigma0_blur + self.alpha_blur * rho
    }
}

/// One keypoint of a COSFIRE filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointTuple {
    pub rho: f64,
    /// Polar angle in radians, in `[0, 2pi)`.
    pub phi: f64,
    pub sigma: f64,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosfireFilter {
    tuples: Vec<KeypointTuple>,
    hyperparams: CosfireHyperparams,
}

impl CosfireFilter {
    pub fn new(tuples: Vec<KeypointTuple>, hyperparams: CosfireHyperparams) -> Result<Self> {
        hyperparams.validate()?;
        if tuples.is_empty() {
            return Err(Error::InvalidParameter("a filter needs at least one tuple".into()));
        }
        for t in &tuples {
            if !hyperparams.radii.contains(&t.rho) {
                return Err(Error::InvalidParameter(format!(
                    "tuple radius {} is not in the radii set",
                    t.rho
                )));
            }
            if !hyperparams.sigma_bank.contains(&t.sigma) {
                return Err(Error::InvalidParameter(format!(
                    "tuple sigma {} is not in the sigma bank",
                    t.sigma
                )));
            }
            if !(0.0..TAU).contains(&t.phi) {
                return Err(Error::InvalidParameter(format!(
                    "tuple angle {} outside [0, 2pi)",
                    t.phi
                )));
            }
        }
        Ok(Self {
            tuples,
            hyperparams,
        })
    }

    pub fn tuples(&self) -> &[KeypointTuple] {
        &self.tuples
    }

    pub fn hyperparams(&self) -> &CosfireHyperparams {
        &self.hyperparams
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    // rem_euclid may round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Adds `psi` to every tuple angle, modulo 2pi.
pub fn rotate_filter(filter: &CosfireFilter, psi: f64) -> CosfireFilter {
    CosfireFilter {
        tuples: filter
            .tuples
            .iter()
            .map(|t| KeypointTuple {
                phi: wrap_angle(t.phi + psi),
                ..*t
            })
            .collect(),
        hyperparams: filter.hyperparams.clone(),
    }
}

/// `count` orientations evenly spaced over a full turn, starting at zero.
pub fn default_orientations(count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 * TAU / count as f64).collect()
}

fn thresholded_dog(img: &Image, sigma: f64, polarity: Polarity, t1: f64) -> Result<ResponseMap> {
    let diff = dog_difference(img, sigma)?;
    let map = ResponseMap::from_raw(img.width(), img.height(), rectify(&diff, polarity));
    threshold_map(&map, t1)
}

/// Configures a filter on `prototype` around `center` (pixel coordinates).
pub fn configure_filter(
    prototype: &Image,
    center: (f64, f64),
    hp: &CosfireHyperparams,
) -> Result<CosfireFilter> {
    hp.validate()?;
    let (cx, cy) = center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= (prototype.width() - 1) as f64 && cy <= (prototype.height() - 1) as f64) {
        return Err(Error::InvalidParameter(format!(
            "center ({cx}, {cy}) lies outside the {}x{} prototype",
            prototype.width(),
            prototype.height()
        )));
    }

    let mut maps = Vec::with_capacity(hp.sigma_bank.len() * 2);
    for &sigma in &hp.sigma_bank {
        for polarity in Polarity::BOTH {
            maps.push((sigma, polarity, thresholded_dog(prototype, sigma, polarity, hp.t1)?));
        }
    }
    // strongest (sigma, polarity) at a point; ties go to the earlier map
    let strongest = |x: f64, y: f64| -> (f64, usize) {
        let mut best = (0.0, 0);
        for (i, (_, _, m)) in maps.iter().enumerate() {
            let v = m.sample_bilinear(x, y);
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    };

    let mut tuples = Vec::new();
    for &rho in &hp.radii {
        if rho == 0.0 {
            let (v, i) = strongest(cx, cy);
            if v > 0.0 {
                tuples.push(KeypointTuple {
                    rho,
                    phi: 0.0,
                    sigma: maps[i].0,
                    polarity: maps[i].1,
                });
            }
            continue;
        }
        let profile: Vec<(f64, usize)> = (0..ANGULAR_SAMPLES)
            .map(|a| {
                let phi = a as f64 * TAU / ANGULAR_SAMPLES as f64;
                strongest(cx + rho * phi.cos(), cy + rho * phi.sin())
            })
            .collect();
        let values: Vec<f64> = profile.iter().map(|p| p.0).collect();
        for a in circular_local_maxima(&values, hp.t1) {
            let (_, i) = profile[a];
            tuples.push(KeypointTuple {
                rho,
                phi: a as f64 * TAU / ANGULAR_SAMPLES as f64,
                sigma: maps[i].0,
                polarity: maps[i].1,
            });
        }
    }
    if tuples.is_empty() {
        return Err(Error::ConfigurationFailure);
    }
    CosfireFilter::new(tuples, hp.clone())
}

/// Indices of local maxima of a circular profile.
///
/// A maximum is a sample strictly greater than both circular neighbours; a
/// run of equal samples bounded by strictly lower samples on both sides
/// counts as one maximum placed at the middle of the run. Maxima that are
/// zero or below `rel_floor` times the profile peak are dropped.
pub fn circular_local_maxima(profile: &[f64], rel_floor: f64) -> Vec<usize> {
    let n = profile.len();
    let peak = profile.iter().copied().fold(0.0, f64::max);
    if n < 3 || peak <= 0.0 {
        return Vec::new();
    }
    let floor = rel_floor * peak;
    // start scanning right after a strict descent so no run wraps the origin
    let Some(start) = (0..n).find(|&i| profile[i] < profile[(i + n - 1) % n]) else {
        return Vec::new(); // flat profile
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let idx = (start + i) % n;
        let v = profile[idx];
        let mut run = 1;
        while run < n && profile[(idx + run) % n] == v {
            run += 1;
        }
        let prev = profile[(idx + n - 1) % n];
        let next = profile[(idx + run) % n];
        if v > prev && v > next && v > 0.0 && v >= floor {
            out.push((idx + (run - 1) / 2) % n);
        }
        i += run;
    }
    out.sort_unstable();
    out
}

/// Blurred DoG maps for one image, memoized by `(sigma, polarity)` and by blur std.
pub struct ResponseCache<'a> {
    image: &'a Image,
    dog: HashMap<(u64, Polarity, u64), ResponseMap>,
    blurred: HashMap<(u64, Polarity, u64, u64), Vec<f64>>,
}

impl<'a> ResponseCache<'a> {
    pub fn new(image: &'a Image) -> Self {
        Self {
            image,
            dog: HashMap::new(),
            blurred: HashMap::new(),
        }
    }

    pub fn image(&self) -> &Image {
        self.image
    }

    fn dog(&mut self, sigma: f64, polarity: Polarity, t1: f64) -> Result<&ResponseMap> {
        let key = (sigma.to_bits(), polarity, t1.to_bits());
        if !self.dog.contains_key(&key) {
            let map = thresholded_dog(self.image, sigma, polarity, t1)?;
            self.dog.insert(key, map);
        }
        Ok(&self.dog[&key])
    }

    /// Thresholded DoG map for `tuple`, blurred with std `sigma0 + alpha * rho`.
    pub fn blurred(&mut self, tuple: &KeypointTuple, hp: &CosfireHyperparams) -> Result<&[f64]> {
        let blur = hp.blur_sigma(tuple.rho);
        let key = (
            tuple.sigma.to_bits(),
            tuple.polarity,
            hp.t1.to_bits(),
            blur.to_bits(),
        );
        if !self.blurred.contains_key(&key) {
            let (w, h) = (self.image.width(), self.image.height());
            let dog = self.dog(tuple.sigma, tuple.polarity, hp.t1)?;
            let b = gaussian_blur(dog.values(), w, h, blur)?;
            // blurring a nonnegative map with a positive kernel stays nonnegative
            let b = b.into_iter().map(|v| v.max(0.0)).collect();
            self.blurred.insert(key, b);
        }
        Ok(&self.blurred[&key])
    }

    /// Product of the blurred and shifted tuple maps (before the n-th root).
    fn product_map(&mut self, filter: &CosfireFilter) -> Result<Vec<f64>> {
        let (w, h) = (self.image.width(), self.image.height());
        let mut acc = vec![1.0; w * h];
        for t in &filter.tuples {
            let (dx, dy) = tuple_shift(t);
            let src = self.blurred(t, &filter.hyperparams)?;
            multiply_shifted(&mut acc, src, w, h, dx, dy);
        }
        Ok(acc)
    }
}

/// Pixel offset of a tuple's keypoint from the filter centre, rounded.
fn tuple_shift(t: &KeypointTuple) -> (i64, i64) {
    (
        (t.rho * t.phi.cos()).round() as i64,
        (t.rho * t.phi.sin()).round() as i64,
    )
}

/// `acc[x, y] *= src[x + dx, y + dy]`, reading zero outside the grid.
fn multiply_shifted(acc: &mut [f64], src: &[f64], w: usize, h: usize, dx: i64, dy: i64) {
    for y in 0..h {
        let sy = y as i64 + dy;
        let row = &mut acc[y * w..(y + 1) * w];
        if sy < 0 || sy >= h as i64 {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let srow = &src[sy as usize * w..(sy as usize + 1) * w];
        for (x, v) in row.iter_mut().enumerate() {
            let sx = x as i64 + dx;
            if sx < 0 || sx >= w as i64 {
                *v = 0.0;
            } else {
                *v *= srow[sx as usize];
            }
        }
    }
}

fn nth_root(v: f64, n: usize) -> f64 {
    if v <= 0.0 {
        0.0
    } else if n == 1 {
        v
    } else {
        v.powf(1.0 / n as f64)
    }
}

/// Geometric mean of the blurred, shifted tuple maps at every pixel.
pub fn filter_response_map(img: &Image, filter: &CosfireFilter) -> Result<ResponseMap> {
    filter_response_with(&mut ResponseCache::new(img), filter)
}

pub fn filter_response_with(cache: &mut ResponseCache<'_>, filter: &CosfireFilter) -> Result<ResponseMap> {
    let n = filter.len();
    let (w, h) = (cache.image.width(), cache.image.height());
    let values = cache
        .product_map(filter)?
        .into_iter()
        .map(|p| nth_root(p, n))
        .collect();
    Ok(ResponseMap::from_raw(w, h, values))
}

/// Per-pixel maximum of the responses of the filter rotated by each `psi`.
pub fn rotation_tolerant_response(
    img: &Image,
    filter: &CosfireFilter,
    orientations: &[f64],
) -> Result<ResponseMap> {
    rotation_tolerant_with(&mut ResponseCache::new(img), filter, orientations)
}

pub fn rotation_tolerant_with(
    cache: &mut ResponseCache<'_>,
    filter: &CosfireFilter,
    orientations: &[f64],
) -> Result<ResponseMap> {
    if orientations.is_empty() {
        return Err(Error::Empty("orientation list".into()));
    }
    let mut out: Option<Vec<f64>> = None;
    for &psi in orientations {
        let map = filter_response_with(cache, &rotate_filter(filter, psi))?.into_values();
        out = Some(match out {
            None => map,
            Some(mut acc) => {
                acc.iter_mut().zip(&map).for_each(|(a, b)| *a = a.max(*b));
                acc
            }
        });
    }
    let (w, h) = (cache.image.width(), cache.image.height());
    Ok(ResponseMap::from_raw(w, h, out.expect("nonempty orientations")))
}

/// Global maximum of the rotation-tolerant response, without materializing the map.
pub fn max_rotation_tolerant_response(
    cache: &mut ResponseCache<'_>,
    filter: &CosfireFilter,
    orientations: &[f64],
) -> Result<f64> {
    if orientations.is_empty() {
        return Err(Error::Empty("orientation list".into()));
    }
    let mut best = 0.0f64;
    for &psi in orientations {
        let product = cache.product_map(&rotate_filter(filter, psi))?;
        best = product.into_iter().fold(best, f64::max);
    }
    // the n-th root is monotone, so it commutes with the maximum
    Ok(nth_root(best, filter.len()))
}

/// Scales `v` to unit Euclidean length.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// L2-normalized vector of per-filter maximum responses, in bank order.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(Vec<f64>);

impl Descriptor {
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroDescriptor);
        }
        Ok(Self(l2_normalize(raw)?))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Where a bank filter came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOrigin {
    pub class: String,
    pub prototype: String,
}

/// Ordered set of filters sharing one hyperparameter set, applied at a fixed list of orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    hyperparams: CosfireHyperparams,
    orientations: Vec<f64>,
    filters: Vec<CosfireFilter>,
    origins: Vec<Option<FilterOrigin>>,
}

impl FilterBank {
    pub fn new(
        hyperparams: CosfireHyperparams,
        orientations: Vec<f64>,
        filters: Vec<CosfireFilter>,
    ) -> Result<Self> {
        let origins = vec![None; filters.len()];
        Self::with_origins(hyperparams, orientations, filters, origins)
    }

    pub fn with_origins(
        hyperparams: CosfireHyperparams,
        orientations: Vec<f64>,
        filters: Vec<CosfireFilter>,
        origins: Vec<Option<FilterOrigin>>,
    ) -> Result<Self> {
        hyperparams.validate()?;
        if filters.is_empty() {
            return Err(Error::Empty("filter bank".into()));
        }
        if orientations.is_empty() {
            return Err(Error::Empty("orientation list".into()));
        }
        if orientations.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParameter("non-finite orientation".into()));
        }
        if origins.len() != filters.len() {
            return Err(Error::DimensionMismatch {
                expected: filters.len(),
                found: origins.len(),
            });
        }
        if let Some(f) = filters.iter().find(|f| f.hyperparams != hyperparams) {
            return Err(Error::InvalidParameter(format!(
                "filter hyperparameters {:?} differ from the bank's",
                f.hyperparams
            )));
        }
        Ok(Self {
            hyperparams,
            orientations,
            filters,
            origins,
        })
    }

    pub fn hyperparams(&self) -> &CosfireHyperparams {
        &self.hyperparams
    }

    pub fn orientations(&self) -> &[f64] {
        &self.orientations
    }

    pub fn filters(&self) -> &[CosfireFilter] {
        &self.filters
    }

    pub fn origins(&self) -> &[Option<FilterOrigin>] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Raw (unnormalized) per-filter maxima.
    pub fn raw_responses(&self, img: &Image) -> Result<Vec<f64>> {
        let mut cache = ResponseCache::new(img);
        self.filters
            .iter()
            .map(|f| max_rotation_tolerant_response(&mut cache, f, &self.orientations))
            .collect()
    }

    pub fn compute_descriptor(&self, img: &Image) -> Result<Descriptor> {
        Descriptor::from_raw(&self.raw_responses(img)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BankFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BankFile = serde_json::from_str(text)?;
        if file.version != BANK_FORMAT_VERSION {
            return Err(Error::Version(format!(
                "filter bank version {} (expected {BANK_FORMAT_VERSION})",
                file.version
            )));
        }
        let hp = file.hyperparams;
        let mut filters = Vec::with_capacity(file.filters.len());
        let mut origins = Vec::with_capacity(file.filters.len());
        for f in file.filters {
            let tuples = f
                .tuples
                .into_iter()
                .map(|(rho, phi, sigma, polarity)| KeypointTuple {
                    rho,
                    phi,
                    sigma,
                    polarity,
                })
                .collect();
            filters.push(CosfireFilter::new(tuples, hp.clone())?);
            origins.push(match (f.class, f.prototype) {
                (Some(class), Some(prototype)) => Some(FilterOrigin { class, prototype }),
                _ => None,
            });
        }
        Self::with_origins(hp, file.orientations, filters, origins)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankFile {
    version: u32,
    hyperparams: CosfireHyperparams,
    orientations: Vec<f64>,
    filters: Vec<BankFilter>,
}

#[derive(Serialize, Deserialize)]
struct BankFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prototype: Option<String>,
    /// `[rho, phi, sigma, polarity]` per keypoint.
    tuples: Vec<(f64, f64, f64, Polarity)>,
}

impl From<&FilterBank> for BankFile {
    fn from(bank: &FilterBank) -> Self {
        BankFile {
            version: BANK_FORMAT_VERSION,
            hyperparams: bank.hyperparams.clone(),
            orientations: bank.orientations.clone(),
            filters: bank
                .filters
                .iter()
                .zip(&bank.origins)
                .map(|(f, o)| BankFilter {
                    class: o.as_ref().map(|o| o.class.clone()),
                    prototype: o.as_ref().map(|o| o.prototype.clone()),
                    tuples: f
                        .tuples
                        .iter()
                        .map(|t| (t.rho, t.phi, t.sigma, t.polarity))
                        .collect(),
                })
                .collect(),
        }
    }
}

/// A candidate prototype for bank construction.
#[derive(Debug, Clone)]
pub struct PrototypeCandidate {
    pub id: String,
    pub class: usize,
}

/// Builds a bank with `filters_per_class` filters per class, each configured
/// at the image centre of a prototype drawn at random (seeded) from that
/// class's candidates. A prototype that fails to configure is skipped and the
/// next one drawn; [`MAX_CONSECUTIVE_FAILURES`] failures in a row abort.
pub fn build_filter_bank<F>(
    classes: &[String],
    candidates: &[PrototypeCandidate],
    filters_per_class: usize,
    hp: &CosfireHyperparams,
    orientations: Vec<f64>,
    seed: u64,
    mut load: F,
) -> Result<FilterBank>
where
    F: FnMut(&PrototypeCandidate) -> Result<Image>,
{
    hp.validate()?;
    if filters_per_class == 0 {
        return Err(Error::InvalidParameter("filters_per_class must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filters = Vec::new();
    let mut origins = Vec::new();
    for (class_idx, class) in classes.iter().enumerate() {
        let mut pool: Vec<&PrototypeCandidate> =
            candidates.iter().filter(|c| c.class == class_idx).collect();
        if pool.is_empty() {
            return Err(Error::Empty(format!("no training prototypes for class `{class}`")));
        }
        pool.shuffle(&mut rng);
        let mut made = 0;
        let mut failures = 0;
        for cand in pool {
            if made == filters_per_class {
                break;
            }
            let img = load(cand)?;
            match configure_filter(&img, img.center(), hp) {
                Ok(f) => {
                    filters.push(f);
                    origins.push(Some(FilterOrigin {
                        class: class.clone(),
                        prototype: cand.id.clone(),
                    }));
                    made += 1;
                    failures = 0;
                }
                Err(Error::ConfigurationFailure) => {
                    failures += 1;
                    log::warn!("prototype {} ({class}) yielded no keypoints, resampling", cand.id);
                    if failures >= MAX_CONSECUTIVE_FAILURES {
                        return Err(Error::InvalidParameter(format!(
                            "{failures} consecutive configuration failures for class `{class}`"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        if made < filters_per_class {
            return Err(Error::Empty(format!(
                "class `{class}` has only {made} usable prototypes, {filters_per_class} requested"
            )));
        }
    }
    FilterBank::with_origins(hp.clone(), orientations, filters, origins)
}
