//! Center-on / center-off Difference-of-Gaussians response maps.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Responds to a bright centre on a darker surround.
    CenterOn,
    /// Responds to a dark centre on a brighter surround.
    CenterOff,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::CenterOn, Polarity::CenterOff];
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::CenterOn => "center_on",
            Polarity::CenterOff => "center_off",
        })
    }
}

/// Outer Gaussian std and polarity; the inner Gaussian std is always half the outer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DogParams {
    sigma_outer: f64,
    polarity: Polarity,
}

impl DogParams {
    pub fn new(sigma_outer: f64, polarity: Polarity) -> Result<Self> {
        if !(sigma_outer > 0.0) || !sigma_outer.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "DoG sigma must be positive, got {sigma_outer}"
            )));
        }
        Ok(Self {
            sigma_outer,
            polarity,
        })
    }

    pub fn sigma_outer(&self) -> f64 {
        self.sigma_outer
    }

    pub fn sigma_inner(&self) -> f64 {
        self.sigma_outer / 2.0
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

/// Nonnegative per-pixel filter response with the dimensions of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ResponseMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter(
                "response values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Position `(x, y)` of the first global maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Bilinear sample at real coordinates; points outside the grid read as zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.values[yi as usize * self.width + xi as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub(crate) fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Sampled Gaussian truncated at `ceil(3 sigma)` on each side, normalized to unit sum.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / denom).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    Ok(kernel)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let j = i.rem_euclid(period);
    (if j >= n { period - 1 - j } else { j }) as usize
}

/// Convolves a row-major grid with `kernel` along x then along y, reflecting at borders.
pub fn convolve_separable(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    debug_assert_eq!(data.len(), width * height);
    let radius = (kernel.len() / 2) as i64;
    let mut horiz = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * row[reflect_index(x as i64 + k as i64 - radius, width)];
            }
            horiz[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (k, w) in kernel.iter().enumerate() {
            let sy = reflect_index(y as i64 + k as i64 - radius, height);
            let src = &horiz[sy * width..(sy + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Gaussian blur with std `sigma` (reflect borders).
pub fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Result<Vec<f64>> {
    Ok(convolve_separable(data, width, height, &gaussian_kernel_1d(sigma)?))
}

/// Signed DoG difference `G(sigma/2) * img - G(sigma) * img`.
pub fn dog_difference(img: &Image, sigma_outer: f64) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    let inner = gaussian_blur(img.pixels(), w, h, sigma_outer / 2.0)?;
    let outer = gaussian_blur(img.pixels(), w, h, sigma_outer)?;
    Ok(inner.iter().zip(&outer).map(|(a, b)| a - b).collect())
}

/// Half-wave rectifies a signed DoG difference for the given polarity.
pub fn rectify(diff: &[f64], polarity: Polarity) -> Vec<f64> {
    match polarity {
        Polarity::CenterOn => diff.iter().map(|&r| r.max(0.0)).collect(),
        Polarity::CenterOff => diff.iter().map(|&r| (-r).max(0.0)).collect(),
    }
}

pub fn dog_response_map(img: &Image, params: DogParams) -> ResponseMap {
    let diff = dog_difference(img, params.sigma_outer).expect("sigma validated by DogParams");
    ResponseMap::from_raw(img.width(), img.height(), rectify(&diff, params.polarity))
}

/// Zeroes every value below `t1_fraction` times the map's global maximum.
pub fn threshold_map(map: &ResponseMap, t1_fraction: f64) -> Result<ResponseMap> {
    if !(0.0..=1.0).contains(&t1_fraction) {
        return Err(Error::InvalidParameter(format!(
            "t1 fraction must lie in [0, 1], got {t1_fraction}"
        )));
    }
    let cut = t1_fraction * map.max();
    Ok(ResponseMap::from_raw(
        map.width,
        map.height,
        map.values
            .iter()
            .map(|&v| if v < cut { 0.0 } else { v })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for sigma in [0.3, 0.5, 1.0, 1.7, 2.0, 3.0, 7.5] {
            let k = gaussian_kernel_1d(sigma).unwrap();
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() / 2 {
                assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }
        let k = gaussian_kernel_1d(0.3).unwrap();
        assert_eq!(k.len(), 3);
        assert!(k[1] > k[0]);
    }

    #[test]
    fn kernel_matches_direct_formula() {
        let sigma: f64 = 2.0;
        let raw: Vec<f64> = (-6..=6)
            .map(|x: i32| (-(x as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let k = gaussian_kernel_1d(sigma).unwrap();
        for (a, b) in k.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_nonpositive_sigma() {
        assert!(gaussian_kernel_1d(0.0).is_err());
        assert!(gaussian_kernel_1d(-1.0).is_err());
        assert!(DogParams::new(0.0, Polarity::CenterOn).is_err());
    }

    #[test]
    fn reflect_index_wraps_symmetrically() {
        let got: Vec<usize> = (-5..9).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
        assert_eq!(reflect_index(-1, 1), 0);
    }

    #[test]
    fn constant_image_has_zero_response() {
        let img = Image::new(9, 7, vec![0.42; 63]).unwrap();
        for pol in Polarity::BOTH {
            let m = dog_response_map(&img, DogParams::new(2.0, pol).unwrap());
            assert!(m.values().iter().all(|v| v.abs() < 1e-14));
        }
    }

    /// Full 2D kernel as the outer product of the 1D kernel with itself.
    fn kernel_2d(sigma: f64) -> (Vec<f64>, usize) {
        let k = gaussian_kernel_1d(sigma).unwrap();
        let n = k.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = k[i] * k[j];
            }
        }
        (out, n)
    }

    #[test]
    fn impulse_response_at_center_matches_2d_kernels() {
        let size = 41;
        let mut px = vec![0.0; size * size];
        px[20 * size + 20] = 1.0;
        let img = Image::new(size, size, px).unwrap();
        let m = dog_response_map(&img, DogParams::new(3.0, Polarity::CenterOn).unwrap());
        let (inner, ni) = kernel_2d(1.5);
        let (outer, no) = kernel_2d(3.0);
        let expected = inner[(ni / 2) * ni + ni / 2] - outer[(no / 2) * no + no / 2];
        assert!(expected > 0.0);
        assert!((m.get(20, 20) - expected).abs() < 1e-14);
    }

    fn brute_force_2d(img: &Image, sigma: f64) -> Vec<f64> {
        let (k, n) = kernel_2d(sigma);
        let r = (n / 2) as i64;
        let (w, h) = (img.width(), img.height());
        let mut out = vec![0.0; w * h];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = reflect_index(x + dx, w);
                        let sy = reflect_index(y + dy, h);
                        acc += k[((dy + r) as usize) * n + (dx + r) as usize] * img.get(sx, sy);
                    }
                }
                out[y as usize * w + x as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn separable_equals_brute_force_on_random_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = Image::from_fn(32, 32, |_, _| rng.gen::<f64>()).unwrap();
        let sep = convolve_separable(img.pixels(), 32, 32, &gaussian_kernel_1d(2.0).unwrap());
        let brute = brute_force_2d(&img, 2.0);
        let diff = sep
            .iter()
            .zip(&brute)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "max diff {diff}");
    }

    #[test]
    fn center_off_is_negated_center_on() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Image::from_fn(20, 16, |_, _| rng.gen::<f64>()).unwrap();
        let diff = dog_difference(&img, 2.0).unwrap();
        let off = dog_response_map(&img, DogParams::new(2.0, Polarity::CenterOff).unwrap());
        let negated: Vec<f64> = diff.iter().map(|v| -v).collect();
        assert_eq!(off.values(), rectify(&negated, Polarity::CenterOn).as_slice());
    }

    #[test]
    fn bright_spot_excites_center_on_only_at_its_centre() {
        let img = Image::from_fn(31, 31, |x, y| {
            if (x as i64 - 15).abs() <= 1 && (y as i64 - 15).abs() <= 1 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let on = dog_response_map(&img, DogParams::new(2.0, Polarity::CenterOn).unwrap());
        let off = dog_response_map(&img, DogParams::new(2.0, Polarity::CenterOff).unwrap());
        assert_eq!(on.argmax(), (15, 15));
        assert_eq!(off.get(15, 15), 0.0);
        assert!(off.max() > 0.0);
    }

    #[test]
    fn threshold_examples() {
        let m = ResponseMap::new(3, 1, vec![0.1, 0.4, 1.0]).unwrap();
        assert_eq!(threshold_map(&m, 0.5).unwrap().values(), &[0.0, 0.0, 1.0]);
        assert_eq!(threshold_map(&m, 0.0).unwrap(), m);
        let tied = ResponseMap::new(4, 1, vec![0.3, 0.9, 0.9, 0.2]).unwrap();
        assert_eq!(
            threshold_map(&tied, 1.0).unwrap().values(),
            &[0.0, 0.9, 0.9, 0.0]
        );
        assert!(threshold_map(&m, 1.5).is_err());
    }

    #[test]
    fn bilinear_sampling_interpolates() {
        let m = ResponseMap::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.sample_bilinear(0.5, 0.5), 1.5);
        assert_eq!(m.sample_bilinear(1.0, 0.0), 1.0);
        assert_eq!(m.sample_bilinear(-3.0, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn interior_shift_equivariance(seed in any::<u64>(), dx in 0usize..4, dy in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let big = Image::from_fn(40, 40, |_, _| rng.gen::<f64>()).unwrap();
            let crop = |ox: usize, oy: usize| {
                Image::from_fn(30, 30, |x, y| big.get(x + ox, y + oy)).unwrap()
            };
            let params = DogParams::new(1.5, Polarity::CenterOn).unwrap();
            let a = dog_response_map(&crop(4, 4), params);
            let b = dog_response_map(&crop(4 - dx + 4, 4 - dy + 4), params);
            // b sees content shifted by (4 - dx, 4 - dy) relative to a
            let (sx, sy) = (4 - dx as i64, 4 - dy as i64);
            let margin = 9;
            for y in margin..30 - margin {
                for x in margin..30 - margin {
                    let bx = x as i64 - sx;
                    let by = y as i64 - sy;
                    let va = a.get(x, y);
                    let vb = b.get(bx as usize, by as usize);
                    prop_assert!((va - vb).abs() < 1e-12);
                }
            }
        }
    }
}
