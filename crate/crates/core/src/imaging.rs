//! Image ingestion, dataset manifests and sigma-clipping background removal.
//!
//! Two on-disk image formats are understood: binary PGM (`P5`, 8 or 16 bit)
//! and `rawf32`, a minimal float container:
//!
//! ```text
//! "RF32" | u32 LE width | u32 LE height | width*height f32 LE, row-major
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RAWF32_MAGIC: &[u8; 4] = b"RF32";

/// Grayscale image with row-major real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite intensity at pixel {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Geometric centre in pixel coordinates, `((w-1)/2, (h-1)/2)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Rotates the image by 90 degrees counter-clockwise as displayed
    /// (x to the right, y downwards).
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.width, self.height);
        let mut pixels = vec![0.0; w * h];
        // new image is h wide and w tall
        for y in 0..h {
            for x in 0..w {
                let nx = y;
                let ny = w - 1 - x;
                pixels[ny * h + nx] = self.pixels[y * w + x];
            }
        }
        Image {
            width: h,
            height: w,
            pixels,
        }
    }

    pub fn scaled(&self, factor: f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    #[default]
    Rawf32,
}

impl ImageFormat {
    /// Guesses the format from a file extension (`.pgm` or `.rf32`/`.rawf32`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "rf32" | "rawf32" | "raw" => Some(ImageFormat::Rawf32),
            _ => None,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "rawf32" | "rf32" => Ok(ImageFormat::Rawf32),
            other => Err(Error::InvalidParameter(format!(
                "unknown image format `{other}`"
            ))),
        }
    }
}

pub fn load_image(path: impl AsRef<Path>, format: ImageFormat) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::Rawf32 => decode_rawf32(&bytes),
    }
}

/// Decodes a binary (P5) PGM. Samples are scaled by `1/maxval` into `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = 0usize;
    let magic = next_pgm_token(bytes, &mut cursor)
        .ok_or_else(|| Error::MalformedHeader("missing PGM magic".into()))?;
    if magic != "P5" {
        return Err(Error::MalformedHeader(format!(
            "expected P5 magic, found `{magic}`"
        )));
    }
    let mut fields = [0usize; 3];
    for (slot, name) in fields.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_pgm_token(bytes, &mut cursor)
            .ok_or_else(|| Error::MalformedHeader(format!("missing {name}")))?;
        *slot = tok
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("invalid {name} `{tok}`")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimensions { width, height });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("invalid maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
        return Err(Error::MalformedHeader(
            "missing whitespace after maxval".into(),
        ));
    }
    cursor += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * sample_bytes;
    let payload = &bytes[cursor..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let scale = 1.0 / maxval as f64;
    let pixels = if sample_bytes == 1 {
        payload[..expected]
            .iter()
            .map(|&b| b as f64 * scale)
            .collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Image::new(width, height, pixels)
}

fn next_pgm_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a str> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return None;
    }
    std::str::from_utf8(&bytes[start..*cursor]).ok()
}

pub fn decode_rawf32(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 12 {
        return Err(Error::MalformedHeader(format!(
            "rawf32 header needs 12 bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != RAWF32_MAGIC {
        return Err(Error::MalformedHeader("bad rawf32 magic".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimensions { width, height });
    }
    let expected = width * height * 4;
    let payload = &bytes[12..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(width, height, pixels)
}

pub fn encode_rawf32(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.pixels.len() * 4);
    out.extend_from_slice(RAWF32_MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    for &v in &img.pixels {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn save_rawf32(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_rawf32(img))
        .map_err(|e| Error::io(path, e))
}

/// Encodes an 8-bit P5 PGM, clamping intensities to `[0, 1]`.
pub fn encode_pgm8(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Iterative global sigma clipping.
///
/// Each inner pass computes the mean and population standard deviation over
/// the pixels still considered background and moves every background pixel
/// strictly above `mean + n_sigma * std` to the source set. Passes stop when
/// no pixel moves or after `max_iters`. Background pixels are then set to
/// zero. The whole procedure is repeated on its own output until the output
/// stops changing, so the result is a fixed point: clipping it again returns
/// it unchanged.
pub fn sigma_clip(img: &Image, n_sigma: f64, max_iters: usize) -> Result<Image> {
    if !(n_sigma > 0.0) || !n_sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "n_sigma must be positive, got {n_sigma}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
    }
    let mut current = img.pixels.clone();
    loop {
        let source = clip_pass(&current, n_sigma, max_iters);
        let next: Vec<f64> = current
            .iter()
            .zip(&source)
            .map(|(&v, &s)| if s { v } else { 0.0 })
            .collect();
        if next == current {
            break;
        }
        current = next;
    }
    Ok(Image {
        width: img.width,
        height: img.height,
        pixels: current,
    })
}

/// One masked clipping run; returns the source mask.
fn clip_pass(values: &[f64], n_sigma: f64, max_iters: usize) -> Vec<bool> {
    let mut source = vec![false; values.len()];
    for _ in 0..max_iters {
        let (mut n, mut sum) = (0usize, 0.0);
        for (v, _) in values.iter().zip(&source).filter(|(_, s)| !**s) {
            n += 1;
            sum += v;
        }
        if n == 0 {
            break;
        }
        let mean = sum / n as f64;
        let var = values
            .iter()
            .zip(&source)
            .filter(|(_, s)| !**s)
            .map(|(v, _)| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let threshold = mean + n_sigma * var.sqrt();
        let mut changed = false;
        for (v, s) in values.iter().zip(source.iter_mut()) {
            if !*s && *v > threshold {
                *s = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    source
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Manifest(format!("unknown split tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
}

/// CSV manifest (`path,label,split`) with a declared label set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize, Serialize)]
struct ManifestRow {
    path: String,
    label: String,
    split: String,
}

impl DatasetManifest {
    /// Reads a manifest. Relative image paths are resolved against the
    /// manifest's directory. Every label must be in `classes`.
    pub fn load(path: impl AsRef<Path>, classes: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base, classes)
    }

    pub fn parse(text: &str, base: &Path, classes: &[String]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Manifest(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(Error::Manifest(format!(
                "expected header `path,label,split`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let row = row.map_err(|e| Error::Manifest(format!("row {}: {e}", line + 1)))?;
            if !classes.iter().any(|c| *c == row.label) {
                return Err(Error::Manifest(format!(
                    "row {}: label `{}` not in declared set {:?}",
                    line + 1,
                    row.label,
                    classes
                )));
            }
            let p = PathBuf::from(&row.path);
            entries.push(ManifestEntry {
                path: if p.is_absolute() { p } else { base.join(p) },
                label: row.label,
                split: row.split.parse()?,
            });
        }
        Ok(Self {
            classes: classes.to_vec(),
            entries,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        for e in &self.entries {
            w.serialize(ManifestRow {
                path: e.path.to_string_lossy().into_owned(),
                label: e.label.clone(),
                split: e.split.as_str().to_string(),
            })
            .map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.split == split)
    }
}
