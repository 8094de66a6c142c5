//! Visual complexity metrics: histogram entropy, OCR text density and object
//! density, plus their aggregate image score.

use std::fs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ImageRef, Sample};
use crate::oracle::CountOracle;
use crate::scoring::ensure_unit;

/// Maximum entropy of an 8-bit histogram, used to normalize `E`.
pub const ENTROPY_NORMALIZER: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub avg_entropy: f64,
    pub avg_text_density: f64,
    pub avg_object_density: f64,
    pub n: usize,
}

/// Row-major grayscale intensities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LumaGrid {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl LumaGrid {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "pixel buffer of {} bytes does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(LumaGrid { width, height, pixels })
    }

    /// Converts interleaved RGB bytes with rounded BT.601 luma.
    pub fn from_rgb(width: u32, height: u32, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "RGB buffer of {} bytes does not match {width}x{height}",
                rgb.len()
            )));
        }
        let pixels = rgb.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
        Ok(LumaGrid { width, height, pixels })
    }
}

/// `round(0.299 R + 0.587 G + 0.114 B)` in integer arithmetic.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Shannon entropy in bits of the intensity histogram with `levels` bins.
pub fn image_entropy(grid: &LumaGrid, levels: usize) -> Result<f64> {
    if grid.pixels.is_empty() {
        return Err(Error::InvalidInput("empty pixel grid".into()));
    }
    let mut histogram = vec![0u64; levels];
    for &p in &grid.pixels {
        let bin = histogram
            .get_mut(p as usize)
            .ok_or_else(|| Error::InvalidInput(format!("intensity {p} outside {levels} levels")))?;
        *bin += 1;
    }
    let total = grid.pixels.len() as f64;
    let mut entropy = 0.0;
    for &count in &histogram {
        if count > 0 {
            let q = count as f64 / total;
            entropy -= q * q.log2();
        }
    }
    // -0.0 for a constant image
    Ok(entropy.max(0.0))
}

fn image_ref(sample: &Sample) -> Result<&ImageRef> {
    sample.image.as_ref().ok_or_else(|| Error::MissingAnnotation {
        id: sample.id.clone(),
        what: "image",
    })
}

/// Decodes a sample's image to grayscale.
pub fn load_luma(sample: &Sample) -> Result<LumaGrid> {
    let decode_err = |message: String| Error::Image {
        id: sample.id.clone(),
        message,
    };
    match image_ref(sample)? {
        ImageRef::File(path) => {
            let img = image::open(path).map_err(|e| decode_err(format!("{}: {e}", path.display())))?;
            let rgb = img.to_rgb8();
            LumaGrid::from_rgb(rgb.width(), rgb.height(), rgb.as_raw()).map_err(|e| decode_err(e.to_string()))
        }
        ImageRef::Raw {
            width,
            height,
            pixels_path,
        } => {
            let bytes = fs::read(pixels_path).map_err(|e| decode_err(format!("{}: {e}", pixels_path.display())))?;
            let area = *width as usize * *height as usize;
            if bytes.len() == area {
                LumaGrid::new(*width, *height, bytes).map_err(|e| decode_err(e.to_string()))
            } else {
                LumaGrid::from_rgb(*width, *height, &bytes).map_err(|e| decode_err(e.to_string()))
            }
        }
        ImageRef::Inline { width, height, pixels } => {
            LumaGrid::new(*width, *height, pixels.clone()).map_err(|e| decode_err(e.to_string()))
        }
    }
}

/// Original (pre-resize) pixel dimensions of a sample's image.
pub fn image_dimensions(sample: &Sample) -> Result<(u32, u32)> {
    match image_ref(sample)? {
        ImageRef::File(path) => image::image_dimensions(path).map_err(|e| Error::Image {
            id: sample.id.clone(),
            message: format!("{}: {e}", path.display()),
        }),
        ImageRef::Raw { width, height, .. } | ImageRef::Inline { width, height, .. } => Ok((*width, *height)),
    }
}

pub fn avg_entropy(dataset: &DatasetManifest) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyManifest(dataset.name.clone()));
    }
    let mut sum = 0.0;
    for sample in &dataset.samples {
        sum += image_entropy(&load_luma(sample)?, 256)?;
    }
    Ok(sum / dataset.len() as f64)
}

fn avg_density(dataset: &DatasetManifest, oracle: &dyn CountOracle, what: &'static str) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyManifest(dataset.name.clone()));
    }
    let mut sum = 0.0;
    for sample in &dataset.samples {
        let count = oracle.count(sample).ok_or_else(|| Error::MissingAnnotation {
            id: sample.id.clone(),
            what,
        })?;
        let (w, h) = image_dimensions(sample)?;
        let area = w as u64 * h as u64;
        if area == 0 {
            return Err(Error::Image {
                id: sample.id.clone(),
                message: "zero-area image".into(),
            });
        }
        sum += count as f64 / area as f64;
    }
    Ok(sum / dataset.len() as f64)
}

/// Mean OCR tokens per original-image pixel.
pub fn text_density(dataset: &DatasetManifest, ocr: &dyn CountOracle) -> Result<f64> {
    avg_density(dataset, ocr, "OCR token count")
}

/// Mean detected objects per original-image pixel.
pub fn object_density(dataset: &DatasetManifest, detector: &dyn CountOracle) -> Result<f64> {
    avg_density(dataset, detector, "object count")
}

pub fn image_score(entropy: f64, text_density: f64, object_density: f64) -> Result<f64> {
    ensure_unit("normalized entropy", entropy)?;
    ensure_unit("normalized text density", text_density)?;
    ensure_unit("normalized object density", object_density)?;
    Ok((entropy + text_density + object_density) / 3.0)
}

pub fn image_metrics(
    dataset: &DatasetManifest,
    ocr: &dyn CountOracle,
    detector: &dyn CountOracle,
) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        avg_entropy: avg_entropy(dataset)?,
        avg_text_density: text_density(dataset, ocr)?,
        avg_object_density: object_density(dataset, detector)?,
        n: dataset.len(),
    })
}
