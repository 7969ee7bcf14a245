//! 8-bit grayscale image output.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::CliError;

/// Linear map used to bring an image into `0..=255`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub min: f64,
    pub max: f64,
}

/// Min-max scaled 8-bit pixels; a constant image maps to zeros.
pub fn to_gray8(values: &Array2<f64>) -> (Vec<u8>, Scaling) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pixels = values
        .iter()
        .map(|&v| if span > 0.0 { ((v - min) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    (pixels, Scaling { min, max })
}

/// Binary PGM (`P5`) bytes.
pub fn pgm_bytes(values: &Array2<f64>) -> (Vec<u8>, Scaling) {
    let (h, w) = values.dim();
    let (pixels, scaling) = to_gray8(values);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    (out, scaling)
}

/// Writes `<stem>.pgm` and, if requested, `<stem>.png`. Returns the written
/// paths and the scaling.
pub fn write_image(stem: &Path, values: &Array2<f64>, png: bool) -> Result<(Vec<PathBuf>, Scaling), CliError> {
    let (bytes, scaling) = pgm_bytes(values);
    let pgm = stem.with_extension("pgm");
    fs::write(&pgm, bytes).map_err(|e| CliError::io(&pgm, e))?;
    let mut paths = vec![pgm];
    if png {
        let (h, w) = values.dim();
        let (pixels, _) = to_gray8(values);
        let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer sized to image");
        let path = stem.with_extension("png");
        img.save(&path).map_err(|e| CliError::io(&path, e))?;
        paths.push(path);
    }
    Ok((paths, scaling))
}

/// Tiles equally sized images into a `rows x cols` grid separated by `gap`
/// pixels of value `fill`.
pub fn tile(images: &[Array2<f64>], cols: usize, gap: usize, fill: f64) -> Array2<f64> {
    let Some(first) = images.first() else {
        return Array2::from_elem((0, 0), fill);
    };
    let (h, w) = first.dim();
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let mut out = Array2::from_elem((rows * (h + gap) - gap, cols * (w + gap) - gap), fill);
    for (k, img) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        for ((i, j), &v) in img.indexed_iter() {
            out[(r * (h + gap) + i, c * (w + gap) + j)] = v;
        }
    }
    out
}
