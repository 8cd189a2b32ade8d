//! Real-valued image grids, file loading and the two preprocessing steps
//! applied before lifting an image to an orientation score.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral;

/// Failures raised while reading or preprocessing images.
#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("unsupported or corrupt image: {0}")]
    FormatError(String),
    #[error("mask contains no pixels inside the field of view")]
    EmptyMask,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major real image with a field-of-view mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl Image2D {
    /// Wraps `data` (row-major, `width * height` values) with an all-true mask.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if width * height != data.len() || width == 0 || height == 0 {
            return Err(RasterError::InvalidParam(format!(
                "{}x{} grid cannot hold {} values",
                width,
                height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mask: vec![true; data.len()],
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
            mask: vec![true; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            mask: vec![true; data.len()],
            data,
        }
    }

    /// Replaces the mask; it must have the same number of pixels.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, RasterError> {
        if mask.len() != self.data.len() {
            return Err(RasterError::DimMismatch {
                expected: (self.width, self.height),
                got: (mask.len(), 1),
            });
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn in_mask(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.mask[y * self.width + x]
    }

    /// Whether a continuous position lies inside the grid and on a masked-in pixel.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (xi, yi) = (x.round() as usize, y.round() as usize);
        self.in_mask(xi, yi)
    }

    /// Bilinear interpolation with clamping at the borders.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let xm = (self.width - 1) as f64;
        let ym = (self.height - 1) as f64;
        let x = x.clamp(0.0, xm);
        let y = y.clamp(0.0, ym);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let b = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Mean over the masked-in pixels.
    pub fn masked_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, &m) in self.data.iter().zip(&self.mask) {
            if m {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns a copy whose values are `f(v)`, keeping the mask.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Same grid and mask, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self {
            width: self.width,
            height: self.height,
            data,
            mask: self.mask.clone(),
        }
    }
}

/// Relative L2 distance `‖a − b‖ / ‖b‖`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Which plane to extract from a colour file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Green,
    Gray,
}

impl std::str::FromStr for Channel {
    type Err = RasterError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "red" => Ok(Self::Red),
            "green" => Ok(Self::Green),
            "gray" | "grey" => Ok(Self::Gray),
            other => Err(RasterError::InvalidParam(format!(
                "unknown channel {other}"
            ))),
        }
    }
}

/// Padding policy for image-domain convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Mirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    /// Gaussian scale (pixels) of the luminosity drift estimate.
    pub sigma_lum: f64,
    pub boundary: Boundary,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self {
            sigma_lum: 32.0,
            boundary: Boundary::Periodic,
        }
    }
}

/// Loads a PNG or PGM/PPM file and returns one channel scaled to `[0, 1]`.
///
/// 8-bit samples map as `v / 255`, 16-bit samples as `v / 65535`. Grayscale
/// files return their single plane for every channel request; `Gray` on a
/// colour file returns the Rec. 601 luma.
pub fn load_image(path: impl AsRef<Path>, channel: Channel) -> Result<Image2D, RasterError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(RasterError::NotFound(path.display().to_string()));
    }
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(RasterError::Io)?;
    let img = reader
        .decode()
        .map_err(|e| RasterError::FormatError(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::DynamicImage as D;
    let data: Vec<f64> = match &img {
        D::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        D::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        D::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        D::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        D::ImageRgb8(_) | D::ImageRgba8(_) => {
            let b = img.to_rgb8();
            b.pixels()
                .map(|p| pick_channel(p.0.map(|v| v as f64 / 255.0), channel))
                .collect()
        }
        D::ImageRgb16(_) | D::ImageRgba16(_) => {
            let b = img.to_rgb16();
            b.pixels()
                .map(|p| pick_channel(p.0.map(|v| v as f64 / 65535.0), channel))
                .collect()
        }
        _ => return Err(RasterError::FormatError("unsupported pixel layout".into())),
    };
    Image2D::new(w, h, data)
}

fn pick_channel(rgb: [f64; 3], channel: Channel) -> f64 {
    match channel {
        Channel::Red => rgb[0],
        Channel::Green => rgb[1],
        Channel::Gray => 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2],
    }
}

/// Loads a field-of-view mask: any nonzero sample is inside.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Vec<bool>, RasterError> {
    let img = load_image(path, Channel::Gray)?;
    Ok(img.data.iter().map(|&v| v > 0.0).collect())
}

/// Writes an 8-bit image (PGM for `.pgm`, PNG otherwise), clamping to `[0, 1]`.
pub fn save_gray8(img: &Image2D, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| RasterError::FormatError("buffer size".into()))?;
    save_dynamic(image::DynamicImage::ImageLuma8(buf), path.as_ref())
}

/// Writes an 8-bit RGB buffer (row-major triples).
pub fn save_rgb8(
    width: usize,
    height: usize,
    rgb: Vec<u8>,
    path: impl AsRef<Path>,
) -> Result<(), RasterError> {
    let buf = image::RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| RasterError::FormatError("buffer size".into()))?;
    save_dynamic(image::DynamicImage::ImageRgb8(buf), path.as_ref())
}

fn save_dynamic(img: image::DynamicImage, path: &Path) -> Result<(), RasterError> {
    let fmt = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    img.save_with_format(path, fmt)
        .map_err(|e| RasterError::FormatError(e.to_string()))
}

/// Subtracts the large-scale luminosity drift `G_σ * f` from `f`.
pub fn normalize_luminosity(f: &Image2D, p: &PreprocessParams) -> Result<Image2D, RasterError> {
    if !(p.sigma_lum > 0.0) {
        return Err(RasterError::InvalidParam(
            "sigma_lum must be positive".into(),
        ));
    }
    let blurred = match p.boundary {
        Boundary::Periodic => spectral::gaussian_blur(f, p.sigma_lum),
        Boundary::Mirror => spectral::gaussian_blur_mirror(f, p.sigma_lum),
    };
    let data = f
        .data
        .iter()
        .zip(blurred.data())
        .map(|(a, b)| a - b)
        .collect();
    Ok(f.with_data(data))
}

/// Subtracts the mean over the field of view, so dark structures go negative.
pub fn remove_dc(f: &Image2D) -> Result<Image2D, RasterError> {
    let mean = f.masked_mean().ok_or(RasterError::EmptyMask)?;
    Ok(f.map(|v| v - mean))
}

/// Applies luminosity normalization and DC removal in the requested order.
pub fn preprocess(
    f: &Image2D,
    p: &PreprocessParams,
    dc_first: bool,
) -> Result<Image2D, RasterError> {
    if dc_first {
        normalize_luminosity(&remove_dc(f)?, p)
    } else {
        remove_dc(&normalize_luminosity(f, p)?)
    }
}
