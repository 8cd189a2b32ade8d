//! Lifting images to orientation scores, reconstruction, interpolated access,
//! and the SE(2) group utilities used by the trackers.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Image2D;
use crate::spectral::fft2_raw;
use crate::wavelets::{in_pass_band, Family, Sidedness, WaveletStack, M_PSI_DELTA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("image is {image:?} but the wavelet stack is {stack:?}")]
    DimError {
        image: (usize, usize),
        stack: (usize, usize),
    },
    #[error(
        "M_psi = {value:e} below {limit:e} inside the pass-band; reconstruction is ill-conditioned"
    )]
    IllConditioned { value: f64, limit: f64 },
    #[error("position ({x}, {y}) lies outside the score grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("score and stack disagree: {0}")]
    Mismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Complex function on `(x, y, θ)` with `θᵢ = i·2π/N_o`.
#[derive(Debug, Clone)]
pub struct OrientationScore {
    pub width: usize,
    pub height: usize,
    /// One row-major layer per orientation.
    pub layers: Vec<Vec<Complex64>>,
    pub family: Family,
    pub sidedness: Sidedness,
    pub scale: Option<f64>,
}

impl OrientationScore {
    pub fn zeros(width: usize, height: usize, n_orientations: usize) -> Self {
        Self {
            width,
            height,
            layers: vec![vec![Complex64::default(); width * height]; n_orientations],
            family: Family::Cake,
            sidedness: Sidedness::Double,
            scale: None,
        }
    }

    pub fn n_orientations(&self) -> usize {
        self.layers.len()
    }

    pub fn dtheta(&self) -> f64 {
        2.0 * PI / self.n_orientations() as f64
    }

    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * self.dtheta()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, i: usize) -> Complex64 {
        self.layers[i][y * self.width + x]
    }

    /// Largest modulus over the whole grid.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Whether `(x, y)` can be interpolated without leaving the grid.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    #[inline]
    fn bilinear_layer(&self, i: usize, x: f64, y: f64) -> Complex64 {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let l = &self.layers[i];
        let w = self.width;
        let a = l[y0 * w + x0] * (1.0 - fx) + l[y0 * w + x1] * fx;
        let b = l[y1 * w + x0] * (1.0 - fx) + l[y1 * w + x1] * fx;
        a * (1.0 - fy) + b * fy
    }

    /// Bilinear in space, linear and 2π-periodic in orientation.
    pub fn sample(&self, x: f64, y: f64, theta: f64) -> Result<Complex64, ScoreError> {
        if !self.contains(x, y) {
            return Err(ScoreError::OutOfBounds { x, y });
        }
        let n = self.n_orientations();
        let t = theta.rem_euclid(2.0 * PI) / self.dtheta();
        let i0 = (t.floor() as usize) % n;
        let i1 = (i0 + 1) % n;
        let ft = t - t.floor();
        let a = self.bilinear_layer(i0, x, y);
        if ft == 0.0 {
            return Ok(a);
        }
        let b = self.bilinear_layer(i1, x, y);
        Ok(a * (1.0 - ft) + b * ft)
    }

    /// The θ-fibre at an interpolated position.
    pub fn orientation_column(&self, x: f64, y: f64) -> Result<Vec<Complex64>, ScoreError> {
        if !self.contains(x, y) {
            return Err(ScoreError::OutOfBounds { x, y });
        }
        Ok((0..self.n_orientations())
            .map(|i| self.bilinear_layer(i, x, y))
            .collect())
    }

    /// Pointwise `self + other` (same grid).
    pub fn add(&self, other: &Self) -> Result<Self, ScoreError> {
        if self.layers.len() != other.layers.len() || self.width != other.width {
            return Err(ScoreError::Mismatch("grids differ".into()));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            layers,
            sidedness: Sidedness::Double,
            ..self.clone()
        })
    }

    /// Writes `<prefix>.bin` (interleaved little-endian `f64` re/im,
    /// orientation-major) and `<prefix>.json`.
    pub fn export(&self, prefix: &Path, params: &serde_json::Value) -> Result<(), ScoreError> {
        let io = |e: std::io::Error| ScoreError::Io(e.to_string());
        let bin = prefix.with_extension("bin");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&bin).map_err(io)?);
        for l in &self.layers {
            for v in l {
                f.write_all(&v.re.to_le_bytes()).map_err(io)?;
                f.write_all(&v.im.to_le_bytes()).map_err(io)?;
            }
        }
        f.flush().map_err(io)?;
        let header = ScoreHeader {
            schema: SCORE_SCHEMA.to_string(),
            width: self.width,
            height: self.height,
            n_orientations: self.n_orientations(),
            family: self.family,
            sidedness: self.sidedness,
            scale: self.scale,
            params: params.clone(),
        };
        let json =
            serde_json::to_string_pretty(&header).map_err(|e| ScoreError::Io(e.to_string()))?;
        std::fs::write(prefix.with_extension("json"), json).map_err(io)
    }

    /// Reads a score written by [`OrientationScore::export`].
    pub fn import(prefix: &Path) -> Result<(Self, ScoreHeader), ScoreError> {
        let io = |e: std::io::Error| ScoreError::Io(e.to_string());
        let header: ScoreHeader =
            serde_json::from_slice(&std::fs::read(prefix.with_extension("json")).map_err(io)?)
                .map_err(|e| ScoreError::Io(e.to_string()))?;
        let bytes = std::fs::read(prefix.with_extension("bin")).map_err(io)?;
        let n = header.width * header.height;
        if bytes.len() != n * header.n_orientations * 16 {
            return Err(ScoreError::Io("binary size does not match header".into()));
        }
        let vals: Vec<Complex64> = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        let layers = vals.chunks_exact(n).map(<[Complex64]>::to_vec).collect();
        Ok((
            Self {
                width: header.width,
                height: header.height,
                layers,
                family: header.family,
                sidedness: header.sidedness,
                scale: header.scale,
            },
            header,
        ))
    }
}

pub const SCORE_SCHEMA: &str = "orientrace.score/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreHeader {
    pub schema: String,
    pub width: usize,
    pub height: usize,
    pub n_orientations: usize,
    pub family: Family,
    pub sidedness: Sidedness,
    pub scale: Option<f64>,
    pub params: serde_json::Value,
}

/// Correlates `f` with every kernel: `𝓕(layer i) = conj(𝓕ψᵢ)·𝓕f`.
pub fn transform(f: &Image2D, stack: &WaveletStack) -> Result<OrientationScore, ScoreError> {
    let (w, h) = f.dims();
    if (w, h) != stack.dims() {
        return Err(ScoreError::DimError {
            image: (w, h),
            stack: stack.dims(),
        });
    }
    let mut fhat: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(w, h, &mut fhat, false);
    let npix = (w * h) as f64;
    let layers = stack
        .fourier
        .par_iter()
        .map(|k| {
            let mut l: Vec<Complex64> = k
                .iter()
                .zip(&fhat)
                .map(|(kv, fv)| kv.conj() * fv / npix)
                .collect();
            fft2_raw(w, h, &mut l, true);
            l
        })
        .collect();
    Ok(OrientationScore {
        width: w,
        height: h,
        layers,
        family: stack.family,
        sidedness: stack.sidedness,
        scale: stack.scale(),
    })
}

/// Reconstruction through the adjoint: `Σᵢ ψᵢ * Uᵢ · (2π/N_o)`, optionally
/// divided by `M_ψ` in the Fourier domain.
///
/// Bins where `M_ψ` vanishes outside the pass-band are set to zero; a
/// vanishing `M_ψ` inside the pass-band is an error when dividing.
pub fn reconstruct(
    u: &OrientationScore,
    stack: &WaveletStack,
    divide_m_psi: bool,
) -> Result<Image2D, ScoreError> {
    let (w, h) = stack.dims();
    if (u.width, u.height) != (w, h) || u.n_orientations() != stack.n_orientations() {
        return Err(ScoreError::Mismatch(
            "score was not produced by this stack".into(),
        ));
    }
    let dtheta = 2.0 * PI / stack.n_orientations() as f64;
    let parts: Vec<Vec<Complex64>> = u
        .layers
        .par_iter()
        .zip(&stack.fourier)
        .map(|(layer, k)| {
            let mut l = layer.clone();
            fft2_raw(w, h, &mut l, false);
            l.iter_mut().zip(k).for_each(|(v, kv)| *v *= kv * dtheta);
            l
        })
        .collect();
    let mut acc = vec![Complex64::default(); w * h];
    for p in &parts {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    if divide_m_psi {
        for ky in 0..h {
            for kx in 0..w {
                let i = ky * w + kx;
                let m = stack.m_psi[i];
                if m > M_PSI_DELTA {
                    acc[i] /= m;
                } else if in_pass_band(stack, kx, ky) {
                    return Err(ScoreError::IllConditioned {
                        value: m,
                        limit: M_PSI_DELTA,
                    });
                } else {
                    acc[i] = Complex64::default();
                }
            }
        }
    }
    fft2_raw(w, h, &mut acc, true);
    let npix = (w * h) as f64;
    Ok(
        Image2D::new(w, h, acc.into_iter().map(|c| c.re / npix).collect())
            .expect("stack dims are valid"),
    )
}

/// Fast reconstruction by integrating the score over orientations.
///
/// The discrete kernels form a partition of unity (`Σᵢ 𝓕ψᵢ ≈ 1`), so the
/// angular integral `(1/2π)∫U dθ` of a continuous family becomes the plain
/// sum over the sampled orientations. The real part is returned.
pub fn reconstruct_approx(u: &OrientationScore) -> Image2D {
    let mut acc = vec![0.0; u.width * u.height];
    for l in &u.layers {
        acc.iter_mut().zip(l).for_each(|(a, v)| *a += v.re);
    }
    Image2D::new(u.width, u.height, acc).expect("score dims are valid")
}

/// Moving frame attached to orientation `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub e_xi: [f64; 2],
    pub e_eta: [f64; 2],
}

pub fn frame(theta: f64) -> Frame {
    let (s, c) = theta.sin_cos();
    Frame {
        e_xi: [c, s],
        e_eta: [-s, c],
    }
}

/// Element `(x, y, θ)` of the roto-translation group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se2Element {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Se2Element {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: theta.rem_euclid(2.0 * PI),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

/// Group product `(R_θ x′ + x, θ + θ′)`.
pub fn se2_mul(g: Se2Element, h: Se2Element) -> Se2Element {
    let (s, c) = g.theta.sin_cos();
    Se2Element::new(
        c * h.x - s * h.y + g.x,
        s * h.x + c * h.y + g.y,
        g.theta + h.theta,
    )
}

/// Group inverse `(−R_{−θ} x, −θ)`.
pub fn se2_inv(g: Se2Element) -> Se2Element {
    let (s, c) = g.theta.sin_cos();
    Se2Element::new(-(c * g.x + s * g.y), -(-s * g.x + c * g.y), -g.theta)
}

/// Smallest absolute difference between two angles.
#[inline]
pub fn angle_distance(a: f64, b: f64) -> f64 {
    crate::wavelets::wrap_angle(a - b).abs()
}
