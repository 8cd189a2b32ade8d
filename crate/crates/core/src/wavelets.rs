//! Cake and Gabor wavelet stacks, the single-sided split, and the `M_ψ`
//! stability diagnostic.
//!
//! # Conventions
//!
//! Orientation `θᵢ = i·2π/N_o` labels the direction `e_ξ = (cos θ, sin θ)` a
//! kernel is elongated along. Its Fourier support sits on the side of the
//! normal `−e_η`, where `e_η = (−sin θ, cos θ)`, which is what
//! [`FOURIER_OFFSET`] encodes. With this choice the imaginary part of every
//! kernel equals the Hilbert transform (multiplier `i·sign(ω·e_η)`) of its
//! real part, and a dark line produces a negative imaginary response on its
//! `η < 0` flank and a positive one on its `η > 0` flank.
//!
//! Fourier kernels are DFT multipliers: `fourier = fft(spatial)` without
//! scaling and `spatial = ifft(fourier) / N`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::spectral::{bin_frequency, fft2_raw, hilbert_2d, NYQUIST};

/// Angle from `θ` to the centre of a kernel's Fourier support.
pub const FOURIER_OFFSET: f64 = -PI / 2.0;

/// Lower bound on `M_ψ` inside the pass-band for a stack to count as invertible.
pub const M_PSI_DELTA: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveletError {
    #[error("invalid wavelet parameters: {0}")]
    ParamError(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CakeParams {
    pub n_orientations: usize,
    /// B-spline order `k` of the angular profile.
    pub spline_order: usize,
    /// Taylor order `N` of the radial function.
    pub taylor_order: usize,
    /// Inflection point of the radial function as a fraction of Nyquist.
    pub gamma: f64,
    /// Spatial window scale; `None` means a quarter of the image diagonal.
    pub sigma_s: Option<f64>,
    /// Subtract the mean of the real part of every spatial kernel.
    pub dc_removed: bool,
}

impl Default for CakeParams {
    fn default() -> Self {
        Self {
            n_orientations: 36,
            spline_order: 2,
            taylor_order: 60,
            gamma: 0.8,
            sigma_s: None,
            dc_removed: false,
        }
    }
}

impl CakeParams {
    pub fn validate(&self) -> Result<(), WaveletError> {
        let bad = |m: &str| Err(WaveletError::ParamError(m.to_string()));
        if self.n_orientations < 4 || !self.n_orientations.is_multiple_of(2) {
            return bad("orientation count must be even and at least 4");
        }
        if self.taylor_order < 1 {
            return bad("Taylor order must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if let Some(s) = self.sigma_s {
            if !(s > 1.0) {
                return bad("spatial window scale must exceed one pixel");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Anisotropy `ε ≥ 1` (elongation along `e_ξ`).
    pub epsilon: f64,
    pub k0: [f64; 2],
    /// Dilation `a > 0`.
    pub scale: f64,
    pub n_orientations: usize,
}

impl Default for GaborParams {
    fn default() -> Self {
        Self {
            epsilon: 4.0,
            k0: [0.0, 3.0],
            scale: 3.0 * 10.0 / (2.0 * PI),
            n_orientations: 36,
        }
    }
}

impl GaborParams {
    pub fn validate(&self) -> Result<(), WaveletError> {
        let bad = |m: &str| Err(WaveletError::ParamError(m.to_string()));
        if !(self.epsilon >= 1.0) {
            return bad("epsilon must be at least 1");
        }
        if !(self.k0[0].hypot(self.k0[1]) > 0.0) {
            return bad("k0 must be nonzero");
        }
        if !(self.scale > 0.0) {
            return bad("scale must be positive");
        }
        if self.n_orientations < 2 || !self.n_orientations.is_multiple_of(2) {
            return bad("orientation count must be even");
        }
        Ok(())
    }

    /// Dilation `a = 3τ/(2π)` matching a vessel of width `τ` pixels.
    pub fn scale_for_width(tau: f64) -> f64 {
        3.0 * tau / (2.0 * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cake,
    Gabor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    Double,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum StackParams {
    Cake(CakeParams),
    Gabor(GaborParams),
}

/// `N_o` rotated kernels, both in space and as Fourier multipliers.
#[derive(Debug, Clone)]
pub struct WaveletStack {
    pub family: Family,
    pub sidedness: Sidedness,
    pub width: usize,
    pub height: usize,
    pub params: StackParams,
    /// Spatial kernels, origin at pixel `(0, 0)`, periodic wrap.
    pub spatial: Vec<Vec<Complex64>>,
    pub fourier: Vec<Vec<Complex64>>,
    /// `(2π/N_o)·Σᵢ|𝓕ψᵢ|²` per frequency bin.
    pub m_psi: Vec<f64>,
    /// Radius (fraction of Nyquist) of the disk the kernels are meant to cover.
    pub band: f64,
    pub dc_removed: bool,
}

impl WaveletStack {
    pub fn n_orientations(&self) -> usize {
        self.spatial.len()
    }

    pub fn theta(&self, i: usize) -> f64 {
        i as f64 * 2.0 * PI / self.n_orientations() as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Dilation of a Gabor stack, `None` for cake stacks.
    pub fn scale(&self) -> Option<f64> {
        match self.params {
            StackParams::Gabor(g) => Some(g.scale),
            StackParams::Cake(_) => None,
        }
    }
}

/// Radial function `M_N(ρ) = e^{−ρ²/t}·Σ_{k≤N} (ρ²/t)^k / k!`.
pub fn radial_mn(rho: f64, n: usize, t: f64) -> f64 {
    let u = rho * rho / t;
    let mut term = (-u).exp();
    let mut sum = term;
    for k in 1..=n {
        term *= u / k as f64;
        sum += term;
    }
    sum.min(1.0)
}

/// Scale `t` that places the inflection point of `M_N` at `ρ = γϱ`.
pub fn inflection_t(gamma: f64, nyquist: f64, n: usize) -> f64 {
    2.0 * (gamma * nyquist).powi(2) / (1.0 + 2.0 * n as f64)
}

/// Centred cardinal B-spline of order `k` (support `[−(k+1)/2, (k+1)/2]`).
///
/// Order 0 takes the value ½ on the two jump points so that shifted copies
/// sum to one everywhere.
pub fn bspline(k: usize, x: f64) -> f64 {
    let half = (k + 1) as f64 / 2.0;
    if x.abs() > half {
        return 0.0;
    }
    if k == 0 {
        return if x.abs() == 0.5 { 0.5 } else { 1.0 };
    }
    let mut fact = 1.0;
    for i in 2..=k {
        fact *= i as f64;
    }
    let mut sum = 0.0;
    let mut binom = 1.0;
    for j in 0..=k + 1 {
        let t = x + half - j as f64;
        if t > 0.0 {
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += s * binom * t.powi(k as i32);
        }
        binom = binom * (k + 1 - j) as f64 / (j + 1) as f64;
    }
    (sum / fact).max(0.0)
}

/// Wraps an angle to `[−π, π)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Signed pixel coordinate of index `i` on a periodic axis of length `n`.
#[inline]
pub fn centred_coord(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), WaveletError> {
    if width < 4 || height < 4 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(WaveletError::ParamError(format!(
            "grid {width}x{height} must have even sides of at least 4"
        )));
    }
    Ok(())
}

fn forward(width: usize, height: usize, spatial: &[Complex64]) -> Vec<Complex64> {
    let mut f = spatial.to_vec();
    fft2_raw(width, height, &mut f, false);
    f
}

fn m_psi_of(fourier: &[Vec<Complex64>]) -> Vec<f64> {
    let n = fourier.len();
    let len = fourier.first().map_or(0, Vec::len);
    let w = 2.0 * PI / n as f64;
    let mut m = vec![0.0; len];
    for k in fourier {
        for (acc, v) in m.iter_mut().zip(k) {
            *acc += v.norm_sqr();
        }
    }
    m.iter_mut().for_each(|v| *v *= w);
    m
}

/// Fourier-domain cake kernel for orientation `theta` before windowing.
pub fn cake_fourier_raw(p: &CakeParams, width: usize, height: usize, theta: f64) -> Vec<f64> {
    let n_o = p.n_orientations as f64;
    let s_theta = 2.0 * PI / n_o;
    let t = inflection_t(p.gamma, NYQUIST, p.taylor_order);
    let mut out = vec![0.0; width * height];
    for ky in 0..height {
        let wy = bin_frequency(ky, height);
        for kx in 0..width {
            let wx = bin_frequency(kx, width);
            let rho = wx.hypot(wy);
            out[ky * width + kx] = if kx == 0 && ky == 0 {
                radial_mn(0.0, p.taylor_order, t) / n_o
            } else {
                // A Nyquist bin stands for both +π and −π, so its angular
                // value is averaged over the two readings.
                let xs: &[f64] = if 2 * kx == width { &[wx, -wx] } else { &[wx] };
                let ys: &[f64] = if 2 * ky == height { &[wy, -wy] } else { &[wy] };
                let mut ang = 0.0;
                for &ax in xs {
                    for &ay in ys {
                        let d = wrap_angle(ay.atan2(ax) - theta - FOURIER_OFFSET);
                        ang += bspline(p.spline_order, d / s_theta);
                    }
                }
                ang / (xs.len() * ys.len()) as f64 * radial_mn(rho, p.taylor_order, t)
            };
        }
    }
    out
}

/// Builds the double-sided cake stack on a `width × height` grid.
pub fn build_cake_stack(
    p: &CakeParams,
    width: usize,
    height: usize,
) -> Result<WaveletStack, WaveletError> {
    p.validate()?;
    check_dims(width, height)?;
    let n_o = p.n_orientations;
    let sigma_s = p
        .sigma_s
        .unwrap_or_else(|| 0.25 * ((width * width + height * height) as f64).sqrt());
    let window: Vec<f64> = (0..width * height)
        .map(|i| {
            let x = centred_coord(i % width, width);
            let y = centred_coord(i / width, height);
            (-(x * x + y * y) / (2.0 * sigma_s * sigma_s)).exp()
        })
        .collect();
    let npix = (width * height) as f64;
    let kernels: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n_o)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * 2.0 * PI / n_o as f64;
            let raw = cake_fourier_raw(p, width, height, theta);
            let mut psi: Vec<Complex64> = raw.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft2_raw(width, height, &mut psi, true);
            for (v, g) in psi.iter_mut().zip(&window) {
                *v *= g / npix;
            }
            if p.dc_removed {
                let mean = psi.iter().map(|v| v.re).sum::<f64>() / npix;
                psi.iter_mut().for_each(|v| v.re -= mean);
            }
            let fourier = forward(width, height, &psi);
            (psi, fourier)
        })
        .collect();
    let (spatial, fourier): (Vec<_>, Vec<_>) = kernels.into_iter().unzip();
    let m_psi = m_psi_of(&fourier);
    Ok(WaveletStack {
        family: Family::Cake,
        sidedness: Sidedness::Double,
        width,
        height,
        params: StackParams::Cake(*p),
        spatial,
        fourier,
        m_psi,
        band: p.gamma,
        dc_removed: p.dc_removed,
    })
}

/// Normalisation constant giving the undilated Gabor wavelet unit L2 norm.
pub fn gabor_norm_constant(epsilon: f64) -> f64 {
    (PI * epsilon.sqrt()).sqrt()
}

/// Builds a single-scale Gabor stack.
///
/// The kernel labelled `θ` is the base wavelet rotated by `θ + π`, which puts
/// its Fourier peak on the same side as the cake kernels (see module docs).
pub fn build_gabor_stack(
    p: &GaborParams,
    width: usize,
    height: usize,
) -> Result<WaveletStack, WaveletError> {
    p.validate()?;
    check_dims(width, height)?;
    let n_o = p.n_orientations;
    let c = gabor_norm_constant(p.epsilon);
    let a = p.scale;
    let kernels: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n_o)
        .into_par_iter()
        .map(|i| {
            let theta = i as f64 * 2.0 * PI / n_o as f64 + PI;
            let (s, co) = theta.sin_cos();
            let psi: Vec<Complex64> = (0..width * height)
                .map(|j| {
                    let x = centred_coord(j % width, width);
                    let y = centred_coord(j / width, height);
                    let u = (co * x + s * y) / a;
                    let v = (-s * x + co * y) / a;
                    let env = (-0.5 * (u * u / p.epsilon + v * v)).exp();
                    let phase = p.k0[0] * u + p.k0[1] * v;
                    Complex64::from_polar(env / (a * c), phase)
                })
                .collect();
            let fourier = forward(width, height, &psi);
            (psi, fourier)
        })
        .collect();
    let (spatial, fourier): (Vec<_>, Vec<_>) = kernels.into_iter().unzip();
    let m_psi = m_psi_of(&fourier);
    Ok(WaveletStack {
        family: Family::Gabor,
        sidedness: Sidedness::Double,
        width,
        height,
        params: StackParams::Gabor(*p),
        spatial,
        fourier,
        m_psi,
        band: CakeParams::default().gamma,
        dc_removed: false,
    })
}

/// Forward window `w(x) = ½ + ½·erf(x)`.
#[inline]
pub fn split_window(x: f64) -> f64 {
    0.5 + 0.5 * erf(x)
}

/// Splits every kernel into its forward (`ψ⁺ = wψ`) and backward
/// (`ψ⁻ = (1 − w)ψ`) halves along `e_ξ`.
///
/// `ψ⁻` is formed as `ψ − ψ⁺`; either half is nudged by at most one ulp where
/// needed so that `ψ⁺ + ψ⁻` reproduces `ψ` bit for bit.
pub fn split_directional(
    stack: &WaveletStack,
) -> Result<(WaveletStack, WaveletStack), WaveletError> {
    if stack.sidedness != Sidedness::Double {
        return Err(WaveletError::ParamError(
            "only a double-sided stack can be split".into(),
        ));
    }
    let (w, h) = stack.dims();
    let n_o = stack.n_orientations();
    let halves: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n_o)
        .into_par_iter()
        .map(|i| {
            let theta = stack.theta(i);
            let (s, c) = theta.sin_cos();
            let mut plus = Vec::with_capacity(w * h);
            let mut minus = Vec::with_capacity(w * h);
            for (j, psi) in stack.spatial[i].iter().enumerate() {
                let x = centred_coord(j % w, w);
                let y = centred_coord(j / w, h);
                let wt = split_window(c * x + s * y);
                let (pr, mr) = exact_split(psi.re, psi.re * wt);
                let (pi, mi) = exact_split(psi.im, psi.im * wt);
                plus.push(Complex64::new(pr, pi));
                minus.push(Complex64::new(mr, mi));
            }
            (plus, minus)
        })
        .collect();
    let (plus, minus): (Vec<_>, Vec<_>) = halves.into_iter().unzip();
    let make = |spatial: Vec<Vec<Complex64>>, side: Sidedness| {
        let fourier: Vec<Vec<Complex64>> = spatial.par_iter().map(|k| forward(w, h, k)).collect();
        WaveletStack {
            family: stack.family,
            sidedness: side,
            width: w,
            height: h,
            params: stack.params,
            m_psi: m_psi_of(&fourier),
            spatial,
            fourier,
            band: stack.band,
            dc_removed: stack.dc_removed,
        }
    };
    Ok((make(plus, Sidedness::Plus), make(minus, Sidedness::Minus)))
}

/// Returns `(p', r)` with `p' + r == total` exactly in floating point, where
/// `p'` is `p` or one of its neighbours.
///
/// Moving only `r` is not always enough: when `p` carries exactly half an ulp
/// of `total`, round-half-even skips over `total` for every `r`.
fn exact_split(total: f64, p: f64) -> (f64, f64) {
    for q in [p, p.next_up(), p.next_down()] {
        let r = total - q;
        for s in [r, r.next_up(), r.next_down()] {
            if q + s == total {
                return (q, s);
            }
        }
    }
    (p, total - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Invertible,
    NonInvertible,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Invertible => "invertible",
            Self::NonInvertible => "non-invertible",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MPsiReport {
    #[serde(skip)]
    pub grid: Vec<f64>,
    pub min_in_band: f64,
    pub max_in_band: f64,
    /// `max |M_ψ − 1|` inside the band.
    pub max_deviation: f64,
    pub verdict: Verdict,
}

/// Whether bin `(kx, ky)` lies in the band `0 ≤ ρ < band·ϱ` (DC excluded for
/// DC-removed stacks).
pub fn in_pass_band(stack: &WaveletStack, kx: usize, ky: usize) -> bool {
    if stack.dc_removed && kx == 0 && ky == 0 {
        return false;
    }
    let wx = bin_frequency(kx, stack.width);
    let wy = bin_frequency(ky, stack.height);
    wx.hypot(wy) < stack.band * NYQUIST
}

/// Evaluates `M_ψ` on the grid and the well-posedness verdict.
pub fn compute_m_psi(stack: &WaveletStack) -> MPsiReport {
    let (w, h) = stack.dims();
    let grid = m_psi_of(&stack.fourier);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut dev: f64 = 0.0;
    for ky in 0..h {
        for kx in 0..w {
            if in_pass_band(stack, kx, ky) {
                let v = grid[ky * w + kx];
                lo = lo.min(v);
                hi = hi.max(v);
                dev = dev.max((v - 1.0).abs());
            }
        }
    }
    let verdict = if lo > M_PSI_DELTA && hi.is_finite() {
        Verdict::Invertible
    } else {
        Verdict::NonInvertible
    };
    MPsiReport {
        grid,
        min_in_band: lo,
        max_in_band: hi,
        max_deviation: dev,
        verdict,
    }
}

/// Pointwise sum `Σᵢ 𝓕ψᵢ` (real part) of the Fourier kernels.
pub fn fourier_sum(stack: &WaveletStack) -> Vec<f64> {
    let mut s = vec![0.0; stack.width * stack.height];
    for k in &stack.fourier {
        for (a, v) in s.iter_mut().zip(k) {
            *a += v.re;
        }
    }
    s
}

/// Relative L2 gap between `Im ψᵢ` and the `e_η`-Hilbert transform of the
/// DC-removed `Re ψᵢ`.
pub fn quadrature_error(stack: &WaveletStack, i: usize) -> f64 {
    let (w, h) = stack.dims();
    let psi = &stack.spatial[i];
    let mean = psi.iter().map(|v| v.re).sum::<f64>() / psi.len() as f64;
    let re: Vec<f64> = psi.iter().map(|v| v.re - mean).collect();
    let theta = stack.theta(i);
    let hil = hilbert_2d(w, h, &re, (-theta.sin(), theta.cos()));
    let num: f64 = psi
        .iter()
        .zip(&hil)
        .map(|(p, q)| (p.im - q.re).powi(2))
        .sum();
    let den: f64 = psi.iter().map(|p| p.im * p.im).sum();
    (num / den).sqrt()
}

#[derive(Serialize)]
struct DumpHeader<'a> {
    schema: &'static str,
    width: usize,
    height: usize,
    n_orientations: usize,
    sidedness: Sidedness,
    params: &'a StackParams,
    layout: &'static str,
}

/// Writes `spatial.bin`, `fourier.bin` (interleaved little-endian `f64`
/// re/im, orientation-major) and a `kernels.json` header into `dir`.
pub fn dump_kernels(stack: &WaveletStack, dir: &Path) -> Result<(), WaveletError> {
    let io = |e: std::io::Error| WaveletError::Io(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    for (name, data) in [
        ("spatial.bin", &stack.spatial),
        ("fourier.bin", &stack.fourier),
    ] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name)).map_err(io)?);
        for k in data {
            for v in k {
                f.write_all(&v.re.to_le_bytes()).map_err(io)?;
                f.write_all(&v.im.to_le_bytes()).map_err(io)?;
            }
        }
    }
    let header = DumpHeader {
        schema: "orientrace.kernels/1",
        width: stack.width,
        height: stack.height,
        n_orientations: stack.n_orientations(),
        sidedness: stack.sidedness,
        params: &stack.params,
        layout: "orientation-major, row-major, complex f64 little-endian",
    };
    let json =
        serde_json::to_string_pretty(&header).map_err(|e| WaveletError::Io(e.to_string()))?;
    std::fs::write(dir.join("kernels.json"), json).map_err(io)
}
