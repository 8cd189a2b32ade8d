//! FFT plumbing, Gaussian smoothing, a 1-D Gaussian scale space with
//! toppoint detection, and Hilbert transforms.
//!
//! Image spectra use the unitary DFT (`1/√N` both ways). Filter kernels are
//! stored as Fourier multipliers, so applying one is `ifft(K · fft(f))`
//! regardless of how the forward and inverse scalings are split.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::raster::Image2D;

type Plan = Arc<dyn Fft<f64>>;
type PlanCache = Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)>;

fn plan(len: usize, inverse: bool) -> Plan {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    let (planner, plans) = &mut *guard;
    plans
        .entry((len, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// Unscaled in-place 2-D DFT of a row-major `width × height` buffer.
///
/// Forward uses `e^{-iω·x}`, inverse `e^{+iω·x}`; neither divides by `N`.
pub fn fft2_raw(width: usize, height: usize, data: &mut [Complex64], inverse: bool) {
    assert_eq!(data.len(), width * height, "buffer does not match dims");
    let row = plan(width, inverse);
    let mut scratch = vec![Complex64::default(); row.get_inplace_scratch_len()];
    for r in data.chunks_exact_mut(width) {
        row.process_with_scratch(r, &mut scratch);
    }
    let col = plan(height, inverse);
    let mut scratch = vec![Complex64::default(); col.get_inplace_scratch_len()];
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process_with_scratch(&mut column, &mut scratch);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Unitary forward transform of a complex grid.
pub fn fft2_unitary(width: usize, height: usize, data: &mut [Complex64]) {
    fft2_raw(width, height, data, false);
    let s = 1.0 / ((width * height) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
}

/// Unitary inverse transform of a complex grid.
pub fn ifft2_unitary(width: usize, height: usize, data: &mut [Complex64]) {
    fft2_raw(width, height, data, true);
    let s = 1.0 / ((width * height) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
}

/// Angular frequency (rad/pixel) of DFT bin `k` on an axis of length `n`.
#[inline]
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    let signed = if k <= n / 2 && !(n.is_multiple_of(2) && k == n / 2) {
        k as f64
    } else if n.is_multiple_of(2) && k == n / 2 {
        -(k as f64)
    } else {
        k as f64 - n as f64
    };
    2.0 * PI * signed / n as f64
}

/// Nyquist radius of a unit-spaced grid.
pub const NYQUIST: f64 = PI;

/// Unitary spectrum of an image together with its frequency coordinates.
#[derive(Debug, Clone)]
pub struct Spectrum2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum2D {
    /// `(ω₁, ω₂)` of bin `(kx, ky)` in radians per pixel.
    pub fn frequency(&self, kx: usize, ky: usize) -> (f64, f64) {
        (
            bin_frequency(kx, self.width),
            bin_frequency(ky, self.height),
        )
    }

    pub fn nyquist(&self) -> f64 {
        NYQUIST
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

pub fn fft2(f: &Image2D) -> Spectrum2D {
    let (w, h) = f.dims();
    let mut data: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_unitary(w, h, &mut data);
    Spectrum2D {
        width: w,
        height: h,
        data,
    }
}

/// Inverse unitary transform; the imaginary part is discarded.
pub fn ifft2(s: &Spectrum2D) -> Image2D {
    let mut data = s.data.clone();
    ifft2_unitary(s.width, s.height, &mut data);
    Image2D::new(s.width, s.height, data.into_iter().map(|c| c.re).collect())
        .expect("spectrum dims are valid")
}

/// Sampled 1-D Gaussian `G_σ(x) = e^{-x²/2σ²} / (σ√2π)`.
#[inline]
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Periodic Gaussian blur applied as the Fourier multiplier `e^{-σ²|ω|²/2}`.
pub fn gaussian_blur(f: &Image2D, sigma: f64) -> Image2D {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return f.clone();
    }
    let (w, h) = f.dims();
    let mut data: Vec<Complex64> = f.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(w, h, &mut data, false);
    let norm = 1.0 / (w * h) as f64;
    for ky in 0..h {
        let wy = bin_frequency(ky, h);
        for kx in 0..w {
            let wx = bin_frequency(kx, w);
            let g = (-0.5 * sigma * sigma * (wx * wx + wy * wy)).exp();
            data[ky * w + kx] *= g * norm;
        }
    }
    fft2_raw(w, h, &mut data, true);
    f.with_data(data.into_iter().map(|c| c.re).collect())
}

/// Reflects an index into `0..n` (half-sample symmetric, period `2n`).
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|i| gaussian(i as f64, sigma)).collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable spatial Gaussian blur with mirrored borders.
pub fn gaussian_blur_mirror(f: &Image2D, sigma: f64) -> Image2D {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return f.clone();
    }
    let (w, h) = f.dims();
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let src = f.data();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                let xi = mirror_index(x as isize + j as isize - r, w);
                acc += t * src[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                let yi = mirror_index(y as isize + j as isize - r, h);
                acc += t * tmp[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    f.with_data(out)
}

/// Blurs a 1-D profile to variance `t` (px²) with mirrored ends.
///
/// The kernel is the discrete Gaussian `e^{−t}·Iₙ(t)` (Fourier multiplier
/// `e^{−t(1 − cos ω)}`). Unlike a sampled or band-limited continuous
/// Gaussian it never creates new local extrema.
pub fn blur_1d(profile: &[f64], t: f64) -> Vec<f64> {
    let n = profile.len();
    if t <= 0.0 || n < 2 {
        return profile.to_vec();
    }
    let m = 2 * n;
    let mut buf: Vec<Complex64> = (0..m)
        .map(|i| Complex64::new(profile[mirror_index(i as isize, n)], 0.0))
        .collect();
    plan(m, false).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let w = bin_frequency(k, m);
        *v *= (-t * (1.0 - w.cos())).exp() / m as f64;
    }
    plan(m, true).process(&mut buf);
    buf.truncate(n);
    buf.into_iter().map(|c| c.re).collect()
}

/// Geometric scale ladder `t₀·rⁱ` in px² (variance units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleLadder {
    pub t0: f64,
    pub ratio: f64,
    pub levels: usize,
}

impl Default for ScaleLadder {
    fn default() -> Self {
        Self {
            t0: 0.5,
            ratio: std::f64::consts::SQRT_2,
            levels: 16,
        }
    }
}

impl ScaleLadder {
    pub fn scales(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|i| self.t0 * self.ratio.powi(i as i32))
            .collect()
    }
}

/// A profile blurred over a scale ladder; level 0 is the input itself.
#[derive(Debug, Clone)]
pub struct ScaleSpace1D {
    /// `scales[0] = 0`, followed by the ladder.
    pub scales: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
}

impl ScaleSpace1D {
    pub fn len(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn scale_space_1d(profile: &[f64], ladder: &ScaleLadder) -> ScaleSpace1D {
    assert!(ladder.levels >= 1 && ladder.t0 > 0.0 && ladder.ratio > 1.0);
    let mut scales = vec![0.0];
    scales.extend(ladder.scales());
    let levels = scales.iter().map(|&t| blur_1d(profile, t)).collect();
    ScaleSpace1D { scales, levels }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub pos: f64,
    pub kind: ExtremumKind,
    pub value: f64,
}

/// Interior local extrema of a sampled profile.
///
/// Differences smaller than a tiny fraction of the profile range count as
/// flat, so round-off in constant stretches does not create extrema; a
/// plateau extremum is reported at its midpoint.
pub fn extrema_1d(p: &[f64]) -> Vec<Extremum> {
    let n = p.len();
    if n < 3 {
        return Vec::new();
    }
    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let tol = 1e-9 * (hi - lo).max(hi.abs().max(lo.abs()) * 1e-3);
    if !(hi - lo > tol) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut last_sign = 0i8;
    let mut run_start = 0usize;
    for i in 0..n - 1 {
        let d = p[i + 1] - p[i];
        let s = if d > tol {
            1
        } else if d < -tol {
            -1
        } else {
            0
        };
        if s == 0 {
            continue;
        }
        if last_sign != 0 && s != last_sign {
            let mid = (run_start + i) as f64 / 2.0;
            out.push(Extremum {
                pos: mid,
                kind: if last_sign > 0 {
                    ExtremumKind::Max
                } else {
                    ExtremumKind::Min
                },
                value: p[i],
            });
        }
        if s != last_sign {
            last_sign = s;
        }
        run_start = i + 1;
    }
    out
}

/// A scale-space annihilation: two neighbouring extrema of opposite kind
/// that are present at one level and gone at the next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Toppoint {
    pub position: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToppointReport {
    pub events: Vec<Toppoint>,
    /// Positions (at the coarsest level) of extrema that never vanished.
    pub persisted: Vec<f64>,
}

/// Links each extremum of level `j` to one of level `j + 1` with the same kind
/// and nearest position, within `2√Δt`. Returns indices into the next level.
fn link_levels(cur: &[Extremum], next: &[Extremum], dt: f64) -> Vec<Option<usize>> {
    // Extrema positions are quantised to half samples, so never link tighter
    // than that allows.
    let radius = (2.0 * dt.sqrt()).max(1.5);
    let mut taken = vec![false; next.len()];
    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in cur.iter().enumerate() {
        for (j, f) in next.iter().enumerate() {
            let d = (e.pos - f.pos).abs();
            if e.kind == f.kind && d <= radius {
                order.push((d, i, j));
            }
        }
    }
    order.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut links = vec![None; cur.len()];
    for (_, i, j) in order {
        if links[i].is_none() && !taken[j] {
            links[i] = Some(j);
            taken[j] = true;
        }
    }
    links
}

/// Detects annihilation events by tracking extrema upward through the ladder.
pub fn toppoints_1d(ss: &ScaleSpace1D) -> ToppointReport {
    let ext: Vec<Vec<Extremum>> = ss.levels.iter().map(|l| extrema_1d(l)).collect();
    let mut report = ToppointReport::default();
    for j in 0..ext.len().saturating_sub(1) {
        let links = link_levels(&ext[j], &ext[j + 1], ss.scales[j + 1] - ss.scales[j]);
        let vanished: Vec<usize> = (0..ext[j].len()).filter(|&i| links[i].is_none()).collect();
        let mut used = vec![false; vanished.len()];
        for a in 0..vanished.len() {
            if used[a] {
                continue;
            }
            let ea = ext[j][vanished[a]];
            if let Some(b) = (a + 1..vanished.len()).find(|&b| {
                !used[b] && vanished[b] == vanished[a] + 1 && ext[j][vanished[b]].kind != ea.kind
            }) {
                used[a] = true;
                used[b] = true;
                report.events.push(Toppoint {
                    position: 0.5 * (ea.pos + ext[j][vanished[b]].pos),
                    scale: ss.scales[j + 1],
                });
            }
        }
    }
    if let Some(top) = ext.last() {
        report.persisted = top.iter().map(|e| e.pos).collect();
    }
    report
}

/// Follows the extremum nearest to `pos` (of the given kind) up the ladder.
///
/// Returns the positions per level it survived, and the first scale at which
/// it could no longer be linked (`None` if it persists to the top).
pub fn trace_extremum(ss: &ScaleSpace1D, pos: f64, kind: ExtremumKind) -> (Vec<f64>, Option<f64>) {
    let ext: Vec<Vec<Extremum>> = ss.levels.iter().map(|l| extrema_1d(l)).collect();
    let start = ext[0]
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == kind)
        .min_by(|a, b| {
            (a.1.pos - pos)
                .abs()
                .partial_cmp(&(b.1.pos - pos).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|(i, _)| i);
    let Some(mut idx) = start else {
        return (Vec::new(), Some(ss.scales.get(1).copied().unwrap_or(0.0)));
    };
    let mut path = vec![ext[0][idx].pos];
    for j in 0..ext.len() - 1 {
        let links = link_levels(&ext[j], &ext[j + 1], ss.scales[j + 1] - ss.scales[j]);
        match links[idx] {
            Some(n) => {
                idx = n;
                path.push(ext[j + 1][idx].pos);
            }
            None => return (path, Some(ss.scales[j + 1])),
        }
    }
    (path, None)
}

/// 1-D Hilbert transform with the Fourier multiplier `i·sign(ω)`.
///
/// The zero and (for even lengths) Nyquist bins map to zero.
pub fn hilbert_1d(profile: &[f64]) -> Vec<Complex64> {
    let n = profile.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = profile.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let w = bin_frequency(k, n);
        let nyq = n.is_multiple_of(2) && k == n / 2;
        let m = if k == 0 || nyq {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, w.signum())
        };
        *v *= m / n as f64;
    }
    plan(n, true).process(&mut buf);
    buf
}

/// 2-D Hilbert transform along the unit direction `dir` (multiplier
/// `i·sign(ω·dir)`), applied to a real row-major grid.
pub fn hilbert_2d(width: usize, height: usize, data: &[f64], dir: (f64, f64)) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_raw(width, height, &mut buf, false);
    let norm = 1.0 / (width * height) as f64;
    for ky in 0..height {
        let wy = bin_frequency(ky, height);
        for kx in 0..width {
            let wx = bin_frequency(kx, width);
            let proj = wx * dir.0 + wy * dir.1;
            let s = if proj.abs() < 1e-12 {
                0.0
            } else {
                proj.signum()
            };
            buf[ky * width + kx] *= Complex64::new(0.0, s) * norm;
        }
    }
    fft2_raw(width, height, &mut buf, true);
    buf
}
