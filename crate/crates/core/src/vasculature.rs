//! Automatic construction of a hierarchical vasculature model.
//!
//! Pipeline: locate the optic disk, derive the typical vessel caliber from
//! its radius, pick seeds on two circles around the disk, initialise edge
//! pairs at every seed, track every seed with ETOS, turn junction evidence
//! collected along each track into new seeds, and repeat until the seed
//! queue is empty. Processing is strictly first-in first-out, so a given
//! input always yields the same model.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::completion::{cubic_hermite, sr_length, HPoint, LiftedCurve, Parameterization};
use crate::etos::{
    etos_track, parabolic_offset, scan_profile, EtosError, EtosParams, StopPolicy, StopReason,
    TrackPoint, VesselSegment,
};
use crate::oscore::{angle_distance, frame, transform, OrientationScore, ScoreError};
use crate::raster::{normalize_luminosity, remove_dc, Image2D, PreprocessParams, RasterError};
use crate::spectral::{
    extrema_1d, gaussian_blur_mirror, scale_space_1d, toppoints_1d, trace_extremum, ExtremumKind,
    ScaleLadder, ScaleSpace1D,
};
use crate::wavelets::{build_cake_stack, split_directional, CakeParams, WaveletError};

#[derive(Debug, Error)]
pub enum VascError {
    #[error("no usable seeds")]
    NoSeeds,
    #[error("optic disk detection confidence {confidence:.3} is below the threshold")]
    LowConfidence { confidence: f64 },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Etos(#[from] EtosError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticDisk {
    pub center: [f64; 2],
    pub radius: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskParams {
    /// Prior guess of the disk radius; `None` uses an eighth of the larger
    /// image side.
    pub expected_radius: Option<f64>,
    pub n_profiles: usize,
    /// Hough radius search range relative to the first-phase estimate.
    pub radius_range: (f64, f64),
    pub min_confidence: f64,
}

impl Default for DiskParams {
    fn default() -> Self {
        Self {
            expected_radius: None,
            n_profiles: 72,
            radius_range: (0.5, 1.5),
            min_confidence: 0.2,
        }
    }
}

/// Typical vessel caliber for a disk of radius `r_od` pixels, based on a
/// 0.15 mm vessel and a 0.92 mm disk radius.
pub fn avg_caliber(r_od: f64) -> f64 {
    15.0 * r_od / 92.0
}

fn integral_image(f: &Image2D, sq: bool) -> Vec<f64> {
    let (w, h) = f.dims();
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            let v = if f.in_mask(x, y) { f.get(x, y) } else { 0.0 };
            row += if sq { v * v } else { v };
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Local variance over a `(2r+1)²` window restricted to the mask.
pub fn local_variance(f: &Image2D, r: usize) -> Image2D {
    let (w, h) = f.dims();
    let s1 = integral_image(f, false);
    let s2 = integral_image(f, true);
    let mut cnt_img = Image2D::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            cnt_img.set(x, y, if f.in_mask(x, y) { 1.0 } else { 0.0 });
        }
    }
    let sc = integral_image(&cnt_img, false);
    let rect = |s: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0]
    };
    Image2D::from_fn(w, h, |x, y| {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(w);
        let y1 = (y + r + 1).min(h);
        let n = rect(&sc, x0, y0, x1, y1);
        if n < 2.0 {
            return 0.0;
        }
        let m = rect(&s1, x0, y0, x1, y1) / n;
        (rect(&s2, x0, y0, x1, y1) / n - m * m).max(0.0)
    })
}

fn disk_offsets(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut o = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                o.push((dx, dy));
            }
        }
    }
    o
}

fn morph(f: &Image2D, offs: &[(isize, isize)], dilate: bool) -> Image2D {
    let (w, h) = f.dims();
    Image2D::from_fn(w, h, |x, y| {
        let mut acc = if dilate {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
        for &(dx, dy) in offs {
            let (xx, yy) = (x as isize + dx, y as isize + dy);
            if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                continue;
            }
            let v = f.get(xx as usize, yy as usize);
            acc = if dilate { acc.max(v) } else { acc.min(v) };
        }
        acc
    })
}

/// Grey-value closing (dilation then erosion) with a disk of radius `r`.
pub fn closing(f: &Image2D, r: usize) -> Image2D {
    let offs = disk_offsets(r);
    morph(&morph(f, &offs, true), &offs, false)
}

fn derivative(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let a = p[i.saturating_sub(1)];
            let b = p[(i + 1).min(n - 1)];
            let span = ((i + 1).min(n - 1) - i.saturating_sub(1)) as f64;
            if span > 0.0 {
                (b - a) / span
            } else {
                0.0
            }
        })
        .collect()
}

/// Falling edges of a radial profile (bright inside, dark outside), each with
/// the scale at which it stops being traceable in scale space.
///
/// Positions are in samples at the finest level.
pub fn focused_edges(profile: &[f64], ladder: &ScaleLadder) -> Vec<(f64, f64)> {
    if profile.len() < 5 {
        return Vec::new();
    }
    let ss = scale_space_1d(profile, ladder);
    let dss = ScaleSpace1D {
        scales: ss.scales.clone(),
        levels: ss.levels.iter().map(|l| derivative(l)).collect(),
    };
    let top = *dss.scales.last().unwrap_or(&1.0);
    let range = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let floor = 1e-3 * range.max(1e-12);
    extrema_1d(&dss.levels[0])
        .into_iter()
        .filter(|e| e.kind == ExtremumKind::Min && e.value < -floor)
        .map(|e| {
            let (_, death) = trace_extremum(&dss, e.pos, ExtremumKind::Min);
            (e.pos, death.unwrap_or(2.0 * top))
        })
        .collect()
}

fn weighted_circle_fit(points: &[([f64; 2], f64)]) -> Option<([f64; 2], f64)> {
    // Weighted algebraic fit of x² + y² + Dx + Ey + F = 0.
    let mut m = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(p, w) in points {
        let row = [p[0], p[1], 1.0];
        let rhs = -(p[0] * p[0] + p[1] * p[1]);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += w * row[i] * row[j];
            }
            b[i] += w * row[i] * rhs;
        }
    }
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut sol = [0.0; 3];
    for k in 0..3 {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = b[i];
        }
        sol[k] = det(&mk) / d;
    }
    let c = [-sol[0] / 2.0, -sol[1] / 2.0];
    let r2 = c[0] * c[0] + c[1] * c[1] - sol[2];
    (r2 > 0.0).then(|| (c, r2.sqrt()))
}

/// Two-phase optic disk detection on a (red or grey) channel.
///
/// Phase one finds a rough centre at the peak of the smoothed local variance
/// and a rough radius from the bright blob around it after a closing removes
/// the vessels. Phase two reads star-shaped profiles of the closed image,
/// focuses their edges in scale space and votes in a weighted circle Hough
/// transform. Confidence is the weight share of the winning circle.
pub fn detect_optic_disk(f: &Image2D, p: &DiskParams) -> OpticDisk {
    let (w, h) = f.dims();
    let r_est = p.expected_radius.unwrap_or(w.max(h) as f64 / 8.0).max(4.0);
    let fallback = OpticDisk {
        center: [w as f64 / 2.0, h as f64 / 2.0],
        radius: r_est,
        confidence: 0.0,
    };
    // Phase 1.
    let var = gaussian_blur_mirror(&local_variance(f, r_est.round() as usize), r_est / 2.0);
    let mut c0 = (0usize, 0usize, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            if f.in_mask(x, y) && var.get(x, y) > c0.2 {
                c0 = (x, y, var.get(x, y));
            }
        }
    }
    if !(c0.2 > 0.0) {
        return fallback;
    }
    let closed = closing(f, (r_est / 5.0).round().max(3.0) as usize);
    let mut vals: Vec<f64> = closed.data().to_vec();
    vals.sort_by(f64::total_cmp);
    let median = vals[vals.len() / 2];
    // Brightest closed pixel near the rough centre.
    let reach = r_est.ceil() as isize;
    let mut seed = (c0.0, c0.1, f64::NEG_INFINITY);
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (x, y) = (c0.0 as isize + dx, c0.1 as isize + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                let v = closed.get(x as usize, y as usize);
                if v > seed.2 {
                    seed = (x as usize, y as usize, v);
                }
            }
        }
    }
    let thr = 0.5 * (seed.2 + median);
    if !(seed.2 - median > 1e-9) {
        return fallback;
    }
    let mut inside = vec![false; w * h];
    let mut stack = vec![(seed.0, seed.1)];
    inside[seed.1 * w + seed.0] = true;
    let (mut area, mut sx, mut sy) = (0.0, 0.0, 0.0);
    while let Some((x, y)) = stack.pop() {
        area += 1.0;
        sx += x as f64;
        sy += y as f64;
        let nb = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in nb {
            if nx < w && ny < h && !inside[ny * w + nx] && closed.get(nx, ny) > thr {
                inside[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    if area < 12.0 {
        return fallback;
    }
    let c1 = [sx / area, sy / area];
    let r1 = (area / PI).sqrt();

    // Phase 2: star profiles and edge focusing.
    let ladder = ScaleLadder::default();
    let len = (2.0 * r1).ceil() as usize + 2;
    let mut edges: Vec<([f64; 2], f64)> = Vec::new();
    let mut total = 0.0;
    for k in 0..p.n_profiles {
        let a = 2.0 * PI * k as f64 / p.n_profiles as f64;
        let (s, c) = a.sin_cos();
        let mut prof = Vec::with_capacity(len);
        for i in 0..len {
            let (x, y) = (c1[0] + i as f64 * c, c1[1] + i as f64 * s);
            if !closed.contains(x, y) {
                break;
            }
            prof.push(closed.bilinear(x, y));
        }
        let found = focused_edges(&prof, &ladder);
        let mut best = 0.0f64;
        for (pos, wgt) in found {
            best = best.max(wgt);
            edges.push(([c1[0] + pos * c, c1[1] + pos * s], wgt));
        }
        total += best;
    }
    if edges.is_empty() || total <= 0.0 {
        return fallback;
    }
    // Weighted circle Hough over a box around c1.
    let box_r = (0.5 * r1).ceil() as isize;
    let (rmin, rmax) = (p.radius_range.0 * r1, p.radius_range.1 * r1);
    let dr = 0.5;
    let nr = ((rmax - rmin) / dr).ceil() as usize + 1;
    let side = (2 * box_r + 1) as usize;
    let mut acc = vec![0.0f64; side * side * nr];
    for &(q, wgt) in &edges {
        for iy in 0..side {
            let cy = c1[1].round() + (iy as isize - box_r) as f64;
            for ix in 0..side {
                let cx = c1[0].round() + (ix as isize - box_r) as f64;
                let r = (q[0] - cx).hypot(q[1] - cy);
                let t = (r - rmin) / dr;
                if t < 0.0 || t >= (nr - 1) as f64 {
                    continue;
                }
                let b = t.floor() as usize;
                let fr = t - b as f64;
                let base = (iy * side + ix) * nr;
                acc[base + b] += wgt * (1.0 - fr);
                acc[base + b + 1] += wgt * fr;
            }
        }
    }
    let mut peak = (0usize, 0usize, 0usize, f64::NEG_INFINITY);
    for iy in 0..side {
        for ix in 0..side {
            let base = (iy * side + ix) * nr;
            for b in 0..nr {
                let v = acc[base + b]
                    + if b > 0 { acc[base + b - 1] } else { 0.0 }
                    + if b + 1 < nr { acc[base + b + 1] } else { 0.0 };
                if v > peak.3 {
                    peak = (ix, iy, b, v);
                }
            }
        }
    }
    let center = [
        c1[0].round() + (peak.0 as isize - box_r) as f64,
        c1[1].round() + (peak.1 as isize - box_r) as f64,
    ];
    let radius = rmin + peak.2 as f64 * dr;
    let confidence = (peak.3 / total).clamp(0.0, 1.0);
    // Refine with the edges supporting the winning circle.
    let support: Vec<([f64; 2], f64)> = edges
        .iter()
        .filter(|(q, _)| ((q[0] - center[0]).hypot(q[1] - center[1]) - radius).abs() <= 2.0)
        .cloned()
        .collect();
    let (center, radius) = if support.len() >= 3 {
        weighted_circle_fit(&support).unwrap_or((center, radius))
    } else {
        (center, radius)
    };
    OpticDisk {
        center,
        radius,
        confidence,
    }
}

/// `V(x) = max_θ Re(−U(x, θ))`.
pub fn vessel_likelihood(u: &OrientationScore) -> Image2D {
    Image2D::from_fn(u.width, u.height, |x, y| {
        (0..u.n_orientations())
            .map(|i| -u.at(x, y, i).re)
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub c: [f64; 2],
    pub theta: f64,
    /// Index of the circle the seed came from (0 = inner).
    pub circle: usize,
}

/// Orientation of the largest `|U|` in the column at `c`, parabola-refined.
pub fn dominant_orientation(u: &OrientationScore, c: [f64; 2]) -> Option<f64> {
    let col: Vec<f64> = u
        .orientation_column(c[0], c[1])
        .ok()?
        .iter()
        .map(|v| v.norm())
        .collect();
    let n = col.len();
    let b = (0..n).max_by(|&a, &b| col[a].total_cmp(&col[b]))?;
    let off = parabolic_offset(col[(b + n - 1) % n], col[b], col[(b + 1) % n]);
    Some(((b as f64 + off) * u.dtheta()).rem_euclid(2.0 * PI))
}

/// Largest angle between a seed orientation and the radial direction.
pub const MAX_SEED_OBLIQUITY: f64 = std::f64::consts::FRAC_PI_4;

/// Seeds at local maxima of `V` on circles of radius `R` and `1.5R` around
/// the disk that exceed the circle mean. Orientations point away from the
/// disk centre; seeds more than [`MAX_SEED_OBLIQUITY`] off radial are
/// dropped.
pub fn detect_seeds(v: &Image2D, u: &OrientationScore, disk: &OpticDisk) -> Vec<Seed> {
    let mut out = Vec::new();
    for (ci, k) in [1.0, 1.5].into_iter().enumerate() {
        let r = k * disk.radius;
        let pts: Vec<([f64; 2], Option<f64>)> = (0..360)
            .map(|d| {
                let a = (d as f64).to_radians();
                let q = [disk.center[0] + r * a.cos(), disk.center[1] + r * a.sin()];
                let inside = v.contains(q[0], q[1])
                    && v.in_mask(q[0].round() as usize, q[1].round() as usize);
                (q, inside.then(|| v.bilinear(q[0], q[1])))
            })
            .collect();
        let valid: Vec<f64> = pts.iter().filter_map(|p| p.1).collect();
        if valid.is_empty() {
            continue;
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        for i in 0..360 {
            let (Some(a), Some(b), Some(c)) =
                (pts[(i + 359) % 360].1, pts[i].1, pts[(i + 1) % 360].1)
            else {
                continue;
            };
            if !(b > a && b >= c && b > mean) {
                continue;
            }
            let q = pts[i].0;
            let Some(mut th) = dominant_orientation(u, q) else {
                continue;
            };
            let radial = (q[1] - disk.center[1]).atan2(q[0] - disk.center[0]);
            if (th - radial).cos() < 0.0 {
                th = (th + PI).rem_euclid(2.0 * PI);
            }
            // Vessels leave the disk roughly radially; responses running
            // along the rim are not vessels.
            if angle_distance(th, radial) > MAX_SEED_OBLIQUITY {
                continue;
            }
            out.push(Seed {
                c: q,
                theta: th,
                circle: ci,
            });
        }
    }
    out
}

/// Drops outer-circle seeds lying on the continuation of an inner seed:
/// within `w_av` of the inner seed's line and with orientation within 15°.
pub fn dedup_seeds(seeds: &[Seed], w_av: f64) -> Vec<Seed> {
    let inner: Vec<&Seed> = seeds.iter().filter(|s| s.circle == 0).collect();
    seeds
        .iter()
        .filter(|s| {
            s.circle == 0
                || !inner.iter().any(|i| {
                    let f = frame(i.theta);
                    let d = [s.c[0] - i.c[0], s.c[1] - i.c[1]];
                    let off = (d[0] * f.e_eta[0] + d[1] * f.e_eta[1]).abs();
                    off <= w_av && angle_distance(s.theta, i.theta) <= 15f64.to_radians()
                })
        })
        .cloned()
        .collect()
}

/// Mean of `|U(·, θ)|` along the chord from `u` to `v` (32-point trapezoid).
pub fn vessel_value(score: &OrientationScore, u: [f64; 2], v: [f64; 2], theta: f64) -> f64 {
    const N: usize = 32;
    let mut acc = 0.0;
    for i in 0..N {
        let t = i as f64 / (N - 1) as f64;
        let p = [u[0] + t * (v[0] - u[0]), u[1] + t * (v[1] - u[1])];
        let m = score
            .sample(p[0], p[1], theta)
            .map(|z| z.norm())
            .unwrap_or(0.0);
        let wgt = if i == 0 || i == N - 1 { 0.5 } else { 1.0 };
        acc += wgt * m;
    }
    acc / (N - 1) as f64
}

/// `T_ν = ½ · mean(ν)`.
pub fn seed_threshold(values: &[f64]) -> Result<f64, VascError> {
    if values.is_empty() {
        return Err(VascError::NoSeeds);
    }
    Ok(0.5 * values.iter().sum::<f64>() / values.len() as f64)
}

/// Pair score `ν(u, v) · exp(−½‖(u+v)/2 − c₀‖² / (0.5⟨w⟩)²)`.
pub fn pair_score(nu: f64, u: [f64; 2], v: [f64; 2], c0: [f64; 2], w_av: f64) -> f64 {
    let m = [(u[0] + v[0]) / 2.0 - c0[0], (u[1] + v[1]) / 2.0 - c0[1]];
    let s = 0.5 * w_av;
    nu * (-0.5 * (m[0] * m[0] + m[1] * m[1]) / (s * s)).exp()
}

/// Locates the two edges of the vessel through `c0` running along `theta0`.
///
/// Local optima of `Im I` on the perpendicular scan line form candidate
/// patches (a minimum followed by the next maximum). The best-scoring patch
/// and its close neighbours are kept; their edges are traced upward in the
/// scale space of the profile until the first annihilation among them, and
/// the strongest surviving minimum and maximum become the edges. Returns
/// `None` when no minimum/maximum pair exists.
pub fn initial_edges(
    score: &OrientationScore,
    c0: [f64; 2],
    theta0: f64,
    w_av: f64,
    eta_max: f64,
) -> Option<TrackPoint> {
    let prof = scan_profile(score, c0, theta0, eta_max).ok()?;
    let im = prof.imag();
    let ext: Vec<_> = extrema_1d(&im)
        .into_iter()
        .filter(|e| match e.kind {
            ExtremumKind::Min => e.value < 0.0,
            ExtremumKind::Max => e.value > 0.0,
        })
        .collect();
    let eta_of = |pos: f64| prof.eta[0] + pos * (prof.eta[1] - prof.eta[0]);
    // Patches: a minimum and the next maximum to its right.
    let mut patches: Vec<(usize, usize, f64)> = Vec::new();
    for (i, e) in ext.iter().enumerate() {
        if e.kind != ExtremumKind::Min {
            continue;
        }
        if let Some(j) = (i + 1..ext.len()).find(|&j| ext[j].kind == ExtremumKind::Max) {
            let u = prof.point(eta_of(e.pos));
            let v = prof.point(eta_of(ext[j].pos));
            let nu = vessel_value(score, u, v, theta0);
            patches.push((i, j, pair_score(nu, u, v, c0, w_av)));
        }
    }
    let main = patches.iter().cloned().max_by(|a, b| a.2.total_cmp(&b.2))?;
    let (lo, hi) = (ext[main.0].pos, ext[main.1].pos);
    let width = hi - lo;
    let mut members: Vec<usize> = vec![main.0, main.1];
    for &(i, j, _) in &patches {
        if (i, j) == (main.0, main.1) {
            continue;
        }
        let (a, b) = (ext[i].pos, ext[j].pos);
        let gap = if b < lo {
            lo - b
        } else if a > hi {
            a - hi
        } else {
            0.0
        };
        if gap < width {
            members.push(i);
            members.push(j);
        }
    }
    // Inner extrema lying between merged patches take part as well.
    let span = members
        .iter()
        .map(|&k| ext[k].pos)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p), b.max(p))
        });
    let members: Vec<usize> = (0..ext.len())
        .filter(|&k| ext[k].pos >= span.0 && ext[k].pos <= span.1)
        .collect();
    let ss = scale_space_1d(&im, &ScaleLadder::default());
    let traces: Vec<(usize, Option<f64>)> = members
        .iter()
        .map(|&k| (k, trace_extremum(&ss, ext[k].pos, ext[k].kind).1))
        .collect();
    // First annihilation among the traced edges, if any; an edge survives if
    // it outlives that scale.
    let tops = toppoints_1d(&ss);
    let first_top = tops
        .events
        .iter()
        .filter(|t| t.position >= span.0 - 1.0 && t.position <= span.1 + 1.0)
        .map(|t| t.scale)
        .fold(f64::INFINITY, f64::min);
    let alive = |death: Option<f64>| death.is_none_or(|d| d >= first_top);
    let level = ss
        .scales
        .iter()
        .position(|&s| s >= first_top)
        .unwrap_or(0)
        .min(ss.levels.len() - 1);
    let strength = |k: usize| {
        let i = ext[k].pos.round() as usize;
        ss.levels[level][i.min(im.len() - 1)].abs()
    };
    let pick = |kind: ExtremumKind| {
        traces
            .iter()
            .filter(|(k, d)| ext[*k].kind == kind && alive(*d))
            .map(|(k, _)| *k)
            .max_by(|&a, &b| strength(a).total_cmp(&strength(b)))
    };
    let (l, r) = (pick(ExtremumKind::Min)?, pick(ExtremumKind::Max)?);
    if ext[l].pos >= ext[r].pos {
        return None;
    }
    let refine = |k: usize| {
        let i = ext[k].pos.round() as usize;
        let off = if i > 0 && i + 1 < im.len() {
            parabolic_offset(im[i - 1], im[i], im[i + 1])
        } else {
            0.0
        };
        eta_of(i as f64 + off)
    };
    let u = prof.point(refine(l));
    let v = prof.point(refine(r));
    Some(TrackPoint::from_edges(u, v, theta0))
}

/// Which edge of the host a junction candidate was found on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionCandidate {
    pub position: [f64; 2],
    pub theta: f64,
    pub side: Side,
}

/// Extra orientation maxima at the two edges of `p`, lying strictly between
/// the forward and backward lobes on the side of that edge.
pub fn detect_junction_candidates(
    score: &OrientationScore,
    p: &TrackPoint,
    prominence: f64,
) -> Vec<JunctionCandidate> {
    let mut out = Vec::new();
    for (side, q) in [(Side::Left, p.u), (Side::Right, p.v)] {
        let Ok(col) = score.orientation_column(q[0], q[1]) else {
            continue;
        };
        let col: Vec<f64> = col.iter().map(|z| z.norm()).collect();
        let n = col.len();
        let dth = 2.0 * PI / n as f64;
        let maxima: Vec<usize> = (0..n)
            .filter(|&i| col[i] > col[(i + n - 1) % n] && col[i] >= col[(i + 1) % n])
            .collect();
        let nearest = |t: f64| {
            maxima.iter().copied().min_by(|&a, &b| {
                angle_distance(a as f64 * dth, t).total_cmp(&angle_distance(b as f64 * dth, t))
            })
        };
        let (Some(fwd), Some(bwd)) = (nearest(p.theta), nearest(p.theta + PI)) else {
            continue;
        };
        if fwd == bwd {
            continue;
        }
        let lobe = 0.5 * (col[fwd] + col[bwd]);
        // Walk from the forward lobe toward the backward lobe on this side:
        // decreasing angle for the left edge, increasing for the right.
        let step: isize = if side == Side::Left { -1 } else { 1 };
        let idx = |k: isize| (k.rem_euclid(n as isize)) as usize;
        let mut arc = Vec::new();
        let mut k = fwd as isize + step;
        while idx(k) != bwd && arc.len() < n {
            arc.push(idx(k));
            k += step;
        }
        for (a, &m) in arc.iter().enumerate() {
            if !maxima.contains(&m) {
                continue;
            }
            let left_min = arc[..a].iter().map(|&i| col[i]).fold(col[fwd], f64::min);
            let right_min = arc[a + 1..]
                .iter()
                .map(|&i| col[i])
                .fold(col[bwd], f64::min);
            let prom = col[m] - left_min.max(right_min);
            if prom > prominence * lobe {
                let off = parabolic_offset(col[(m + n - 1) % n], col[m], col[(m + 1) % n]);
                out.push(JunctionCandidate {
                    position: q,
                    theta: ((m as f64 + off) * dth).rem_euclid(2.0 * PI),
                    side,
                });
            }
        }
    }
    out
}

/// A junction proposal: position on the host edge and branch orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionDraft {
    pub position: [f64; 2],
    pub theta: f64,
    pub side: Side,
}

/// Single-linkage clustering on position (threshold `w_av`), then one draft
/// per mode of an 18-bin circular histogram of orientations modulo π.
pub fn cluster_junctions(cands: &[JunctionCandidate], w_av: f64) -> Vec<JunctionDraft> {
    let n = cands.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while l[r] != r {
            r = l[r];
        }
        let mut k = i;
        while l[k] != r {
            let nx = l[k];
            l[k] = r;
            k = nx;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (cands[i].position, cands[j].position);
            if (a[0] - b[0]).hypot(a[1] - b[1]) < w_av {
                let (ri, rj) = (find(&mut label, i), find(&mut label, j));
                if ri != rj {
                    label[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut roots: Vec<usize> = (0..n).map(|i| find(&mut label, i)).collect();
    let mut order: Vec<usize> = roots.clone();
    order.sort_unstable();
    order.dedup();
    let mut drafts = Vec::new();
    const BINS: usize = 18;
    let bin_of = |t: f64| ((t.rem_euclid(PI) / (PI / BINS as f64)).floor() as usize).min(BINS - 1);
    for root in order {
        let members: Vec<usize> = (0..n).filter(|&i| roots[i] == root).collect();
        let cx = members.iter().map(|&i| cands[i].position[0]).sum::<f64>() / members.len() as f64;
        let cy = members.iter().map(|&i| cands[i].position[1]).sum::<f64>() / members.len() as f64;
        let mut hist = [0usize; BINS];
        for &i in &members {
            hist[bin_of(cands[i].theta)] += 1;
        }
        for b in 0..BINS {
            let (l, r) = (hist[(b + BINS - 1) % BINS], hist[(b + 1) % BINS]);
            if hist[b] == 0 || hist[b] <= l || hist[b] < r {
                continue;
            }
            let near: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| {
                    let d =
                        (bin_of(cands[i].theta) as isize - b as isize).rem_euclid(BINS as isize);
                    d == 0 || d == 1 || d == BINS as isize - 1
                })
                .collect();
            let (s, c) = near.iter().fold((0.0, 0.0), |(s, c), &i| {
                (s + cands[i].theta.sin(), c + cands[i].theta.cos())
            });
            let left = near
                .iter()
                .filter(|&&i| cands[i].side == Side::Left)
                .count();
            drafts.push(JunctionDraft {
                position: [cx, cy],
                theta: s.atan2(c).rem_euclid(2.0 * PI),
                side: if 2 * left >= near.len() {
                    Side::Left
                } else {
                    Side::Right
                },
            });
        }
    }
    roots.clear();
    drafts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JunctionKind {
    Bifurcation,
    Crossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub position: [f64; 2],
    pub theta: f64,
    pub kind: JunctionKind,
    /// Host segment first, then the segments leaving the junction.
    pub segment_ids: Vec<u32>,
}

/// Sub-Riemannian cost of the cubic connection from `(a, θa)` to `(b, θb)`,
/// expressed in the frame of `a`. Infinite when `b` lies behind `a` or the
/// turn exceeds a right angle.
pub fn connection_cost(a: [f64; 2], ta: f64, b: [f64; 2], tb: f64, beta: f64) -> f64 {
    let (s, c) = ta.sin_cos();
    let d = [b[0] - a[0], b[1] - a[1]];
    let x2 = c * d[0] + s * d[1];
    let y2 = -s * d[0] + c * d[1];
    let dt = (tb - ta + PI).rem_euclid(2.0 * PI) - PI;
    if !(x2 > 0.0) || dt.abs() >= FRAC_PI_2 {
        return f64::INFINITY;
    }
    let Ok(cubic) = cubic_hermite(HPoint::new(0.0, 0.0, 0.0), HPoint::new(x2, y2, dt.tan())) else {
        return f64::INFINITY;
    };
    let local = cubic.sample(x2, 201);
    let curve = LiftedCurve {
        param: Parameterization::Arclength,
        pos: local.pos,
        theta: local.theta.iter().map(|t| t.atan()).collect(),
    };
    sr_length(&curve, beta).unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolveParams {
    /// Relative width tolerance for "same vessel" decisions.
    pub width_tol: f64,
    /// Maximal direction difference for a duplicate (radians).
    pub parallel_angle: f64,
    /// Minimal direction difference for a crossing (radians).
    pub transversal_angle: f64,
    /// Crossing partners are searched within this multiple of `⟨w⟩_av`.
    pub partner_radius: f64,
    /// Connection cost limit for a crossing, in units of `β·⟨w⟩_av`.
    pub cost_limit: f64,
}

impl Default for ResolveParams {
    fn default() -> Self {
        Self {
            width_tol: 0.3,
            parallel_angle: 30f64.to_radians(),
            transversal_angle: 60f64.to_radians(),
            partner_radius: 3.0,
            cost_limit: 3.0,
        }
    }
}

/// A junction draft that passed edge initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedDraft {
    pub draft: JunctionDraft,
    pub seed: TrackPoint,
    pub nu: f64,
}

/// Labels each draft a crossing arm (paired with a partner across the host)
/// or a bifurcation. Returns, per draft, the index of its partner if any.
pub fn classify_junctions(
    drafts: &[ValidatedDraft],
    w_av: f64,
    beta: f64,
    p: &ResolveParams,
) -> Vec<Option<usize>> {
    let n = drafts.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&drafts[i], &drafts[j]);
            if a.draft.side == b.draft.side {
                continue;
            }
            let (pa, pb) = (a.draft.position, b.draft.position);
            if (pa[0] - pb[0]).hypot(pa[1] - pb[1]) > p.partner_radius * w_av {
                continue;
            }
            let (wa, wb) = (a.seed.w, b.seed.w);
            if (wa - wb).abs() > p.width_tol * wa.max(wb) {
                continue;
            }
            // Enter the host along the reversed direction of one arm and
            // leave it along the other.
            let cost = connection_cost(pa, a.draft.theta + PI, pb, b.draft.theta, beta).min(
                connection_cost(pb, b.draft.theta + PI, pa, a.draft.theta, beta),
            );
            if cost < p.cost_limit * beta * w_av {
                pairs.push((cost, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut partner = vec![None; n];
    for (_, i, j) in pairs {
        if partner[i].is_none() && partner[j].is_none() {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
    }
    partner
}

/// Outcome of resolving an overlap stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    Duplicate,
    Crossing,
    Bifurcation,
}

/// Decides how a track that ran onto segment `host` should be handled,
/// comparing widths and directions over the overlapping tail.
pub fn resolve_overlap(tail: &[TrackPoint], host: &[TrackPoint], p: &ResolveParams) -> Resolution {
    let mean_w =
        |pts: &[TrackPoint]| pts.iter().map(|q| q.w).sum::<f64>() / pts.len().max(1) as f64;
    let wt = mean_w(tail);
    // Host points near the tail.
    let near: Vec<TrackPoint> = host
        .iter()
        .filter(|h| {
            tail.iter()
                .any(|t| (t.c[0] - h.c[0]).hypot(t.c[1] - h.c[1]) <= h.w.max(t.w))
        })
        .cloned()
        .collect();
    if near.is_empty() {
        return Resolution::Bifurcation;
    }
    let wh = mean_w(&near);
    if (wt - wh).abs() > p.width_tol * wt.max(wh) {
        return Resolution::Bifurcation;
    }
    let dir = |pts: &[TrackPoint]| {
        let (s, c) = pts.iter().fold((0.0, 0.0), |(s, c), q| {
            (s + (2.0 * q.theta).sin(), c + (2.0 * q.theta).cos())
        });
        0.5 * s.atan2(c)
    };
    let d = (dir(tail) - dir(&near)).rem_euclid(PI);
    let d = d.min(PI - d);
    if d <= p.parallel_angle {
        Resolution::Duplicate
    } else if d > p.transversal_angle {
        Resolution::Crossing
    } else {
        Resolution::Bifurcation
    }
}

/// Which pixels belong to which segment (`0` = none, else `id + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub width: usize,
    pub height: usize,
    pub owner: Vec<u32>,
}

impl PixelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            owner: vec![0; width * height],
        }
    }

    pub fn owner_at(&self, x: f64, y: f64) -> Option<u32> {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return None;
        }
        match self.owner[yi as usize * self.width + xi as usize] {
            0 => None,
            o => Some(o - 1),
        }
    }

    /// Whether any pixel within `r` of `(x, y)` belongs to a segment other
    /// than `except`.
    pub fn other_within(&self, x: f64, y: f64, r: f64, except: Option<u32>) -> bool {
        let ri = r.ceil() as isize;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) > r * r {
                    continue;
                }
                if let Some(o) = self.owner_at(x + dx as f64, y + dy as f64) {
                    if Some(o) != except {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Binary image of the painted pixels (1 inside any segment).
    pub fn to_image(&self) -> Image2D {
        Image2D::from_fn(self.width, self.height, |x, y| {
            if self.owner[y * self.width + x] > 0 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Paints the region enclosed by consecutive cross-sections of `points`.
    pub fn paint(&mut self, id: u32, points: &[TrackPoint]) {
        let mut fill_tri = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
            let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
            let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
            let x1 = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(self.width.saturating_sub(1));
            let y1 = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(self.height.saturating_sub(1));
            let edge = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| {
                (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
            };
            let area = edge(a, b, c);
            if area.abs() < 1e-12 {
                return;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = [x as f64, y as f64];
                    let (e0, e1, e2) = (edge(a, b, p), edge(b, c, p), edge(c, a, p));
                    let inside = if area > 0.0 {
                        e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0
                    } else {
                        e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0
                    };
                    if inside {
                        self.owner[y * self.width + x] = id + 1;
                    }
                }
            }
        };
        for w in points.windows(2) {
            let (p, q) = (w[0], w[1]);
            fill_tri(p.u, p.v, q.v);
            fill_tri(p.u, q.v, q.u);
        }
    }
}

/// Stopping rules used while building the model, plus junction evidence
/// gathered along the way.
pub struct VascStopPolicy<'a> {
    /// Single-sided score used for vessel values and junction evidence,
    /// independent of the score being tracked.
    pub directional: &'a OrientationScore,
    pub map: &'a PixelMap,
    pub mask: Option<&'a Image2D>,
    pub disk: OpticDisk,
    pub w_av: f64,
    pub t_nu: f64,
    pub overlap_run: usize,
    pub prominence: f64,
    run: usize,
    overlap_owner: Option<u32>,
    pub candidates: Vec<JunctionCandidate>,
}

/// `⌈4⟨w⟩_av/λ⌉`.
pub fn overlap_run_length(w_av: f64, step: f64) -> usize {
    (4.0 * w_av / step).ceil() as usize
}

impl<'a> VascStopPolicy<'a> {
    pub fn new(
        directional: &'a OrientationScore,
        map: &'a PixelMap,
        disk: OpticDisk,
        w_av: f64,
        t_nu: f64,
        step: f64,
    ) -> Self {
        Self {
            directional,
            map,
            mask: None,
            disk,
            w_av,
            t_nu,
            overlap_run: overlap_run_length(w_av, step),
            prominence: 0.3,
            run: 0,
            overlap_owner: None,
            candidates: Vec::new(),
        }
    }

    /// Segment that the track ran onto when it stopped with `Overlap`.
    pub fn overlap_owner(&self) -> Option<u32> {
        self.overlap_owner
    }
}

impl StopPolicy for VascStopPolicy<'_> {
    fn check(&mut self, _tracked: &OrientationScore, p: &TrackPoint) -> Option<StopReason> {
        let score = self.directional;
        // 1: leaving the region of interest.
        if let Some(m) = self.mask {
            let (x, y) = (p.c[0].round(), p.c[1].round());
            if !m.contains(p.c[0], p.c[1]) || !m.in_mask(x as usize, y as usize) {
                return Some(StopReason::Boundary);
            }
        }
        // 2: running over an existing segment.
        match self.map.owner_at(p.c[0], p.c[1]) {
            Some(o) => {
                self.run += 1;
                self.overlap_owner = Some(o);
                if self.run >= self.overlap_run {
                    return Some(StopReason::Overlap);
                }
            }
            None => self.run = 0,
        }
        // 3: vessel value below threshold.
        if vessel_value(score, p.u, p.v, p.theta) < self.t_nu {
            return Some(StopReason::LowVesselValue);
        }
        let dd = (p.c[0] - self.disk.center[0]).hypot(p.c[1] - self.disk.center[1]);
        if dd > self.disk.radius + 2.0 * self.w_av {
            for c in detect_junction_candidates(score, p, self.prominence) {
                if !self
                    .map
                    .other_within(c.position[0], c.position[1], self.w_av, None)
                {
                    self.candidates.push(c);
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VascParams {
    pub cake: CakeParams,
    pub preprocess: PreprocessParams,
    pub disk: DiskParams,
    pub etos: EtosParams,
    pub resolve: ResolveParams,
    /// Relative prominence of a junction maximum in an edge column.
    pub junction_prominence: f64,
    /// Upper bound on the number of segments, as a guard against runaway
    /// re-seeding.
    pub max_segments: usize,
}

impl Default for VascParams {
    fn default() -> Self {
        Self {
            cake: CakeParams::default(),
            preprocess: PreprocessParams::default(),
            disk: DiskParams::default(),
            etos: EtosParams::default(),
            resolve: ResolveParams::default(),
            junction_prominence: 0.3,
            max_segments: 500,
        }
    }
}

/// A record of every change made while resolving junctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEdit {
    pub segment: u32,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VasculatureModel {
    pub optic_disk: OpticDisk,
    pub segments: Vec<VesselSegment>,
    pub junctions: Vec<Junction>,
    pub avg_caliber: f64,
    pub t_nu: f64,
    pub params: VascParams,
    pub edits: Vec<ModelEdit>,
}

impl VasculatureModel {
    pub fn count(&self, kind: JunctionKind) -> usize {
        self.junctions.iter().filter(|j| j.kind == kind).count()
    }

    /// Whether following parent links from every segment terminates.
    pub fn is_forest(&self) -> bool {
        let ids: Vec<u32> = self.segments.iter().map(|s| s.id).collect();
        self.segments.iter().all(|s| {
            let mut cur = s.parent_id;
            let mut hops = 0;
            while let Some(p) = cur {
                hops += 1;
                if hops > self.segments.len() || !ids.contains(&p) {
                    return false;
                }
                cur = self
                    .segments
                    .iter()
                    .find(|q| q.id == p)
                    .and_then(|q| q.parent_id);
            }
            true
        })
    }
}

/// User-supplied seed, bypassing disk detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedOverride {
    pub c: [f64; 2],
    pub theta: f64,
    pub u: Option<[f64; 2]>,
    pub v: Option<[f64; 2]>,
}

struct QueueItem {
    seed: TrackPoint,
    parent: Option<u32>,
    junction: Option<usize>,
}

/// Lifts the preprocessed image with the forward half of the cake stack and
/// the full stack.
pub struct LiftedImage {
    pub plus: OrientationScore,
    pub double: OrientationScore,
}

pub fn lift(f: &Image2D, p: &VascParams) -> Result<LiftedImage, VascError> {
    let g = remove_dc(&normalize_luminosity(f, &p.preprocess)?)?;
    let stack = build_cake_stack(&p.cake, g.width(), g.height())?;
    let (plus_stack, _) = split_directional(&stack)?;
    Ok(LiftedImage {
        plus: transform(&g, &plus_stack)?,
        double: transform(&g, &stack)?,
    })
}

/// Runs the whole pipeline on one image channel.
pub fn build_vasculature(
    f: &Image2D,
    p: &VascParams,
    seeds_override: Option<&[SeedOverride]>,
) -> Result<VasculatureModel, VascError> {
    build_vasculature_with_map(f, p, seeds_override).map(|r| r.0)
}

/// [`build_vasculature`] that also returns the final pixel map.
pub fn build_vasculature_with_map(
    f: &Image2D,
    p: &VascParams,
    seeds_override: Option<&[SeedOverride]>,
) -> Result<(VasculatureModel, PixelMap), VascError> {
    p.etos.validate()?;
    let disk = detect_optic_disk(f, &p.disk);
    if seeds_override.is_none() && disk.confidence < p.disk.min_confidence {
        return Err(VascError::LowConfidence {
            confidence: disk.confidence,
        });
    }
    let w_av = avg_caliber(disk.radius);
    let lifted = lift(f, p)?;
    let eta_max = p.etos.eta_max.max(2.0 * w_av);

    // Seeds and their initial edges.
    let mut init: Vec<(TrackPoint, f64)> = Vec::new();
    match seeds_override {
        Some(list) => {
            for s in list {
                let tp = match (s.u, s.v) {
                    (Some(u), Some(v)) => Some(TrackPoint::from_edges(u, v, s.theta)),
                    _ => initial_edges(&lifted.plus, s.c, s.theta, w_av, eta_max),
                };
                if let Some(tp) = tp {
                    init.push((tp, vessel_value(&lifted.plus, tp.u, tp.v, tp.theta)));
                }
            }
        }
        None => {
            let v = vessel_likelihood(&lifted.double);
            let seeds = dedup_seeds(&detect_seeds(&v, &lifted.double, &disk), w_av);
            for s in seeds {
                if let Some(tp) = initial_edges(&lifted.plus, s.c, s.theta, w_av, eta_max) {
                    init.push((tp, vessel_value(&lifted.plus, tp.u, tp.v, tp.theta)));
                }
            }
        }
    }
    let t_nu = seed_threshold(&init.iter().map(|s| s.1).collect::<Vec<_>>())?;
    let mut queue: VecDeque<QueueItem> = init
        .iter()
        .filter(|s| s.1 >= t_nu)
        .map(|s| QueueItem {
            seed: s.0,
            parent: None,
            junction: None,
        })
        .collect();

    let mut map = PixelMap::new(f.width(), f.height());
    let mut segments: Vec<VesselSegment> = Vec::new();
    let mut junctions: Vec<Junction> = Vec::new();
    let mut edits: Vec<ModelEdit> = Vec::new();
    let beta = 1.0 / w_av;
    let mask = f.mask().iter().any(|m| !m).then_some(f);

    while let Some(item) = queue.pop_front() {
        if segments.len() >= p.max_segments {
            break;
        }
        if map.owner_at(item.seed.c[0], item.seed.c[1]).is_some() {
            continue;
        }
        let id = segments.len() as u32;
        let (mut seg, cands, owner) = {
            let mut policy = VascStopPolicy::new(&lifted.plus, &map, disk, w_av, t_nu, p.etos.step);
            policy.mask = mask;
            policy.prominence = p.junction_prominence;
            let seg = etos_track(&lifted.double, item.seed, &p.etos, &mut policy)?;
            (
                seg,
                std::mem::take(&mut policy.candidates),
                policy.overlap_owner(),
            )
        };
        seg.id = id;
        seg.parent_id = item.parent;
        let mut extra_junction: Option<Junction> = None;
        if seg.stop_reason == Some(StopReason::Overlap) {
            if let Some(host) = owner.and_then(|o| segments.iter().find(|s| s.id == o)) {
                let run = overlap_run_length(w_av, p.etos.step).min(seg.points.len() - 1);
                let cut = seg.points.len() - run;
                let tail = &seg.points[cut..];
                let res = resolve_overlap(tail, &host.points, &p.resolve);
                let entry = seg.points[cut];
                edits.push(ModelEdit {
                    segment: id,
                    action: format!("overlap with {}: {:?}", host.id, res).to_lowercase(),
                });
                seg.points.truncate(cut + 1);
                match res {
                    Resolution::Duplicate => {}
                    Resolution::Crossing | Resolution::Bifurcation => {
                        extra_junction = Some(Junction {
                            position: entry.c,
                            theta: entry.theta,
                            kind: if res == Resolution::Crossing {
                                JunctionKind::Crossing
                            } else {
                                JunctionKind::Bifurcation
                            },
                            segment_ids: vec![host.id, id],
                        });
                    }
                }
                if res == Resolution::Duplicate && seg.points.len() < 2 * run {
                    edits.push(ModelEdit {
                        segment: id,
                        action: "discarded duplicate".into(),
                    });
                    continue;
                }
            }
        }
        map.paint(id, &seg.points);
        if let Some(j) = item.junction {
            junctions[j].segment_ids.push(id);
        }
        if let Some(j) = extra_junction {
            junctions.push(j);
        }

        // Junction evidence along this segment becomes new seeds.
        let drafts = cluster_junctions(&cands, w_av);
        let mut valid: Vec<ValidatedDraft> = Vec::new();
        for d in drafts {
            let e = frame(d.theta).e_xi;
            let c = [d.position[0] + w_av * e[0], d.position[1] + w_av * e[1]];
            if !lifted.plus.contains(c[0], c[1]) || map.other_within(c[0], c[1], 1.0, None) {
                continue;
            }
            if let Some(tp) = initial_edges(&lifted.plus, c, d.theta, w_av, eta_max) {
                let nu = vessel_value(&lifted.plus, tp.u, tp.v, tp.theta);
                if nu >= t_nu {
                    valid.push(ValidatedDraft {
                        draft: d,
                        seed: tp,
                        nu,
                    });
                }
            }
        }
        let partner = classify_junctions(&valid, w_av, beta, &p.resolve);
        let mut done = vec![false; valid.len()];
        for i in 0..valid.len() {
            if done[i] {
                continue;
            }
            let members: Vec<usize> = match partner[i] {
                Some(j) => vec![i, j],
                None => vec![i],
            };
            let pos = members.iter().fold([0.0, 0.0], |a, &k| {
                [
                    a[0] + valid[k].draft.position[0] / members.len() as f64,
                    a[1] + valid[k].draft.position[1] / members.len() as f64,
                ]
            });
            junctions.push(Junction {
                position: pos,
                theta: valid[i].draft.theta,
                kind: if members.len() == 2 {
                    JunctionKind::Crossing
                } else {
                    JunctionKind::Bifurcation
                },
                segment_ids: vec![id],
            });
            let jx = junctions.len() - 1;
            for k in members {
                done[k] = true;
                queue.push_back(QueueItem {
                    seed: valid[k].seed,
                    parent: Some(id),
                    junction: Some(jx),
                });
            }
        }
        segments.push(seg);
    }
    junctions.retain(|j| j.segment_ids.len() >= 2);
    let model = VasculatureModel {
        optic_disk: disk,
        segments,
        junctions,
        avg_caliber: w_av,
        t_nu,
        params: p.clone(),
        edits,
    };
    Ok((model, map))
}

/// Per-point distance to the optic disk measured along the tree, starting
/// from the disk boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFeature {
    pub segment: u32,
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub distance_to_disk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeature {
    pub segment: u32,
    pub parent: Option<u32>,
    pub length: f64,
    pub mean_width: f64,
    pub mean_curvature: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelFeatures {
    pub points: Vec<PointFeature>,
    pub segments: Vec<SegmentFeature>,
    pub junctions: Vec<Junction>,
}

fn menger_curvature(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    let a = (q[0] - p[0]).hypot(q[1] - p[1]);
    let b = (r[0] - q[0]).hypot(r[1] - q[1]);
    let c = (r[0] - p[0]).hypot(r[1] - p[1]);
    let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let d = a * b * c;
    if d > 0.0 {
        2.0 * cross.abs() / d
    } else {
        0.0
    }
}

pub fn model_features(model: &VasculatureModel) -> ModelFeatures {
    let mut out = ModelFeatures {
        junctions: model.junctions.clone(),
        ..Default::default()
    };
    let disk = model.optic_disk;
    let mut dist: Vec<Vec<f64>> = Vec::with_capacity(model.segments.len());
    for s in &model.segments {
        let start = match s.parent_id.and_then(|p| {
            model
                .segments
                .iter()
                .position(|q| q.id == p)
                .filter(|&pi| pi < dist.len())
        }) {
            Some(pi) => {
                let parent = &model.segments[pi];
                let first = s.points[0].c;
                let (k, d) = parent
                    .points
                    .iter()
                    .enumerate()
                    .map(|(k, q)| (k, (q.c[0] - first[0]).hypot(q.c[1] - first[1])))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((0, 0.0));
                dist[pi][k] + d
            }
            None => {
                let c = s.points[0].c;
                ((c[0] - disk.center[0]).hypot(c[1] - disk.center[1]) - disk.radius).max(0.0)
            }
        };
        let mut d = vec![start];
        for w in s.points.windows(2) {
            let last = *d.last().unwrap_or(&start);
            d.push(last + (w[1].c[0] - w[0].c[0]).hypot(w[1].c[1] - w[0].c[1]));
        }
        for (k, q) in s.points.iter().enumerate() {
            out.points.push(PointFeature {
                segment: s.id,
                index: k,
                x: q.c[0],
                y: q.c[1],
                distance_to_disk: d[k],
            });
        }
        let length = d.last().copied().unwrap_or(start) - start;
        let mean_width = s.points.iter().map(|q| q.w).sum::<f64>() / s.points.len().max(1) as f64;
        let curv: Vec<f64> = s
            .points
            .windows(3)
            .map(|w| menger_curvature(w[0].c, w[1].c, w[2].c))
            .collect();
        out.segments.push(SegmentFeature {
            segment: s.id,
            parent: s.parent_id,
            length,
            mean_width,
            mean_curvature: if curv.is_empty() {
                0.0
            } else {
                curv.iter().sum::<f64>() / curv.len() as f64
            },
        });
        dist.push(d);
    }
    out
}
