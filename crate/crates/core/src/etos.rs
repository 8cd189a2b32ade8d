//! Edge tracking in orientation scores.
//!
//! Each step predicts the next centre along the current orientation, reads a
//! profile of the score on the line perpendicular to it, aligns a signed
//! double-Gaussian edge envelope to the profile, picks the left and right
//! edges, and re-estimates the orientation from the edge responses.
//!
//! Track on a double-sided score. A forward single-sided kernel that is
//! tilted slightly against the vessel sees the vessel ahead of it displaced
//! sideways, which shifts the detected centre by about a pixel. At that
//! shifted position the orientation column is symmetric about the current
//! layer, so the estimate locks onto layer centres, and the offset changes
//! sign with the direction of travel.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oscore::{angle_distance, frame, OrientationScore};
use crate::spectral::gaussian;

/// Spacing of the η samples along the scan line (pixels).
pub const ETA_STEP: f64 = 0.5;
/// Spacing of the envelope offsets tried during alignment (pixels).
pub const ETA_STAR_STEP: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EtosError {
    #[error("seed is degenerate: {0}")]
    SeedError(String),
    #[error("scan line lies completely outside the score")]
    Boundary,
    #[error("invalid tracking parameters: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtosParams {
    /// Step size λ in pixels.
    pub step: f64,
    /// Half length of the scan line.
    pub eta_max: f64,
    /// Width of the envelope Gaussians.
    pub sigma: f64,
    /// Number of past widths averaged into `w̄`.
    pub history: usize,
    pub max_steps: usize,
}

impl Default for EtosParams {
    fn default() -> Self {
        Self {
            step: 2.0,
            eta_max: 20.0,
            sigma: 3.0,
            history: 10,
            max_steps: 1000,
        }
    }
}

impl EtosParams {
    pub fn validate(&self) -> Result<(), EtosError> {
        if !(self.step > 0.0 && self.eta_max > 0.0 && self.sigma > 0.0) || self.history == 0 {
            return Err(EtosError::Param(
                "step, eta_max and sigma must be positive and history at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Centre, edges, orientation and width of a vessel cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub c: [f64; 2],
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub theta: f64,
    pub w: f64,
}

impl TrackPoint {
    /// Builds a point from its two edges so that `c = (u+v)/2` and `w = ‖u−v‖`.
    pub fn from_edges(u: [f64; 2], v: [f64; 2], theta: f64) -> Self {
        Self {
            c: [(u[0] + v[0]) / 2.0, (u[1] + v[1]) / 2.0],
            u,
            v,
            theta: theta.rem_euclid(2.0 * PI),
            w: (u[0] - v[0]).hypot(u[1] - v[1]),
        }
    }

    /// A point of width `w` centred at `c`, edges placed along `e_η(θ)`.
    pub fn from_center(c: [f64; 2], theta: f64, w: f64) -> Self {
        let f = frame(theta);
        let h = w / 2.0;
        Self::from_edges(
            [c[0] - h * f.e_eta[0], c[1] - h * f.e_eta[1]],
            [c[0] + h * f.e_eta[0], c[1] + h * f.e_eta[1]],
            theta,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Left the score grid or the region of interest.
    Boundary,
    /// Ran over an existing track for too many consecutive steps.
    Overlap,
    /// Vessel value dropped below the threshold.
    LowVesselValue,
    /// No local minimum on the centre profile (centerline tracking).
    LostCenter,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub clipped: bool,
    pub edge_at_boundary: bool,
    pub low_confidence: bool,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    pub history: VecDeque<TrackPoint>,
    pub capacity: usize,
    pub steps: usize,
    pub stop: Option<StopReason>,
    pub flags: StepFlags,
}

impl TrackState {
    pub fn new(seed: TrackPoint, capacity: usize) -> Self {
        let mut history = VecDeque::with_capacity(capacity);
        history.push_back(seed);
        Self {
            history,
            capacity: capacity.max(1),
            steps: 0,
            stop: None,
            flags: StepFlags::default(),
        }
    }

    pub fn last(&self) -> &TrackPoint {
        self.history.back().expect("history is never empty")
    }

    /// `w̄`: mean width over the stored history.
    pub fn mean_width(&self) -> f64 {
        self.history.iter().map(|p| p.w).sum::<f64>() / self.history.len() as f64
    }

    fn push(&mut self, p: TrackPoint) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(p);
    }
}

/// Ordered track with hierarchy information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselSegment {
    pub id: u32,
    pub parent_id: Option<u32>,
    pub points: Vec<TrackPoint>,
    pub stop_reason: Option<StopReason>,
}

/// Decides after every step whether tracking should stop.
pub trait StopPolicy {
    fn check(&mut self, score: &OrientationScore, point: &TrackPoint) -> Option<StopReason>;
}

/// Stops only at the grid boundary or the step limit.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoStop;

impl StopPolicy for NoStop {
    fn check(&mut self, _: &OrientationScore, _: &TrackPoint) -> Option<StopReason> {
        None
    }
}

/// `c̃ = c + λ·e_ξ(θ)`.
pub fn estimate_center(state: &TrackState, p: &EtosParams) -> [f64; 2] {
    let last = state.last();
    let f = frame(last.theta);
    [
        last.c[0] + p.step * f.e_xi[0],
        last.c[1] + p.step * f.e_xi[1],
    ]
}

/// Profile of the score on the line through `c` perpendicular to `theta`.
#[derive(Debug, Clone)]
pub struct ScanProfile {
    pub eta: Vec<f64>,
    pub values: Vec<num_complex::Complex64>,
    pub center: [f64; 2],
    pub theta: f64,
    pub clipped: bool,
}

impl ScanProfile {
    pub fn imag(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn point(&self, eta: f64) -> [f64; 2] {
        let f = frame(self.theta);
        [
            self.center[0] + eta * f.e_eta[0],
            self.center[1] + eta * f.e_eta[1],
        ]
    }
}

/// Samples `U(c + η·e_η(θ), θ)` for `η ∈ [−η_max, η_max]` every half pixel.
///
/// Samples falling outside the grid read as zero and set `clipped`; if every
/// sample is outside the result is [`EtosError::Boundary`].
pub fn scan_profile(
    u: &OrientationScore,
    c: [f64; 2],
    theta: f64,
    eta_max: f64,
) -> Result<ScanProfile, EtosError> {
    let n = (eta_max / ETA_STEP).round() as i64;
    let f = frame(theta);
    let mut eta = Vec::with_capacity((2 * n + 1) as usize);
    let mut values = Vec::with_capacity(eta.capacity());
    let mut inside = 0usize;
    for j in -n..=n {
        let e = j as f64 * ETA_STEP;
        let (x, y) = (c[0] + e * f.e_eta[0], c[1] + e * f.e_eta[1]);
        eta.push(e);
        match u.sample(x, y, theta) {
            Ok(v) => {
                inside += 1;
                values.push(v);
            }
            Err(_) => values.push(num_complex::Complex64::default()),
        }
    }
    if inside == 0 {
        return Err(EtosError::Boundary);
    }
    Ok(ScanProfile {
        clipped: inside < eta.len(),
        eta,
        values,
        center: c,
        theta,
    })
}

/// `E(η) = −G_σ(η + w̄/2 − η₀) + G_σ(η − w̄/2 − η₀)`.
#[inline]
pub fn edge_envelope(eta: f64, w_bar: f64, sigma: f64, eta0: f64) -> f64 {
    -gaussian(eta + w_bar / 2.0 - eta0, sigma) + gaussian(eta - w_bar / 2.0 - eta0, sigma)
}

/// Candidate offsets `η*` on the quarter-pixel grid covering `[−w̄/2, w̄/2]`,
/// ordered so that ties resolve toward the smallest `|η*|`, then smallest `η*`.
fn eta_star_grid(w_bar: f64) -> Vec<f64> {
    let n = ((w_bar / 2.0) / ETA_STAR_STEP).floor() as i64;
    let mut g: Vec<f64> = (-n..=n).map(|j| j as f64 * ETA_STAR_STEP).collect();
    g.sort_by(|a, b| {
        a.abs()
            .partial_cmp(&b.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal))
    });
    g
}

/// Offset `η₀` maximising the correlation of `Im I` with the envelope.
pub fn align_envelope(eta: &[f64], im: &[f64], w_bar: f64, sigma: f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for e0 in eta_star_grid(w_bar) {
        let s: f64 = eta
            .iter()
            .zip(im)
            .map(|(&e, &v)| v * edge_envelope(e, w_bar, sigma, e0))
            .sum::<f64>()
            * ETA_STEP;
        if s > best.0 + 1e-12 * s.abs().max(1e-300) {
            best = (s, e0);
        }
    }
    best.1
}

/// Vertex offset (in samples, within ±½) of the parabola through three values.
#[inline]
pub fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

/// Left and right edge positions (in η) and whether either landed on the end
/// of its search interval.
pub fn detect_edges(
    eta: &[f64],
    im: &[f64],
    w_bar: f64,
    sigma: f64,
    eta0: f64,
) -> (f64, f64, bool) {
    let weighted: Vec<f64> = eta
        .iter()
        .zip(im)
        .map(|(&e, &v)| v * edge_envelope(e, w_bar, sigma, eta0).abs())
        .collect();
    let split = eta.iter().position(|&e| e >= eta0).unwrap_or(eta.len() - 1);
    let pick = |range: std::ops::RangeInclusive<usize>, sign: f64| -> (f64, bool) {
        let (lo, hi) = (*range.start(), *range.end());
        let mut best = lo;
        for j in range {
            if sign * weighted[j] > sign * weighted[best] {
                best = j;
            }
        }
        let at_end = best == lo || best == hi;
        let off = if best > 0 && best + 1 < weighted.len() {
            parabolic_offset(weighted[best - 1], weighted[best], weighted[best + 1])
        } else {
            0.0
        };
        (eta[best] + off * ETA_STEP, at_end && lo != hi)
    };
    let (left, lb) = pick(0..=split, -1.0);
    let (right, rb) = pick(split..=eta.len() - 1, 1.0);
    (left, right, lb || rb)
}

/// Orientation maximising `Im(−U(u, θ) + U(v, θ))` within π/2 of `theta_prev`.
///
/// Returns the refined angle and `false` if the response is identically zero
/// (in which case `theta_prev` is returned).
pub fn detect_orientation(
    score: &OrientationScore,
    u: [f64; 2],
    v: [f64; 2],
    theta_prev: f64,
) -> (f64, bool) {
    let (Ok(cu), Ok(cv)) = (
        score.orientation_column(u[0], u[1]),
        score.orientation_column(v[0], v[1]),
    ) else {
        return (theta_prev, false);
    };
    let n = cu.len();
    let r: Vec<f64> = (0..n).map(|i| (-cu[i] + cv[i]).im).collect();
    let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-12 {
        return (theta_prev, false);
    }
    let dth = score.dtheta();
    let mut best: Option<usize> = None;
    for i in 0..n {
        if angle_distance(i as f64 * dth, theta_prev) <= FRAC_PI_2 + 1e-12
            && best.is_none_or(|b| r[i] > r[b])
        {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return (theta_prev, false);
    };
    let off = parabolic_offset(r[(b + n - 1) % n], r[b], r[(b + 1) % n]);
    let mut theta = (b as f64 + off) * dth;
    if angle_distance(theta, theta_prev) > FRAC_PI_2 {
        theta = b as f64 * dth;
    }
    (theta.rem_euclid(2.0 * PI), true)
}

/// One tracking iteration. The new point is appended to the history.
pub fn etos_step(
    score: &OrientationScore,
    state: &mut TrackState,
    p: &EtosParams,
) -> Result<TrackPoint, EtosError> {
    let c_est = estimate_center(state, p);
    if !score.contains(c_est[0], c_est[1]) {
        return Err(EtosError::Boundary);
    }
    let theta_prev = state.last().theta;
    let prof = scan_profile(score, c_est, theta_prev, p.eta_max)?;
    let im = prof.imag();
    let w_bar = state.mean_width();
    let eta0 = align_envelope(&prof.eta, &im, w_bar, p.sigma);
    let (l, r, at_end) = detect_edges(&prof.eta, &im, w_bar, p.sigma, eta0);
    let u = prof.point(l);
    let v = prof.point(r);
    let (theta, confident) = detect_orientation(score, u, v, theta_prev);
    let pt = TrackPoint::from_edges(u, v, theta);
    state.flags = StepFlags {
        clipped: prof.clipped,
        edge_at_boundary: at_end,
        low_confidence: !confident,
    };
    state.push(pt);
    state.steps += 1;
    Ok(pt)
}

/// Tracks from `seed` until the policy fires, the grid ends or `max_steps`.
pub fn etos_track(
    score: &OrientationScore,
    seed: TrackPoint,
    p: &EtosParams,
    stop: &mut dyn StopPolicy,
) -> Result<VesselSegment, EtosError> {
    p.validate()?;
    if !(seed.w > 0.0) || !seed.c.iter().all(|v| v.is_finite()) {
        return Err(EtosError::SeedError("seed width must be positive".into()));
    }
    let mut state = TrackState::new(seed, p.history);
    let mut points = vec![seed];
    let mut reason = StopReason::MaxSteps;
    while state.steps < p.max_steps {
        match etos_step(score, &mut state, p) {
            Ok(pt) => {
                points.push(pt);
                if let Some(r) = stop.check(score, &pt) {
                    reason = r;
                    break;
                }
            }
            Err(EtosError::Boundary) => {
                reason = StopReason::Boundary;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(VesselSegment {
        id: 0,
        parent_id: None,
        points,
        stop_reason: Some(reason),
    })
}
