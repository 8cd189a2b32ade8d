//! Centerline tracking over a ladder of single-scale Gabor scores.
//!
//! Every step moves `λ` along the current orientation, snaps to the nearest
//! local minimum of `Re I` on the perpendicular line, re-reads the orientation
//! at the new centre, and finally picks the scale with the strongest negative
//! real response.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::etos::{parabolic_offset, scan_profile, StopPolicy, StopReason, TrackPoint};
use crate::oscore::{angle_distance, frame, transform, OrientationScore, ScoreError};
use crate::raster::Image2D;
use crate::wavelets::{build_gabor_stack, GaborParams, WaveletError};

/// Vessel widths (pixels) the default scale ladder is tuned to.
pub const DEFAULT_WIDTHS: [f64; 6] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

#[derive(Debug, Error)]
pub enum CtosError {
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("expected {expected} scores, got {got}")]
    ScaleMismatch { expected: usize, got: usize },
    #[error("point left the score grid")]
    Boundary,
    #[error("no local minimum on the centre profile")]
    LostCenter,
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtosParams {
    /// Gabor dilations, strictly increasing.
    pub scales: Vec<f64>,
    pub step: f64,
    pub eta_max: f64,
    pub max_steps: usize,
}

impl Default for CtosParams {
    fn default() -> Self {
        Self {
            scales: DEFAULT_WIDTHS
                .iter()
                .map(|&t| GaborParams::scale_for_width(t))
                .collect(),
            step: 2.0,
            eta_max: 20.0,
            max_steps: 1000,
        }
    }
}

impl CtosParams {
    pub fn validate(&self) -> Result<(), CtosError> {
        if self.scales.len() < 2 {
            return Err(CtosError::Param("at least two scales are required".into()));
        }
        if self.scales.windows(2).any(|w| !(w[1] > w[0])) || !(self.scales[0] > 0.0) {
            return Err(CtosError::Param(
                "scales must be positive and strictly increasing".into(),
            ));
        }
        if !(self.step > 0.0 && self.eta_max > 0.0) {
            return Err(CtosError::Param("step and eta_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtosPoint {
    pub c: [f64; 2],
    pub theta: f64,
    /// Index into the scale ladder.
    pub scale_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtosState {
    pub c: [f64; 2],
    pub theta: f64,
    pub scale_index: usize,
    pub steps: usize,
    pub stop: Option<StopReason>,
}

/// A tracked centerline. No widths are measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterlineSegment {
    pub id: u32,
    pub parent_id: Option<u32>,
    pub points: Vec<CtosPoint>,
    pub stop_reason: Option<StopReason>,
}

/// Double-sided Gabor scores of `f`, one per ladder scale.
pub fn scale_scores(
    f: &Image2D,
    p: &CtosParams,
    n_orientations: usize,
) -> Result<Vec<OrientationScore>, CtosError> {
    p.validate()?;
    p.scales
        .par_iter()
        .map(|&a| {
            let g = GaborParams {
                scale: a,
                n_orientations,
                ..GaborParams::default()
            };
            let stack = build_gabor_stack(&g, f.width(), f.height())?;
            Ok(transform(f, &stack)?)
        })
        .collect()
}

/// Position of the local minimum of `values` closest to `η = 0`, refined by a
/// parabola. Ties go to the smaller `η`.
pub fn nearest_local_min(eta: &[f64], values: &[f64]) -> Option<f64> {
    let n = values.len();
    let mut best: Option<(f64, usize)> = None;
    for j in 1..n.saturating_sub(1) {
        let is_min = values[j] < values[j - 1] && values[j] <= values[j + 1];
        if !is_min {
            continue;
        }
        // Extend a flat bottom to its right end and use its midpoint.
        let mut k = j;
        while k + 1 < n && values[k + 1] == values[j] {
            k += 1;
        }
        if k + 1 >= n || values[k + 1] <= values[j] {
            continue;
        }
        let e = if k == j {
            eta[j] + parabolic_offset(values[j - 1], values[j], values[j + 1]) * (eta[1] - eta[0])
        } else {
            0.5 * (eta[j] + eta[k])
        };
        let better = match best {
            None => true,
            Some((b, _)) => e.abs() < b.abs() || (e.abs() == b.abs() && e < b),
        };
        if better {
            best = Some((e, j));
        }
    }
    best.map(|b| b.0)
}

/// Local maximum of a periodic orientation column closest in angle to
/// `theta_prev`, refined by a parabola.
pub fn nearest_orientation_max(col: &[f64], theta_prev: f64) -> Option<f64> {
    let n = col.len();
    if n < 3 {
        return None;
    }
    let dth = 2.0 * PI / n as f64;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n {
        let (a, b, c) = (col[(i + n - 1) % n], col[i], col[(i + 1) % n]);
        if !(b > a && b >= c) {
            continue;
        }
        let th = ((i as f64 + parabolic_offset(a, b, c)) * dth).rem_euclid(2.0 * PI);
        let d = angle_distance(th, theta_prev);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((th, d));
        }
    }
    best.map(|b| b.0)
}

/// Index of the ladder scale maximising `Re(−U_a(c, θ))`.
pub fn select_scale(scores: &[OrientationScore], c: [f64; 2], theta: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, u) in scores.iter().enumerate() {
        let Ok(v) = u.sample(c[0], c[1], theta) else {
            continue;
        };
        let r = -v.re;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((j, r));
        }
    }
    best.map(|b| b.0)
}

/// One tracking iteration; updates `state` in place.
pub fn ctos_step(
    scores: &[OrientationScore],
    state: &mut CtosState,
    p: &CtosParams,
) -> Result<CtosPoint, CtosError> {
    if scores.len() != p.scales.len() {
        return Err(CtosError::ScaleMismatch {
            expected: p.scales.len(),
            got: scores.len(),
        });
    }
    let u = &scores[state.scale_index];
    let f = frame(state.theta);
    let c_est = [
        state.c[0] + p.step * f.e_xi[0],
        state.c[1] + p.step * f.e_xi[1],
    ];
    if !u.contains(c_est[0], c_est[1]) {
        return Err(CtosError::Boundary);
    }
    let prof = scan_profile(u, c_est, state.theta, p.eta_max).map_err(|_| CtosError::Boundary)?;
    let eta0 = nearest_local_min(&prof.eta, &prof.real()).ok_or(CtosError::LostCenter)?;
    let c = prof.point(eta0);
    let col: Vec<f64> = u
        .orientation_column(c[0], c[1])
        .map_err(|_| CtosError::Boundary)?
        .iter()
        .map(|v| -v.re)
        .collect();
    let theta = nearest_orientation_max(&col, state.theta).unwrap_or(state.theta);
    let scale_index = select_scale(scores, c, theta).unwrap_or(state.scale_index);
    state.c = c;
    state.theta = theta;
    state.scale_index = scale_index;
    state.steps += 1;
    Ok(CtosPoint {
        c,
        theta,
        scale_index,
    })
}

/// Tracks a centerline from `(c0, theta0)`.
pub fn ctos_track(
    scores: &[OrientationScore],
    c0: [f64; 2],
    theta0: f64,
    p: &CtosParams,
    stop: &mut dyn StopPolicy,
) -> Result<CenterlineSegment, CtosError> {
    p.validate()?;
    if scores.len() != p.scales.len() {
        return Err(CtosError::ScaleMismatch {
            expected: p.scales.len(),
            got: scores.len(),
        });
    }
    if !scores[0].contains(c0[0], c0[1]) {
        return Err(CtosError::Boundary);
    }
    let theta0 = theta0.rem_euclid(2.0 * PI);
    let a0 = select_scale(scores, c0, theta0).unwrap_or(0);
    let mut state = CtosState {
        c: c0,
        theta: theta0,
        scale_index: a0,
        steps: 0,
        stop: None,
    };
    let mut points = vec![CtosPoint {
        c: c0,
        theta: theta0,
        scale_index: a0,
    }];
    let mut reason = StopReason::MaxSteps;
    while state.steps < p.max_steps {
        match ctos_step(scores, &mut state, p) {
            Ok(pt) => {
                points.push(pt);
                let probe = TrackPoint::from_center(pt.c, pt.theta, 0.0);
                if let Some(r) = stop.check(&scores[pt.scale_index], &probe) {
                    reason = r;
                    break;
                }
            }
            Err(CtosError::Boundary) => {
                reason = StopReason::Boundary;
                break;
            }
            Err(CtosError::LostCenter) => {
                reason = StopReason::LostCenter;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CenterlineSegment {
        id: 0,
        parent_id: None,
        points,
        stop_reason: Some(reason),
    })
}
