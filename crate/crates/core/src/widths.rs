//! Width validation against manually marked cross-sections.

use serde::{Deserialize, Serialize};

/// A ground-truth cross-section: two edge points and the reference width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthProfile {
    pub image_id: String,
    pub profile_id: String,
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub width: f64,
}

impl TruthProfile {
    pub fn center(&self) -> [f64; 2] {
        [(self.u[0] + self.v[0]) / 2.0, (self.u[1] + self.v[1]) / 2.0]
    }
}

/// A measured cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredProfile {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl MeasuredProfile {
    pub fn center(&self) -> [f64; 2] {
        [(self.u[0] + self.v[0]) / 2.0, (self.u[1] + self.v[1]) / 2.0]
    }

    pub fn width(&self) -> f64 {
        (self.u[0] - self.v[0]).hypot(self.u[1] - self.v[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRecord {
    pub image_id: String,
    pub profile_id: String,
    pub u: [f64; 2],
    pub v: [f64; 2],
    pub w: f64,
    pub w_gt: f64,
}

impl WidthRecord {
    /// `χ = w − w_GT`.
    pub fn chi(&self) -> f64 {
        self.w - self.w_gt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthStats {
    pub n_truth: usize,
    pub n_matched: usize,
    pub success_pct: f64,
    pub mean_width: f64,
    pub mean_error: f64,
    pub sigma_chi: f64,
    /// Least-squares fit `w = intercept + slope·w_GT`; `None` when the truth
    /// widths have no spread.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Pairs every truth profile with the measured profile whose centre is
/// nearest, provided it lies within `radius`. Unmatched profiles are `None`.
pub fn match_profiles(
    truth: &[TruthProfile],
    measured: &[MeasuredProfile],
    radius: f64,
) -> Vec<Option<WidthRecord>> {
    truth
        .iter()
        .map(|t| {
            let c = t.center();
            measured
                .iter()
                .map(|m| {
                    let mc = m.center();
                    ((mc[0] - c[0]).hypot(mc[1] - c[1]), m)
                })
                .filter(|(d, _)| *d <= radius)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, m)| WidthRecord {
                    image_id: t.image_id.clone(),
                    profile_id: t.profile_id.clone(),
                    u: m.u,
                    v: m.v,
                    w: m.width(),
                    w_gt: t.width,
                })
        })
        .collect()
}

/// Ordinary least squares `y = a + b·x`, returned as `(b, a)`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = x[..n].iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x[..n]
        .iter()
        .zip(&y[..n])
        .map(|(a, b)| (a - mx) * (b - my))
        .sum();
    if sxx <= 1e-12 * n as f64 {
        return None;
    }
    let b = sxy / sxx;
    Some((b, my - b * mx))
}

/// Success rate, mean width, spread of the error `χ` (sample standard
/// deviation) and the regression of measured on true width.
pub fn width_stats(records: &[Option<WidthRecord>]) -> WidthStats {
    let matched: Vec<&WidthRecord> = records.iter().flatten().collect();
    let n = matched.len();
    let chi: Vec<f64> = matched.iter().map(|r| r.chi()).collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mean_error = mean(&chi);
    let sigma_chi = if n < 2 {
        0.0
    } else {
        (chi.iter().map(|c| (c - mean_error).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let w: Vec<f64> = matched.iter().map(|r| r.w).collect();
    let gt: Vec<f64> = matched.iter().map(|r| r.w_gt).collect();
    let fit = linear_regression(&gt, &w);
    WidthStats {
        n_truth: records.len(),
        n_matched: n,
        success_pct: if records.is_empty() {
            0.0
        } else {
            100.0 * n as f64 / records.len() as f64
        },
        mean_width: mean(&w),
        mean_error,
        sigma_chi,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    }
}
