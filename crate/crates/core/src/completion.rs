//! Completion fields in the Heisenberg approximation of SE(2), their modes,
//! and length/energy functionals of lifted planar curves.
//!
//! In the Heisenberg picture a curve is a graph `y(x)` and the third
//! coordinate `θ` is its slope `y′(x)`. Group product:
//! `(x, y, θ)·(x′, y′, θ′) = (x + x′, y + y′ + θx′, θ + θ′)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompletionError {
    #[error("end point must lie strictly to the right of the start point")]
    DegenerateSpan,
    #[error("curve needs at least three samples")]
    TooShort,
    #[error("invalid parameter: {0}")]
    Param(String),
}

/// A point of the Heisenberg group `H₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl HPoint {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.x + o.x,
            self.y + o.y + self.theta * o.x,
            self.theta + o.theta,
        )
    }

    pub fn inv(self) -> Self {
        Self::new(-self.x, -self.y + self.theta * self.x, -self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionSetup {
    pub g1: HPoint,
    pub g2: HPoint,
    /// Rate of the exponentially distributed travel time.
    pub lambda_res: f64,
    /// Angular diffusion.
    pub d11: f64,
    /// Relative cost of spatial length against bending.
    pub beta: f64,
}

impl CompletionSetup {
    pub fn validate(&self) -> Result<(), CompletionError> {
        if !(self.g2.x > self.g1.x) {
            return Err(CompletionError::DegenerateSpan);
        }
        if !(self.lambda_res > 0.0 && self.d11 > 0.0 && self.beta > 0.0) {
            return Err(CompletionError::Param(
                "lambda_res, d11 and beta must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    Arclength,
    GraphX,
}

/// Sampled lifted curve `(position, θ)`.
///
/// For [`Parameterization::Arclength`] `θ` is the tangent angle; for
/// [`Parameterization::GraphX`] it is the slope `dy/dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedCurve {
    pub param: Parameterization,
    pub pos: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
}

impl LiftedCurve {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Largest mismatch between the stored `θ` and the one implied by the
    /// positions (central differences).
    pub fn horizontality_error(&self) -> f64 {
        let n = self.pos.len();
        let mut worst = 0.0f64;
        for i in 1..n.saturating_sub(1) {
            let dx = self.pos[i + 1][0] - self.pos[i - 1][0];
            let dy = self.pos[i + 1][1] - self.pos[i - 1][1];
            let implied = match self.param {
                Parameterization::Arclength => dy.atan2(dx),
                Parameterization::GraphX => dy / dx,
            };
            let mut d = (implied - self.theta[i]).abs();
            if self.param == Parameterization::Arclength {
                d = crate::oscore::angle_distance(implied, self.theta[i]);
            }
            worst = worst.max(d);
        }
        worst
    }
}

/// Resolvent Green's function of the Heisenberg contour process started at
/// the origin.
pub fn heisenberg_green(x: f64, y: f64, theta: f64, lambda_res: f64, d11: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let pre = lambda_res * 3f64.sqrt() / (2.0 * d11 * std::f64::consts::PI * x * x);
    let q = 3.0 * (x * theta - 2.0 * y).powi(2) + x * x * theta * theta;
    pre * (-lambda_res * x).exp() * (-q / (4.0 * x.powi(3) * d11)).exp()
}

/// Minimal value of `∫₀ˣ θ′² dx` over horizontal curves from the origin to
/// `(x, y, θ)`.
#[inline]
pub fn bending_energy(x: f64, y: f64, theta: f64) -> f64 {
    4.0 * (3.0 * y * y - 3.0 * x * y * theta + x * x * theta * theta) / x.powi(3)
}

/// Closed-form minimum of `∫₀^{x₂} (β² + θ′²) dx` between `(0,0,0)` and
/// `(x₂, y₂, θ₂)`.
pub fn heisenberg_energy_min(x2: f64, y2: f64, theta2: f64, beta: f64) -> f64 {
    beta * beta * x2 + bending_energy(x2, y2, theta2)
}

/// The commonly quoted variant of [`heisenberg_energy_min`] whose cross term
/// reads `+3x₂y₂θ₂`. It coincides with the true minimum only when `y₂θ₂ = 0`.
pub fn heisenberg_energy_quoted(x2: f64, y2: f64, theta2: f64, beta: f64) -> f64 {
    beta * beta * x2
        + 4.0 * (3.0 * y2 * y2 + 3.0 * x2 * y2 * theta2 + x2 * x2 * theta2 * theta2) / x2.powi(3)
}

/// Regular sampling grid for a completion field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl FieldGrid {
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Field values stored x-slice by x-slice, each slice row-major in `(θ, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionField {
    pub grid: FieldGrid,
    pub values: Vec<f64>,
}

impl CompletionField {
    pub fn at(&self, ix: usize, iy: usize, it: usize) -> f64 {
        let (ny, nt) = (self.grid.ys.len(), self.grid.thetas.len());
        self.values[(ix * nt + it) * ny + iy]
    }

    pub fn slice(&self, ix: usize) -> &[f64] {
        let s = self.grid.ys.len() * self.grid.thetas.len();
        &self.values[ix * s..(ix + 1) * s]
    }
}

/// `C̃(g) = R(g₁⁻¹g)·R(g⁻¹g₂)`: forward field from `g₁` times the adjoint
/// field into `g₂`.
pub fn completion_value(s: &CompletionSetup, x: f64, y: f64, theta: f64) -> f64 {
    let g = HPoint::new(x, y, theta);
    let a = s.g1.inv().mul(g);
    let b = g.inv().mul(s.g2);
    heisenberg_green(a.x, a.y, a.theta, s.lambda_res, s.d11)
        * heisenberg_green(b.x, b.y, b.theta, s.lambda_res, s.d11)
}

pub fn completion_field_h3(
    s: &CompletionSetup,
    grid: &FieldGrid,
) -> Result<CompletionField, CompletionError> {
    s.validate()?;
    let values: Vec<f64> = grid
        .xs
        .par_iter()
        .flat_map_iter(|&x| {
            grid.thetas
                .iter()
                .flat_map(move |&t| grid.ys.iter().map(move |&y| completion_value(s, x, y, t)))
        })
        .collect();
    Ok(CompletionField {
        grid: grid.clone(),
        values,
    })
}

/// Stationary point of `log C̃` on the slice at `x`, solved from the 2×2
/// normal equations of the quadratic exponent. `None` if the system is
/// singular.
pub fn mode_at(s: &CompletionSetup, x: f64) -> Option<(f64, f64)> {
    let x1 = x - s.g1.x;
    let x2 = s.g2.x - x;
    if !(x1 > 0.0 && x2 > 0.0) {
        return None;
    }
    // Gradient of E(X, Y, T) = (12Y² − 12XYT + 4X²T²)/X³ in (Y, T) and its
    // Hessian; both pieces are affine in (y, θ).
    let grad = |xx: f64, yy: f64, tt: f64| {
        let d = xx.powi(3);
        [
            (24.0 * yy - 12.0 * xx * tt) / d,
            (-12.0 * xx * yy + 8.0 * xx * xx * tt) / d,
        ]
    };
    let hess = |xx: f64| {
        let d = xx.powi(3);
        [
            [24.0 / d, -12.0 * xx / d],
            [-12.0 * xx / d, 8.0 * xx * xx / d],
        ]
    };
    let residual = |y: f64, t: f64| {
        let g1 = grad(x1, y - s.g1.y - s.g1.theta * x1, t - s.g1.theta);
        let g2 = grad(x2, s.g2.y - y - t * x2, s.g2.theta - t);
        // Chain rule: ∂(Y′, T′)/∂(y, θ) = [[−1, −x₂], [0, −1]].
        [g1[0] - g2[0], g1[1] - x2 * g2[0] - g2[1]]
    };
    let h1 = hess(x1);
    let h2 = hess(x2);
    let j = [[-1.0, -x2], [0.0, -1.0]];
    let mut h = h1;
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += j[a][r] * h2[a][b] * j[b][c];
                }
            }
            h[r][c] += acc;
        }
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    if !det.is_finite() || det.abs() < 1e-300 {
        return None;
    }
    let r0 = residual(0.0, 0.0);
    let y = -(h[1][1] * r0[0] - h[0][1] * r0[1]) / det;
    let t = -(-h[1][0] * r0[0] + h[0][0] * r0[1]) / det;
    Some((y, t))
}

/// Grid search for the largest `C̃` on the slice at `x` over the given ranges,
/// with a resolution of one thousandth of each range.
pub fn mode_grid_argmax(
    s: &CompletionSetup,
    x: f64,
    y_range: (f64, f64),
    theta_range: (f64, f64),
) -> (f64, f64) {
    let n = 1001;
    let ys = FieldGrid::linspace(y_range.0, y_range.1, n);
    let ts = FieldGrid::linspace(theta_range.0, theta_range.1, n);
    let mut best = (f64::NEG_INFINITY, ys[0], ts[0]);
    for &t in &ts {
        for &y in &ys {
            let v = completion_value(s, x, y, t);
            if v > best.0 {
                best = (v, y, t);
            }
        }
    }
    (best.1, best.2)
}

/// Mode curve of the completion field sampled at `n` evenly spaced `x`.
///
/// End points take the boundary conditions.
pub fn extract_mode(s: &CompletionSetup, n: usize) -> Result<LiftedCurve, CompletionError> {
    s.validate()?;
    if n < 3 {
        return Err(CompletionError::TooShort);
    }
    let xs = FieldGrid::linspace(s.g1.x, s.g2.x, n);
    let span = (s.g2.y - s.g1.y).abs() + (s.g2.x - s.g1.x);
    let mut pos = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for (i, &x) in xs.iter().enumerate() {
        let (y, t) = if i == 0 {
            (s.g1.y, s.g1.theta)
        } else if i + 1 == n {
            (s.g2.y, s.g2.theta)
        } else {
            mode_at(s, x).unwrap_or_else(|| {
                let yc = 0.5 * (s.g1.y + s.g2.y);
                let tc = 0.5 * (s.g1.theta + s.g2.theta);
                mode_grid_argmax(s, x, (yc - span, yc + span), (tc - 2.0, tc + 2.0))
            })
        };
        pos.push([x, y]);
        theta.push(t);
    }
    Ok(LiftedCurve {
        param: Parameterization::GraphX,
        pos,
        theta,
    })
}

/// `y(x) = a·t³ + b·t² + c·t + d` with `t = x − x₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cubic {
    pub x1: f64,
    pub coeffs: [f64; 4],
}

impl Cubic {
    pub fn eval(&self, x: f64) -> f64 {
        let t = x - self.x1;
        let [a, b, c, d] = self.coeffs;
        ((a * t + b) * t + c) * t + d
    }

    pub fn slope(&self, x: f64) -> f64 {
        let t = x - self.x1;
        let [a, b, c, _] = self.coeffs;
        (3.0 * a * t + 2.0 * b) * t + c
    }

    pub fn sample(&self, x2: f64, n: usize) -> LiftedCurve {
        let xs = FieldGrid::linspace(self.x1, x2, n);
        LiftedCurve {
            param: Parameterization::GraphX,
            pos: xs.iter().map(|&x| [x, self.eval(x)]).collect(),
            theta: xs.iter().map(|&x| self.slope(x)).collect(),
        }
    }
}

/// The cubic through `g₁` and `g₂` with slopes `θ₁` and `θ₂`.
pub fn cubic_hermite(g1: HPoint, g2: HPoint) -> Result<Cubic, CompletionError> {
    let h = g2.x - g1.x;
    if !(h > 0.0) {
        return Err(CompletionError::DegenerateSpan);
    }
    let d = g1.y;
    let c = g1.theta;
    // Remaining two conditions at t = h.
    let r1 = g2.y - d - c * h;
    let r2 = g2.theta - c;
    let a = (r2 * h - 2.0 * r1) / h.powi(3);
    let b = (3.0 * r1 - r2 * h) / (h * h);
    Ok(Cubic {
        x1: g1.x,
        coeffs: [a, b, c, d],
    })
}

/// Curvature at every sample from the circle through it and its neighbours;
/// the end samples copy their neighbour.
fn circumcircle_curvature(pos: &[[f64; 2]]) -> Vec<f64> {
    let n = pos.len();
    let mut k = vec![0.0; n];
    for i in 1..n - 1 {
        let (p, q, r) = (pos[i - 1], pos[i], pos[i + 1]);
        let a = (q[0] - p[0]).hypot(q[1] - p[1]);
        let b = (r[0] - q[0]).hypot(r[1] - q[1]);
        let c = (r[0] - p[0]).hypot(r[1] - p[1]);
        let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
        let den = a * b * c;
        k[i] = if den > 0.0 {
            2.0 * cross.abs() / den
        } else {
            0.0
        };
    }
    k[0] = k[1];
    k[n - 1] = k[n - 2];
    k
}

fn arclength_integral(curve: &LiftedCurve, f: impl Fn(f64) -> f64) -> Result<f64, CompletionError> {
    if curve.pos.len() < 3 {
        return Err(CompletionError::TooShort);
    }
    let k = circumcircle_curvature(&curve.pos);
    Ok(curve
        .pos
        .windows(2)
        .zip(k.windows(2))
        .map(|(p, kk)| {
            let ds = (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]);
            0.5 * (f(kk[0]) + f(kk[1])) * ds
        })
        .sum())
}

/// Sub-Riemannian length `∫ √(κ² + β²) ds`.
pub fn sr_length(curve: &LiftedCurve, beta: f64) -> Result<f64, CompletionError> {
    arclength_integral(curve, |k| (k * k + beta * beta).sqrt())
}

/// Elastica energy. Arclength curves use `∫ (κ² + β²) ds`; graph curves use
/// the Heisenberg functional `∫ (θ′(x)² + β²) dx`.
pub fn elastica_energy(curve: &LiftedCurve, beta: f64) -> Result<f64, CompletionError> {
    match curve.param {
        Parameterization::Arclength => arclength_integral(curve, |k| k * k + beta * beta),
        Parameterization::GraphX => {
            let n = curve.pos.len();
            if n < 3 {
                return Err(CompletionError::TooShort);
            }
            let x: Vec<f64> = curve.pos.iter().map(|p| p[0]).collect();
            let t = &curve.theta;
            let d = |i: usize, j: usize, k: usize| -> f64 {
                // Derivative at x[j] of the parabola through samples i, j, k.
                let (x0, x1, x2) = (x[i], x[j], x[k]);
                t[i] * (x1 - x2) / ((x0 - x1) * (x0 - x2))
                    + t[j] * (2.0 * x1 - x0 - x2) / ((x1 - x0) * (x1 - x2))
                    + t[k] * (x1 - x0) / ((x2 - x0) * (x2 - x1))
            };
            let dtheta: Vec<f64> = (0..n)
                .map(|j| {
                    if j == 0 {
                        let (x0, x1, x2) = (x[0], x[1], x[2]);
                        t[0] * (2.0 * x0 - x1 - x2) / ((x0 - x1) * (x0 - x2))
                            + t[1] * (x0 - x2) / ((x1 - x0) * (x1 - x2))
                            + t[2] * (x0 - x1) / ((x2 - x0) * (x2 - x1))
                    } else if j == n - 1 {
                        let (x0, x1, x2) = (x[n - 3], x[n - 2], x[n - 1]);
                        t[n - 3] * (x2 - x1) / ((x0 - x1) * (x0 - x2))
                            + t[n - 2] * (x2 - x0) / ((x1 - x0) * (x1 - x2))
                            + t[n - 1] * (2.0 * x2 - x0 - x1) / ((x2 - x0) * (x2 - x1))
                    } else {
                        d(j - 1, j, j + 1)
                    }
                })
                .collect();
            Ok((0..n - 1)
                .map(|i| {
                    let f0 = dtheta[i] * dtheta[i] + beta * beta;
                    let f1 = dtheta[i + 1] * dtheta[i + 1] + beta * beta;
                    0.5 * (f0 + f1) * (x[i + 1] - x[i])
                })
                .sum())
        }
    }
}

/// Samples of a circular arc of radius `r` and length `len`, arclength
/// parameterised.
pub fn circular_arc(r: f64, len: f64, n: usize) -> LiftedCurve {
    let mut pos = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for i in 0..n {
        let s = len * i as f64 / (n - 1) as f64;
        let phi = s / r;
        pos.push([r * phi.sin(), r * (1.0 - phi.cos())]);
        theta.push(phi);
    }
    LiftedCurve {
        param: Parameterization::Arclength,
        pos,
        theta,
    }
}

/// Straight segment from the origin along angle `angle`.
pub fn straight_segment(len: f64, angle: f64, n: usize) -> LiftedCurve {
    let (s, c) = angle.sin_cos();
    LiftedCurve {
        param: Parameterization::Arclength,
        pos: (0..n)
            .map(|i| {
                let t = len * i as f64 / (n - 1) as f64;
                [t * c, t * s]
            })
            .collect(),
        theta: vec![angle; n],
    }
}
