//! Synthetic fundus-like scenes with known geometry.
//!
//! Vessels are dark Gaussian ridges `e^{−d²/2s²}`. The nominal width `w` of a
//! vessel is its full width at half depth, `w = 2√(2 ln 2)·s`, the usual
//! width convention for Gaussian cross-section models. Overlapping vessels
//! combine by taking the darkest contribution. An optional bright disk with a soft rim
//! imitates the optic disk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::raster::Image2D;

/// Full width at half maximum of a unit-σ Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselSpec {
    /// Centerline polyline in pixel coordinates.
    pub points: Vec<[f64; 2]>,
    pub width_start: f64,
    pub width_end: f64,
    pub contrast: f64,
    /// Height of the central light reflex relative to `contrast` (0 = none).
    pub reflex: f64,
}

impl VesselSpec {
    pub fn straight(a: [f64; 2], b: [f64; 2], width: f64, contrast: f64) -> Self {
        Self {
            points: vec![a, b],
            width_start: width,
            width_end: width,
            contrast,
            reflex: 0.0,
        }
    }

    fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|s| (s[1][0] - s[0][0]).hypot(s[1][1] - s[0][1]))
            .sum()
    }

    /// Distance to the centerline and the local width at the nearest point.
    pub fn nearest(&self, x: f64, y: f64) -> (f64, f64) {
        let total = self.length().max(f64::MIN_POSITIVE);
        let mut best = (f64::INFINITY, self.width_start);
        let mut walked = 0.0;
        for s in self.points.windows(2) {
            let (ax, ay, bx, by) = (s[0][0], s[0][1], s[1][0], s[1][1]);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (ax + t * dx, ay + t * dy);
            let d = (x - px).hypot(y - py);
            let seg = len2.sqrt();
            if d < best.0 {
                let frac = (walked + t * seg) / total;
                best = (
                    d,
                    self.width_start + frac * (self.width_end - self.width_start),
                );
            }
            walked += seg;
        }
        best
    }

    /// Darkening (positive) contributed at `(x, y)`.
    pub fn darkening(&self, x: f64, y: f64) -> f64 {
        let (d, w) = self.nearest(x, y);
        let s = w / FWHM_PER_SIGMA;
        if d > 6.0 * s + 2.0 {
            return 0.0;
        }
        let g = (-(d * d) / (2.0 * s * s)).exp();
        let sr = w / 6.0;
        let r = self.reflex * (-(d * d) / (2.0 * sr * sr)).exp();
        self.contrast * (g - r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskSpec {
    pub center: [f64; 2],
    pub radius: f64,
    pub brightness: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub segments: usize,
    pub bifurcations: usize,
    pub crossings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub background: f64,
    pub vessels: Vec<VesselSpec>,
    pub disk: Option<DiskSpec>,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    pub topology: Topology,
}

/// Sampled centerline `(x, y, width)` per vessel, plus scene metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: String,
    pub scene: String,
    pub width: usize,
    pub height: usize,
    pub centerlines: Vec<Vec<[f64; 3]>>,
    pub disk: Option<DiskSpec>,
    pub topology: Topology,
}

impl Scene {
    fn new(name: &str, width: usize, height: usize) -> Self {
        Self {
            name: name.to_string(),
            width,
            height,
            background: 0.6,
            vessels: Vec::new(),
            disk: None,
            noise: 0.0,
            seed: 7,
            topology: Topology::default(),
        }
    }

    pub fn render(&self) -> Image2D {
        let mut img = Image2D::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let mut v = self.background;
            if let Some(d) = &self.disk {
                let r = (x - d.center[0]).hypot(y - d.center[1]);
                v += d.brightness * 0.5 * erfc((r - d.radius) / (std::f64::consts::SQRT_2 * 1.5));
            }
            let dark = self
                .vessels
                .iter()
                .map(|s| s.darkening(x, y))
                .fold(0.0, f64::max);
            v - dark
        });
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let n = Normal::new(0.0, self.noise).expect("noise sigma is finite");
            img.data_mut()
                .iter_mut()
                .for_each(|v| *v += n.sample(&mut rng));
        }
        img
    }

    pub fn truth(&self) -> GroundTruth {
        let centerlines = self
            .vessels
            .iter()
            .map(|s| {
                let mut out = Vec::new();
                let total = s.length();
                let mut walked = 0.0;
                for seg in s.points.windows(2) {
                    let (a, b) = (seg[0], seg[1]);
                    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                    let n = len.ceil().max(1.0) as usize;
                    for i in 0..n {
                        let t = i as f64 / n as f64;
                        let frac = (walked + t * len) / total;
                        out.push([
                            a[0] + t * (b[0] - a[0]),
                            a[1] + t * (b[1] - a[1]),
                            s.width_start + frac * (s.width_end - s.width_start),
                        ]);
                    }
                    walked += len;
                }
                if let Some(last) = s.points.last() {
                    out.push([last[0], last[1], s.width_end]);
                }
                out
            })
            .collect();
        GroundTruth {
            schema: "orientrace.truth/1".into(),
            scene: self.name.clone(),
            width: self.width,
            height: self.height,
            centerlines,
            disk: self.disk,
            topology: self.topology.clone(),
        }
    }
}

/// Horizontal-ish vessel crossing a 256×128 frame at `angle` radians.
pub fn straight(width: f64, contrast: f64, angle: f64) -> Scene {
    let mut s = Scene::new("straight", 256, 128);
    let (c, d) = ([128.0, 64.0], [angle.cos(), angle.sin()]);
    s.vessels.push(VesselSpec::straight(
        [c[0] - 400.0 * d[0], c[1] - 400.0 * d[1]],
        [c[0] + 400.0 * d[0], c[1] + 400.0 * d[1]],
        width,
        contrast,
    ));
    s.topology = Topology {
        segments: 1,
        ..Default::default()
    };
    s
}

/// Two straight vessels through the centre of a 256×256 frame; the first is
/// horizontal, the second at `angle` radians to it.
pub fn crossing(width: f64, angle: f64) -> Scene {
    let mut s = Scene::new("crossing", 256, 256);
    s.vessels.push(VesselSpec::straight(
        [-200.0, 128.0],
        [456.0, 128.0],
        width,
        0.3,
    ));
    let (c, d) = ([128.0, 128.0], [angle.cos(), angle.sin()]);
    s.vessels.push(VesselSpec::straight(
        [c[0] - 400.0 * d[0], c[1] - 400.0 * d[1]],
        [c[0] + 400.0 * d[0], c[1] + 400.0 * d[1]],
        width,
        0.3,
    ));
    s.topology = Topology {
        segments: 2,
        bifurcations: 0,
        crossings: 1,
    };
    s
}

/// Two horizontal vessels of equal width separated by an edge-to-edge `gap`.
pub fn parallel(width: f64, gap: f64) -> Scene {
    let mut s = Scene::new("parallel", 256, 128);
    let sep = width + gap;
    for dy in [-sep / 2.0, sep / 2.0] {
        s.vessels.push(VesselSpec::straight(
            [-200.0, 64.0 + dy],
            [456.0, 64.0 + dy],
            width,
            0.3,
        ));
    }
    s.topology = Topology {
        segments: 2,
        ..Default::default()
    };
    s
}

/// Horizontal vessel with a bright ridge along its axis.
pub fn reflex(width: f64, reflex: f64) -> Scene {
    let mut s = Scene::new("reflex", 256, 128);
    let mut v = VesselSpec::straight([-200.0, 64.0], [456.0, 64.0], width, 0.3);
    v.reflex = reflex;
    s.vessels.push(v);
    s.topology = Topology {
        segments: 1,
        ..Default::default()
    };
    s
}

/// Horizontal vessel whose width grows linearly from `w0` to `w1` between
/// x = 16 and x = 240.
pub fn widening(w0: f64, w1: f64) -> Scene {
    let mut s = Scene::new("widening", 256, 128);
    s.vessels.push(VesselSpec {
        points: vec![[16.0, 64.0], [240.0, 64.0]],
        width_start: w0,
        width_end: w1,
        contrast: 0.3,
        reflex: 0.0,
    });
    s.topology = Topology {
        segments: 1,
        ..Default::default()
    };
    s
}

/// Horizontal trunk with one branch leaving at `angle` from x = 128.
pub fn y_branch(trunk_width: f64, branch_width: f64, angle: f64) -> Scene {
    let mut s = Scene::new("y-branch", 256, 256);
    s.vessels.push(VesselSpec::straight(
        [-200.0, 160.0],
        [456.0, 160.0],
        trunk_width,
        0.3,
    ));
    s.vessels.push(VesselSpec::straight(
        [128.0, 160.0],
        [128.0 + 300.0 * angle.cos(), 160.0 - 300.0 * angle.sin()],
        branch_width,
        0.3,
    ));
    s.topology = Topology {
        segments: 2,
        bifurcations: 1,
        crossings: 0,
    };
    s
}

/// Optic-disk scene: a bright disk of radius `radius` in a 256×256 frame,
/// optionally crossed by `bars` dark straight vessels through its centre.
pub fn disk(radius: f64, bars: usize) -> Scene {
    let mut s = Scene::new("disk", 256, 256);
    s.background = 0.35;
    let c = [131.0, 124.0];
    s.disk = Some(DiskSpec {
        center: c,
        radius,
        brightness: 0.45,
    });
    for i in 0..bars {
        let a = 0.35 + i as f64 * std::f64::consts::PI / bars as f64;
        let d = [a.cos(), a.sin()];
        s.vessels.push(VesselSpec::straight(
            [c[0] - 300.0 * d[0], c[1] - 300.0 * d[1]],
            [c[0] + 300.0 * d[0], c[1] + 300.0 * d[1]],
            7.0,
            0.3,
        ));
    }
    s
}

/// Small vascular tree: an optic disk, a trunk leaving it with two branches
/// (one up, one down), and an unrelated vessel crossing the trunk at right
/// angles before the first branch point.
///
/// Expected model: the trunk, the two branches and the two arms of the
/// crossing vessel (5 segments), 2 bifurcations and 1 crossing.
pub fn tree() -> Scene {
    let mut s = Scene::new("tree", 384, 384);
    s.background = 0.45;
    let c = [64.0, 192.0];
    s.disk = Some(DiskSpec {
        center: c,
        radius: 30.0,
        brightness: 0.35,
    });
    s.vessels
        .push(VesselSpec::straight(c, [350.0, 192.0], 9.0, 0.3));
    s.vessels.push(VesselSpec::straight(
        [150.0, -100.0],
        [150.0, 500.0],
        7.0,
        0.3,
    ));
    let d = std::f64::consts::FRAC_PI_4;
    s.vessels.push(VesselSpec::straight(
        [215.0, 192.0],
        [215.0 + 400.0 * d.cos(), 192.0 - 400.0 * d.sin()],
        6.0,
        0.3,
    ));
    s.vessels.push(VesselSpec::straight(
        [285.0, 192.0],
        [285.0 + 400.0 * d.cos(), 192.0 + 400.0 * d.sin()],
        6.0,
        0.3,
    ));
    s.topology = Topology {
        segments: 5,
        bifurcations: 2,
        crossings: 1,
    };
    s
}

/// Builds a scene by name with its default geometry.
pub fn by_name(name: &str) -> Option<Scene> {
    use std::f64::consts::PI;
    Some(match name {
        "straight" => straight(8.0, 0.3, 0.0),
        "crossing" => crossing(8.0, PI / 3.0),
        "parallel" => parallel(6.0, 3.0),
        "reflex" => reflex(12.0, 0.6),
        "widening" => widening(6.0, 14.0),
        "y-branch" => y_branch(9.0, 6.0, PI / 4.0),
        "tree" => tree(),
        "disk" => disk(60.0, 6),
        _ => return None,
    })
}
