//! Paints a model over its source image.

use orientrace::raster::{save_rgb8, Image2D, RasterError};
use orientrace::vasculature::JunctionKind;

use crate::doc::ModelDocument;

pub const EDGE: [u8; 3] = [255, 0, 0];
pub const CENTERLINE: [u8; 3] = [0, 255, 255];
pub const BIFURCATION: [u8; 3] = [255, 255, 0];
pub const CROSSING: [u8; 3] = [255, 0, 0];

pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    /// Grey background stretched to the full 8-bit range.
    pub fn from_image(f: &Image2D) -> Self {
        let lo = f.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let rgb = f
            .data()
            .iter()
            .flat_map(|&v| {
                let g = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
                [g, g, g]
            })
            .collect();
        Self {
            width: f.width(),
            height: f.height(),
            rgb,
        }
    }

    pub fn put(&mut self, x: f64, y: f64, c: [u8; 3]) {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return;
        }
        let i = 3 * (yi as usize * self.width + xi as usize);
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    pub fn line(&mut self, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
        let n = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.put(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), c);
        }
    }

    pub fn dot(&mut self, p: [f64; 2], r: f64, c: [u8; 3]) {
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    self.put(p[0] + dx as f64, p[1] + dy as f64, c);
                }
            }
        }
    }

    pub fn save(self, path: &std::path::Path) -> Result<(), RasterError> {
        save_rgb8(self.width, self.height, self.rgb, path)
    }
}

pub fn draw_model(canvas: &mut Canvas, doc: &ModelDocument) {
    for s in &doc.segments {
        for w in s.points.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            if let (Some(ux), Some(uy), Some(vx), Some(vy)) = (p.ux, p.uy, p.vx, p.vy) {
                if let (Some(qux), Some(quy), Some(qvx), Some(qvy)) = (q.ux, q.uy, q.vx, q.vy) {
                    canvas.line([ux, uy], [qux, quy], EDGE);
                    canvas.line([vx, vy], [qvx, qvy], EDGE);
                }
            }
            canvas.line([p.cx, p.cy], [q.cx, q.cy], CENTERLINE);
        }
    }
    for j in &doc.junctions {
        let c = match j.kind {
            JunctionKind::Bifurcation => BIFURCATION,
            JunctionKind::Crossing => CROSSING,
        };
        canvas.dot([j.x, j.y], 3.0, c);
    }
}
