//! Online spatial augmentation. The same transform is applied to every band,
//! so spectra are moved between pixels but never resampled along the band
//! axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cube::{HsiCube, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_prob: f64,
    /// Rotation angles are drawn from `U(0, max_degrees)`.
    pub max_degrees: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotation_prob: 0.2, max_degrees: 90.0, hflip_prob: 0.2, vflip_prob: 0.2 }
    }
}

/// Rotation (counter-clockwise, about the image center) followed by flips.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Transform {
    pub degrees: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl Transform {
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let degrees = if rng.gen_bool(cfg.rotation_prob) { rng.gen_range(0.0..cfg.max_degrees) } else { 0.0 };
        Self { degrees, hflip: rng.gen_bool(cfg.hflip_prob), vflip: rng.gen_bool(cfg.vflip_prob) }
    }

    pub fn is_identity(&self) -> bool {
        self.degrees == 0.0 && !self.hflip && !self.vflip
    }

    /// Source position of output pixel `(x, y)`.
    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let x = if self.hflip { w - 1 - x } else { x };
        let y = if self.vflip { h - 1 - y } else { y };
        if self.degrees == 0.0 {
            return (x as f64, y as f64);
        }
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (s, c) = self.degrees.to_radians().sin_cos();
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    }

    pub fn apply(&self, cube: &HsiCube, mask: &Mask) -> (HsiCube, Mask) {
        if self.is_identity() {
            return (cube.clone(), mask.clone());
        }
        let (w, h) = (cube.width(), cube.height());
        let mut out = HsiCube::zeros(w, h, cube.bands());
        let mut out_mask = Mask::zeros(w, h);
        let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, w, h);
                // a small tolerance keeps exact border hits inside
                if sx < -1e-9 || sy < -1e-9 || sx > wf + 1e-9 || sy > hf + 1e-9 {
                    continue;
                }
                let (sx, sy) = (sx.clamp(0.0, wf), sy.clamp(0.0, hf));
                let nx = (sx.round() as usize).min(w - 1);
                let ny = (sy.round() as usize).min(h - 1);
                out_mask.set(x, y, mask.get(nx, ny));
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
                for s in 0..cube.bands() {
                    let band = cube.band(s);
                    let at = |xx: usize, yy: usize| band[yy * w + xx];
                    let top = lerp(at(x0, y0), at(x1, y0), fx);
                    let bottom = lerp(at(x0, y1), at(x1, y1), fx);
                    out.set(x, y, s, lerp(top, bottom, fy));
                }
            }
        }
        (out, out_mask)
    }
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Draws a transform and applies it.
pub fn augment<R: Rng>(cube: &HsiCube, mask: &Mask, cfg: &AugmentConfig, rng: &mut R) -> (HsiCube, Mask) {
    Transform::sample(cfg, rng).apply(cube, mask)
}
