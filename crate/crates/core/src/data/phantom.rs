//! Synthetic cubes whose lesion pixels differ from the background only inside
//! a window of bands.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{HsiCube, Mask};
use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Inclusive band range `[w0, w1]` carrying the lesion signal.
    pub window: [usize; 2],
    /// Lesion shift inside the window.
    pub delta: f64,
    /// Per-voxel noise standard deviation.
    pub sigma: f64,
    /// Inclusive range of ellipses per lesion.
    pub ellipses: [usize; 2],
    /// Accepted range of the lesion's pixel fraction.
    pub coverage: [f64; 2],
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            bands: 30,
            window: [8, 13],
            delta: 0.4,
            sigma: 0.1,
            ellipses: [1, 3],
            coverage: [0.05, 0.40],
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            bail!(Config, "phantom extents must be positive");
        }
        let [w0, w1] = self.window;
        if w0 > w1 || w1 >= self.bands {
            bail!(Config, "band window [{w0}, {w1}] outside [0, {})", self.bands);
        }
        if !(self.delta > 0.0) || !(self.sigma >= 0.0) {
            bail!(Config, "need delta > 0 and sigma >= 0");
        }
        if self.ellipses[0] == 0 || self.ellipses[0] > self.ellipses[1] {
            bail!(Config, "bad ellipse count range {:?}", self.ellipses);
        }
        let [c0, c1] = self.coverage;
        if !(0.0 < c0 && c0 <= c1 && c1 < 1.0) {
            bail!(Config, "bad coverage range {:?}", self.coverage);
        }
        Ok(())
    }

    pub fn in_window(&self, band: usize) -> bool {
        (self.window[0]..=self.window[1]).contains(&band)
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

fn lesion_mask(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Result<Mask> {
    let (w, h) = (cfg.width, cfg.height);
    let side = w.min(h) as f64;
    let total = (w * h) as f64;
    for _ in 0..10_000 {
        let k = rng.gen_range(cfg.ellipses[0]..=cfg.ellipses[1]);
        let shapes: Vec<Ellipse> = (0..k)
            .map(|_| {
                let theta = rng.gen_range(0.0..PI);
                Ellipse {
                    cx: rng.gen_range(0.0..w as f64),
                    cy: rng.gen_range(0.0..h as f64),
                    a: rng.gen_range(0.08..0.35) * side,
                    b: rng.gen_range(0.08..0.35) * side,
                    cos: theta.cos(),
                    sin: theta.sin(),
                }
            })
            .collect();
        let m = Mask::from_fn(w, h, |x, y| shapes.iter().any(|e| e.contains(x as f64 + 0.5, y as f64 + 0.5)));
        let frac = m.count() as f64 / total;
        if frac >= cfg.coverage[0] && frac <= cfg.coverage[1] {
            return Ok(m);
        }
    }
    bail!(Config, "no lesion with coverage in {:?} found for a {w}x{h} image", cfg.coverage)
}

/// Deterministic phantom number `index` of the configured family.
///
/// Every pixel follows a smooth per-image base spectrum plus independent
/// Gaussian noise; lesion pixels, the union of random ellipses, are shifted
/// by `delta` on the window bands only.
pub fn generate_phantom(cfg: &PhantomConfig, index: u64) -> Result<(HsiCube, Mask)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mask = lesion_mask(cfg, &mut rng)?;
    let l = cfg.bands as f64;
    let (a1, a2) = (rng.gen_range(0.05..0.15), rng.gen_range(0.0..0.05));
    let (p1, p2) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let base = |s: usize| {
        let t = s as f64 / l;
        0.5 + a1 * (2.0 * PI * t + p1).sin() + a2 * (4.0 * PI * t + p2).sin()
    };
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma validated");
    let mut cube = HsiCube::zeros(cfg.width, cfg.height, cfg.bands);
    for s in 0..cfg.bands {
        let b = base(s);
        let shift = if cfg.in_window(s) { cfg.delta } else { 0.0 };
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let n = if cfg.sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let v = b + n + if mask.get(x, y) { shift } else { 0.0 };
                cube.set(x, y, s, v as f32);
            }
        }
    }
    Ok((cube, mask))
}
