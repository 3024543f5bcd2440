//! Overlap and boundary-distance metrics on binary masks.
//!
//! Conventions for empty masks: both empty gives DSC = IoU = 1 and HD = 0;
//! exactly one empty gives DSC = IoU = 0 and HD = the image diagonal.

use crate::data::Mask;
use crate::error::{bail, Result};

fn counts(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        bail!(Dimension, "mask sizes differ: {}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height());
    }
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == 1 && y == 1).count();
    Ok((inter, a.count(), b.count()))
}

/// `2 |A ∩ B| / (|A| + |B|)`.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (na + nb) as f64)
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    let union = na + nb - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / union as f64)
}

/// Foreground pixels with a 4-neighbour outside the mask (the image border
/// counts as outside).
pub fn boundary(m: &Mask) -> Vec<(usize, usize)> {
    let (w, h) = (m.width(), m.height());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !m.get(x - 1, y)
                || !m.get(x + 1, y)
                || !m.get(x, y - 1)
                || !m.get(x, y + 1);
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// Stand-in for "no seed"; large enough to lose against any real distance
/// yet finite so the parabola intersections stay well defined.
const FAR: f64 = 1e20;

/// Exact 1-D squared distance transform: `out[q] = min_p (q - p)^2 + f[p]`,
/// computed as the lower envelope of parabolas.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let key = |q: usize| f[q] + (q * q) as f64;
    for q in 1..n {
        let mut s = (key(q) - key(v[k])) / (2 * (q - v[k])) as f64;
        while s <= z[k] {
            k -= 1;
            s = (key(q) - key(v[k])) / (2 * (q - v[k])) as f64;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest seed,
/// row-major `y * w + x`.
pub fn squared_distance_transform(w: usize, h: usize, seeds: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![FAR; w * h];
    for &(x, y) in seeds {
        grid[y * w + x] = 0.0;
    }
    let n = w.max(h);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; n];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut res[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = res[y];
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        row.copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&row, &mut res[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&res[..w]);
    }
    grid
}

/// Symmetric Hausdorff distance between the boundaries of two masks.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<f64> {
    counts(a, b)?;
    let (w, h) = (a.width(), a.height());
    let (ba, bb) = (boundary(a), boundary(b));
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(((w * w + h * h) as f64).sqrt()),
        _ => {}
    }
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        let dt = squared_distance_transform(w, h, to);
        from.iter().map(|&(x, y)| dt[y * w + x]).fold(0.0f64, f64::max)
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: u64,
    pub dsc: f64,
    pub iou: f64,
    pub hd: f64,
}

impl ImageMetrics {
    pub fn compute(id: u64, pred: &Mask, truth: &Mask) -> Result<Self> {
        Ok(Self { id, dsc: dsc(pred, truth)?, iou: iou(pred, truth)?, hd: hausdorff(pred, truth)? })
    }
}

/// Per-image metrics with DSC aggregates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl MetricReport {
    pub fn column(&self, f: impl Fn(&ImageMetrics) -> f64) -> Vec<f64> {
        self.images.iter().map(f).collect()
    }

    pub fn mean_dsc(&self) -> f64 {
        mean(&self.column(|m| m.dsc))
    }

    pub fn median_dsc(&self) -> f64 {
        median(self.column(|m| m.dsc))
    }

    pub fn max_dsc(&self) -> f64 {
        self.column(|m| m.dsc).into_iter().fold(f64::NAN, f64::max)
    }

    pub fn min_dsc(&self) -> f64 {
        self.column(|m| m.dsc).into_iter().fold(f64::NAN, f64::min)
    }

    /// `id,dsc,iou,hd` per image followed by `mean`, `median`, `max` and
    /// `min` rows aggregating each column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,dsc,iou,hd\n");
        for m in &self.images {
            s += &format!("{},{},{},{}\n", m.id, m.dsc, m.iou, m.hd);
        }
        let cols = [self.column(|m| m.dsc), self.column(|m| m.iou), self.column(|m| m.hd)];
        let aggs: [(&str, fn(&[f64]) -> f64); 4] = [
            ("mean", mean),
            ("median", |v| median(v.to_vec())),
            ("max", |v| v.iter().copied().fold(f64::NAN, f64::max)),
            ("min", |v| v.iter().copied().fold(f64::NAN, f64::min)),
        ];
        for (name, f) in aggs {
            s += &format!("{name},{},{},{}\n", f(&cols[0]), f(&cols[1]), f(&cols[2]));
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
