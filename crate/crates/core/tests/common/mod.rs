//! Oracles shared by the integration tests. Deliberately naive.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectr::data::Mask;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Euclidean projection onto the simplex by enumerating every candidate
/// support and keeping the one satisfying the KKT conditions.
pub fn simplex_projection(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    for set in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| set & (1 << i) != 0).collect();
        let tau = (idx.iter().map(|&i| x[i]).sum::<f64>() - 1.0) / idx.len() as f64;
        let inside = idx.iter().all(|&i| x[i] - tau > 0.0);
        let outside = (0..n).filter(|i| set & (1 << i) == 0).all(|i| x[i] - tau <= 1e-12);
        if inside && outside {
            return (0..n).map(|i| if set & (1 << i) != 0 { x[i] - tau } else { 0.0 }).collect();
        }
    }
    unreachable!("the projection always exists")
}

pub fn random_mask(w: usize, h: usize, p: f64, rng: &mut ChaCha8Rng) -> Mask {
    Mask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

fn boundary_points(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if on(x, y) && !(on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// All-pairs Hausdorff distance between mask boundaries.
pub fn hausdorff_brute(a: &Mask, b: &Mask) -> f64 {
    let (ba, bb) = (boundary_points(a), boundary_points(b));
    match (ba.is_empty(), bb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => {
            return ((a.width() * a.width() + a.height() * a.height()) as f64).sqrt()
        }
        _ => {}
    }
    let directed = |p: &[(i64, i64)], q: &[(i64, i64)]| {
        p.iter()
            .map(|&(x, y)| q.iter().map(|&(u, v)| (x - u) * (x - u) + (y - v) * (y - v)).min().unwrap())
            .max()
            .unwrap()
    };
    (directed(&ba, &bb).max(directed(&bb, &ba)) as f64).sqrt()
}

/// α-entmax by plain bisection on the threshold, 200 halvings.
pub fn entmax_bisect(x: &[f64], alpha: f64) -> Vec<f64> {
    let z: Vec<f64> = x.iter().map(|v| (alpha - 1.0) * v).collect();
    let top = z.iter().cloned().fold(f64::MIN, f64::max);
    let probs = |tau: f64| -> Vec<f64> { z.iter().map(|v| (v - tau).max(0.0).powf(1.0 / (alpha - 1.0))).collect() };
    let (mut lo, mut hi) = (top - 1.0, top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if probs(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p = probs(0.5 * (lo + hi));
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}
