mod common;

use common::rng;
use proptest::prelude::*;
use spectr::gradcheck::{self, random_tensor};
use spectr::spectral_norm::{spectral_normalize, SpectralNormParams};
use spectr::Tensor;

/// Mean and variance of band `s`, group `g` of a `[W, H, L, C]` map.
fn group_stats(y: &Tensor<f64>, s: usize, g: usize, groups: usize) -> (f64, f64) {
    let [w, h, _, c] = <[usize; 4]>::try_from(y.shape()).unwrap();
    let per = c / groups;
    let mut vals = Vec::new();
    for x in 0..w {
        for yy in 0..h {
            for ch in g * per..(g + 1) * per {
                vals.push(y.get(&[x, yy, s, ch]));
            }
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn output_is_standardized_per_band_and_group() {
    let mut r = rng(21);
    for _ in 0..10 {
        let x = random_tensor(&[4, 4, 3, 8], &mut r, 3.0);
        let y = spectral_normalize(&x, &SpectralNormParams::new(3, 8, 4, 1e-5).unwrap()).unwrap();
        for s in 0..3 {
            for g in 0..4 {
                let (m, v) = group_stats(&y, s, g, 4);
                assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3, "band {s} group {g}: {m} {v}");
            }
        }
    }
}

#[test]
fn perturbing_one_band_leaves_the_others_bit_identical() {
    let mut r = rng(22);
    let x = random_tensor(&[4, 4, 3, 8], &mut r, 1.0);
    let params = SpectralNormParams::new(3, 8, 4, 1e-5).unwrap();
    let base = spectral_normalize(&x, &params).unwrap();
    let mut bumped = x.clone();
    let off = bumped.offset(&[2, 1, 1, 5]);
    bumped.data_mut()[off] += 0.7;
    let moved = spectral_normalize(&bumped, &params).unwrap();
    for xi in 0..4 {
        for yi in 0..4 {
            for s in 0..3 {
                for c in 0..8 {
                    let (a, b) = (base.get(&[xi, yi, s, c]), moved.get(&[xi, yi, s, c]));
                    if s == 1 {
                        continue;
                    }
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
    assert_ne!(base, moved);
}

#[test]
fn gradients_match_finite_differences() {
    let rep = gradcheck::spectral_norm_suite(&mut rng(23)).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

proptest! {
    #[test]
    fn shifting_a_band_does_not_change_its_output(seed in any::<u64>(), band in 0usize..3, c in -4.0f64..4.0) {
        let x = random_tensor(&[4, 4, 3, 8], &mut rng(seed), 1.0);
        let params = SpectralNormParams::new(3, 8, 4, 1e-5).unwrap();
        let mut shifted = x.clone();
        for xi in 0..4 {
            for yi in 0..4 {
                for ch in 0..8 {
                    let o = shifted.offset(&[xi, yi, band, ch]);
                    shifted.data_mut()[o] += c;
                }
            }
        }
        let a = spectral_normalize(&x, &params).unwrap();
        let b = spectral_normalize(&shifted, &params).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }
}
