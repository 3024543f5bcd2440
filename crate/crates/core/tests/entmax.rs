mod common;

use common::{rng, simplex_projection};
use proptest::prelude::*;
use rand::Rng;
use spectr::entmax::{alpha_of_raw, entmax_alpha_grad, entmax_forward, entmax_input_vjp, softmax_forward};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=8)
}

#[test]
fn sparsemax_matches_projection_oracle() {
    let mut r = rng(11);
    for _ in 0..1000 {
        let n = r.gen_range(1..=8);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let got = entmax_forward(&x, 2.0).unwrap().p;
        let want = simplex_projection(&x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{x:?}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn vjp_at_uniform_pair() {
    let res = entmax_forward(&[0.0f64, 0.0], 2.0).unwrap();
    let v = entmax_input_vjp(&res, 2.0, &[1.0, 0.0]);
    assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] + 0.5).abs() < 1e-12);
    let res = entmax_forward(&[2.0f64, 0.0], 2.0).unwrap();
    assert_eq!(entmax_input_vjp(&res, 2.0, &[0.3, -1.2]), vec![0.0, 0.0]);
}

#[test]
fn alpha_gradient_vanishes_at_symmetric_and_saturated_points() {
    for alpha in [1.2, 1.5, 1.9] {
        assert!(entmax_alpha_grad(&[0.7f64; 4], alpha, &[1.0, -2.0, 0.5, 3.0]).unwrap().abs() < 1e-12);
    }
    assert_eq!(entmax_alpha_grad(&[2.0, 0.0], 1.9, &[1.0, 2.0]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn output_is_on_the_simplex(x in scores(), alpha in 1.01f64..=2.0) {
        let res = entmax_forward(&x, alpha).unwrap();
        prop_assert!(res.p.iter().all(|&p| p >= 0.0));
        prop_assert!((res.p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for (i, &p) in res.p.iter().enumerate() {
            prop_assert_eq!(p > 0.0, res.support.contains(&i));
        }
    }

    #[test]
    fn permutation_equivariant(x in scores(), alpha in 1.05f64..=2.0, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.shuffle(&mut rng(seed));
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let a = entmax_forward(&x, alpha).unwrap().p;
        let b = entmax_forward(&px, alpha).unwrap().p;
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b[k] - a[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn shift_invariant(x in scores(), alpha in 1.05f64..=2.0, c in -5.0f64..5.0) {
        let a = entmax_forward(&x, alpha).unwrap().p;
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = entmax_forward(&shifted, alpha).unwrap().p;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_sums_to_one(x in scores()) {
        let p = softmax_forward(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn logistic_alpha_stays_inside(raw in -30.0f64..30.0) {
        let a = alpha_of_raw(raw);
        prop_assert!(a > 1.0 && a < 2.0);
    }
}
