use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectr::autodiff::{BandFilters, Graph};
use spectr::gradcheck::{self, check_gradients, random_tensor, FdOptions};
use spectr::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a.get(&[i, p]) * b.get(&[p, j]);
            }
        }
    }
    c
}

/// Direct same-padded convolution over `[W,H,L,Cin]`; `kl` is 1 for band
/// kernels and 3 for volumetric ones. `per_band` selects `[L,Cout,Cin,3,3]`.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], kl: usize, per_band: bool) -> Vec<f64> {
    let [w, h, l, cin] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let cout = b.len();
    let mut out = vec![0.0; w * h * l * cout];
    let half = (kl / 2) as isize;
    for xi in 0..w {
        for yi in 0..h {
            for zi in 0..l {
                for co in 0..cout {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for kx in 0..3 {
                            for ky in 0..3 {
                                for kz in 0..kl {
                                    let sx = xi as isize + kx as isize - 1;
                                    let sy = yi as isize + ky as isize - 1;
                                    let sz = zi as isize + kz as isize - half;
                                    if sx < 0 || sy < 0 || sz < 0 || sx >= w as isize || sy >= h as isize || sz >= l as isize {
                                        continue;
                                    }
                                    let xv = x.get(&[sx as usize, sy as usize, sz as usize, ci]);
                                    let kv = if per_band {
                                        k.get(&[zi, co, ci, kx, ky])
                                    } else if kl == 1 {
                                        k.get(&[co, ci, kx, ky])
                                    } else {
                                        k.get(&[co, ci, kx, ky, kz])
                                    };
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((xi * h + yi) * l + zi) * cout + co] = acc;
                }
            }
        }
    }
    out
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn matmul_examples() {
    let mut g = Graph::<f64>::new();
    let i2 = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.input(t(&[1, 2], &[1.0, 0.0]));
    let b = g.input(t(&[2, 1], &[0.0, 1.0]));
    let p = g.matmul(a, b).unwrap();
    assert_eq!(g.value(p).data(), &[0.0]);

    assert!(g.matmul(a, a).is_err());
}

#[test]
fn matmul_matches_triple_loop_in_f32() {
    let mut r = rng(1);
    for _ in 0..10 {
        let a = random_tensor(&[3, 4], &mut r, 1.0);
        let b = random_tensor(&[4, 2], &mut r, 1.0);
        let want = matmul_oracle(&a, &b);
        let mut g = Graph::<f32>::new();
        let (va, vb) = (g.input(a.cast()), g.input(b.cast()));
        let p = g.matmul(va, vb).unwrap();
        let got: Vec<f64> = g.value(p).data().iter().map(|&v| v as f64).collect();
        assert!(max_abs(&got, &want) < 1e-6);
    }
}

#[test]
fn band_conv_identity_and_constant() {
    let mut r = rng(2);
    let x = random_tensor(&[5, 4, 3, 1], &mut r, 1.0);
    let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let mut g = Graph::new();
    let (vx, vk, vb) = (g.input(x.clone()), g.input(k), g.input(Tensor::zeros(&[1])));
    let y = g.band_conv2d(vx, vk, vb, BandFilters::Shared).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let c: f64 = 0.75;
    let x = Tensor::<f64>::full(&[5, 5, 2, 1], c);
    let mut g = Graph::new();
    let (vx, vk, vb) = (g.input(x), g.input(Tensor::full(&[1, 1, 3, 3], 1.0)), g.input(Tensor::zeros(&[1])));
    let y = g.band_conv2d(vx, vk, vb, BandFilters::Shared).unwrap();
    for z in 0..2 {
        assert!((g.value(y).get(&[2, 2, z, 0]) - 9.0 * c).abs() < 1e-12);
    }
    // corner sees a 2x2 neighbourhood
    assert!((g.value(y).get(&[0, 0, 0, 0]) - 4.0 * c).abs() < 1e-12);
}

#[test]
fn band_conv_matches_direct_oracle() {
    let mut r = rng(3);
    for per_band in [false, true] {
        let x = random_tensor(&[6, 5, 4, 3], &mut r, 1.0);
        let kshape: &[usize] = if per_band { &[4, 2, 3, 3, 3] } else { &[2, 3, 3, 3] };
        let k = random_tensor(kshape, &mut r, 1.0);
        let b = random_tensor(&[2], &mut r, 1.0);
        let want = conv_oracle(&x, &k, b.data(), 1, per_band);
        let mut g = Graph::<f32>::new();
        let (vx, vk, vb) = (g.input(x.cast()), g.input(k.cast()), g.input(b.cast()));
        let mode = if per_band { BandFilters::PerBand } else { BandFilters::Shared };
        let y = g.band_conv2d(vx, vk, vb, mode).unwrap();
        let got: Vec<f64> = g.value(y).data().iter().map(|&v| v as f64).collect();
        assert!(max_abs(&got, &want) < 1e-5, "per_band={per_band}");
    }
}

#[test]
fn band_conv_does_not_mix_bands() {
    let mut r = rng(4);
    let x = random_tensor(&[4, 4, 3, 2], &mut r, 1.0);
    let k = random_tensor(&[2, 2, 3, 3], &mut r, 1.0);
    let mut x2 = x.clone();
    for xi in 0..4 {
        for yi in 0..4 {
            let o = x2.offset(&[xi, yi, 1, 0]);
            x2.data_mut()[o] += 1.0;
        }
    }
    let run = |x: Tensor<f64>| {
        let mut g = Graph::new();
        let (vx, vk, vb) = (g.input(x), g.input(k.clone()), g.input(Tensor::zeros(&[2])));
        let y = g.band_conv2d(vx, vk, vb, BandFilters::Shared).unwrap();
        g.value(y).clone()
    };
    let (a, b) = (run(x), run(x2));
    for xi in 0..4 {
        for yi in 0..4 {
            for c in 0..2 {
                assert_eq!(a.get(&[xi, yi, 0, c]), b.get(&[xi, yi, 0, c]));
                assert_eq!(a.get(&[xi, yi, 2, c]), b.get(&[xi, yi, 2, c]));
            }
        }
    }
}

#[test]
fn conv3d_identity_constant_and_oracle() {
    let mut r = rng(5);
    let x = random_tensor(&[3, 4, 5, 1], &mut r, 1.0);
    let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
    k.data_mut()[13] = 1.0;
    let mut g = Graph::new();
    let (vx, vk, vb) = (g.input(x.clone()), g.input(k), g.input(Tensor::zeros(&[1])));
    let y = g.conv3d(vx, vk, vb).unwrap();
    assert_eq!(g.value(y).data(), x.data());

    let c: f64 = -1.25;
    let mut g = Graph::new();
    let vx = g.input(Tensor::full(&[4, 4, 4, 1], c));
    let vk = g.input(Tensor::full(&[1, 1, 3, 3, 3], 1.0));
    let vb = g.input(Tensor::zeros(&[1]));
    let y = g.conv3d(vx, vk, vb).unwrap();
    assert!((g.value(y).get(&[1, 2, 1, 0]) - 27.0 * c).abs() < 1e-12);

    let x = random_tensor(&[4, 3, 5, 2], &mut r, 1.0);
    let k = random_tensor(&[3, 2, 3, 3, 3], &mut r, 1.0);
    let b = random_tensor(&[3], &mut r, 1.0);
    let want = conv_oracle(&x, &k, b.data(), 3, false);
    let mut g = Graph::<f32>::new();
    let (vx, vk, vb) = (g.input(x.cast()), g.input(k.cast()), g.input(b.cast()));
    let y = g.conv3d(vx, vk, vb).unwrap();
    let got: Vec<f64> = g.value(y).data().iter().map(|&v| v as f64).collect();
    assert!(max_abs(&got, &want) < 1e-5);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.input(Tensor::zeros(&[2, 2, 2, 3]));
    let k = g.input(Tensor::zeros(&[1, 2, 3, 3]));
    let b = g.input(Tensor::zeros(&[1]));
    assert!(g.band_conv2d(x, k, b, BandFilters::Shared).is_err());
    let k3 = g.input(Tensor::zeros(&[1, 2, 3, 3, 3]));
    assert!(g.conv3d(x, k3, b).is_err());
}

#[test]
fn pooling_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.input(t(&[2, 2, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.maxpool3(x).unwrap();
    assert_eq!(g.value(p).data(), &[4.0]);

    let x = g.input(Tensor::zeros(&[2, 2, 15, 1]));
    let p = g.maxpool3(x).unwrap();
    assert_eq!(g.shape(p), &[1, 1, 8, 1]);

    let mut ladder = vec![60];
    while ladder.len() < 4 {
        ladder.push(spectr::autodiff::pooled(*ladder.last().unwrap()));
    }
    assert_eq!(ladder, vec![60, 30, 15, 8]);

    let c = Tensor::full(&[6, 5, 15, 3], 0.4);
    let x = g.input(c.clone());
    let p = g.maxpool3(x).unwrap();
    let u = g.upsample3_to(p, [6, 5, 15]).unwrap();
    assert_eq!(g.value(u), &c);
    assert!(g.upsample3_to(p, [6, 5, 17]).is_err());
}

#[test]
fn maxpool_ties_route_to_lowest_index() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::full(&[2, 2, 2, 1], 1.0));
    let p = g.maxpool3(x).unwrap();
    let l = g.sum(p);
    let grads = g.backward(l).unwrap();
    let mut want = vec![0.0; 8];
    want[0] = 1.0;
    assert_eq!(grads.get(x).unwrap(), want.as_slice());
}

#[test]
fn two_layer_network_matches_finite_differences() {
    let mut r = rng(6);
    let params = vec![
        random_tensor(&[6, 5], &mut r, 1.0),
        random_tensor(&[5], &mut r, 0.5),
        random_tensor(&[5, 3], &mut r, 1.0),
        random_tensor(&[3], &mut r, 0.5),
    ];
    let x = random_tensor(&[4, 6], &mut r, 1.0);
    let rep = check_gradients(
        "mlp",
        &params,
        |g, v| {
            let xi = g.input(x.clone());
            let h = g.linear(xi, v[0], Some(v[1]))?;
            let h = g.sigmoid(h);
            let o = g.linear(h, v[2], Some(v[3]))?;
            let sq = g.mul(o, o)?;
            Ok(g.sum(sq))
        },
        FdOptions::new(1e-3, 1e-3, None),
        &mut r,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn every_primitive_passes_finite_differences() {
    let mut r = rng(7);
    let reports = gradcheck::primitive_suite(&mut r).unwrap();
    for rep in &reports {
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.checked > 0);
    }
    assert!(reports.len() >= 20);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut r = rng(8);
    let w = random_tensor(&[4, 3], &mut r, 1.0);
    let x = random_tensor(&[2, 4], &mut r, 1.0);
    let grad_of = |which: u8| {
        let mut g = Graph::new();
        let vw = g.param(w.clone());
        let vx = g.input(x.clone());
        let y = g.matmul(vx, vw).unwrap();
        let a = g.relu(y);
        let la = g.sum(a);
        let b = g.sigmoid(y);
        let lb = g.mean(b);
        let loss = match which {
            0 => la,
            1 => lb,
            _ => g.add(la, lb).unwrap(),
        };
        g.backward(loss).unwrap().get(vw).unwrap().to_vec()
    };
    let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..ga.len() {
        assert!((ga[i] + gb[i] - gs[i]).abs() < 1e-12);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut r = rng(9);
    let x: Tensor<f32> = random_tensor(&[8, 8, 6, 4], &mut r, 1.0).cast();
    let k: Tensor<f32> = random_tensor(&[4, 4, 3, 3, 3], &mut r, 1.0).cast();
    let run = || {
        let mut g = Graph::<f32>::new();
        let (vx, vk, vb) = (g.input(x.clone()), g.input(k.clone()), g.input(Tensor::zeros(&[4])));
        let y = g.conv3d(vx, vk, vb).unwrap();
        let p = g.maxpool3(y).unwrap();
        g.value(p).clone()
    };
    assert_eq!(run(), run());
}
