mod common;

use std::fs;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use spectr::data::{
    augment, decode_cube, decode_mask, encode_cube, encode_mask, generate_dataset, generate_phantom, read_cube,
    read_mask, write_cube, write_mask, AugmentConfig, Dataset, HsiCube, Mask, PhantomConfig, Split, Transform,
};

fn random_cube(w: usize, h: usize, l: usize, seed: u64) -> HsiCube {
    let mut r = rng(seed);
    HsiCube::new(w, h, l, (0..w * h * l).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn noiseless_phantom_differs_only_inside_the_window() {
    let cfg = PhantomConfig { sigma: 0.0, ellipses: [1, 1], ..PhantomConfig::default() };
    for index in 0..5 {
        let (cube, mask) = generate_phantom(&cfg, index).unwrap();
        let inside = (0..32 * 32).find(|&i| mask.get(i % 32, i / 32)).unwrap();
        let outside = (0..32 * 32).find(|&i| !mask.get(i % 32, i / 32)).unwrap();
        for s in 0..cfg.bands {
            let (a, b) = (cube.get(inside % 32, inside / 32, s), cube.get(outside % 32, outside / 32, s));
            if cfg.in_window(s) {
                assert!((a - b - 0.4).abs() < 1e-6);
            } else {
                assert_eq!(a.to_bits(), b.to_bits(), "band {s}");
            }
        }
    }
}

#[test]
fn phantoms_are_reproducible() {
    let cfg = PhantomConfig { seed: 9, ..PhantomConfig::default() };
    let a = generate_phantom(&cfg, 17).unwrap();
    let b = generate_phantom(&cfg, 17).unwrap();
    assert_eq!(encode_cube(&a.0), encode_cube(&b.0));
    assert_eq!(a.1, b.1);
    assert_ne!(encode_cube(&a.0), encode_cube(&generate_phantom(&cfg, 18).unwrap().0));
}

#[test]
fn lesion_contrast_is_delta_on_the_window_only() {
    let cfg = PhantomConfig::default();
    let n = 100;
    let mut diff = vec![0.0f64; cfg.bands];
    for index in 0..n {
        let (cube, mask) = generate_phantom(&cfg, index).unwrap();
        let frac = mask.count() as f64 / 1024.0;
        assert!((cfg.coverage[0]..=cfg.coverage[1]).contains(&frac));
        for (s, d) in diff.iter_mut().enumerate() {
            let (mut lesion, mut back) = ((0.0, 0.0), (0.0, 0.0));
            for y in 0..32 {
                for x in 0..32 {
                    let v = cube.get(x, y, s) as f64;
                    let acc = if mask.get(x, y) { &mut lesion } else { &mut back };
                    acc.0 += v;
                    acc.1 += 1.0;
                }
            }
            *d += (lesion.0 / lesion.1 - back.0 / back.1) / n as f64;
        }
    }
    let tol = 3.0 * cfg.sigma / (n as f64).sqrt();
    for (s, d) in diff.iter().enumerate() {
        let want = if cfg.in_window(s) { cfg.delta } else { 0.0 };
        assert!((d - want).abs() < tol, "band {s}: {d}");
    }
}

#[test]
fn invalid_window_is_a_config_error() {
    let cfg = PhantomConfig { window: [8, 30], ..PhantomConfig::default() };
    assert!(generate_phantom(&cfg, 0).is_err());
    let cfg = PhantomConfig { delta: 0.0, ..PhantomConfig::default() };
    assert!(generate_phantom(&cfg, 0).is_err());
}

#[test]
fn identity_transform_and_double_flip() {
    let (cube, mask) = generate_phantom(&PhantomConfig::default(), 3).unwrap();
    let id = Transform::default();
    assert_eq!(id.apply(&cube, &mask), (cube.clone(), mask.clone()));
    let flip = Transform { hflip: true, ..Transform::default() };
    let (c1, m1) = flip.apply(&cube, &mask);
    assert_ne!(m1, mask);
    let (c2, m2) = flip.apply(&c1, &m1);
    assert_eq!(m2, mask);
    assert_eq!(encode_cube(&c2), encode_cube(&cube));
    let vflip = Transform { vflip: true, ..Transform::default() };
    let (c1, m1) = vflip.apply(&cube, &mask);
    assert_eq!(vflip.apply(&c1, &m1).1, mask);
}

#[test]
fn rotation_keeps_constant_spectra_in_the_interior() {
    let (w, h, l) = (16, 16, 5);
    let spectrum = [0.3f32, 1.7, -0.2, 0.9, 4.0];
    let mut cube = HsiCube::zeros(w, h, l);
    for s in 0..l {
        cube.band_mut(s).fill(spectrum[s]);
    }
    let mask = Mask::from_fn(w, h, |_, _| true);
    let mut r = rng(4);
    for _ in 0..20 {
        let t = Transform { degrees: r.gen_range(0.0..90.0), hflip: r.gen_bool(0.5), vflip: r.gen_bool(0.5) };
        let (out, m) = t.apply(&cube, &mask);
        let c = (w as f64 - 1.0) / 2.0;
        for y in 0..h {
            for x in 0..w {
                let rr = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
                if rr < c {
                    assert!(m.get(x, y));
                    for s in 0..l {
                        assert_eq!(out.get(x, y, s), spectrum[s]);
                    }
                }
            }
        }
    }
}

#[test]
fn augmentation_draws_are_seeded() {
    let (cube, mask) = generate_phantom(&PhantomConfig::default(), 1).unwrap();
    let cfg = AugmentConfig { rotation_prob: 1.0, ..AugmentConfig::default() };
    let a = augment(&cube, &mask, &cfg, &mut rng(5));
    let b = augment(&cube, &mask, &cfg, &mut rng(5));
    assert_eq!(a, b);
    assert_eq!(a.0.bands(), cube.bands());
}

#[test]
fn cube_header_layout() {
    let cube = random_cube(2, 3, 4, 6);
    let bytes = encode_cube(&cube);
    assert_eq!(&bytes[..16], b"HSC1\x02\x00\x00\x00\x03\x00\x00\x00\x04\x00\x00\x00");
    assert_eq!(bytes.len(), 16 + 4 * 2 * 3 * 4);
    assert!(decode_cube(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(decode_cube(&longer).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_cube(&bad).is_err());
}

#[test]
fn files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cube = random_cube(5, 7, 3, 7);
    let mask = common::random_mask(5, 7, 0.5, &mut rng(8));
    write_cube(dir.path().join("c.hsc"), &cube).unwrap();
    write_mask(dir.path().join("m.hsm"), &mask).unwrap();
    assert_eq!(encode_cube(&read_cube(dir.path().join("c.hsc")).unwrap()), encode_cube(&cube));
    assert_eq!(read_mask(dir.path().join("m.hsm")).unwrap(), mask);
    assert_eq!(&encode_mask(&mask)[..12], b"HSM1\x05\x00\x00\x00\x07\x00\x00\x00");
}

#[test]
fn split_is_disjoint_and_seeded() {
    let a = Split::seeded(250, 3, PhantomConfig::default());
    assert_eq!((a.train.len(), a.test.len()), (200, 50));
    assert!(a.train.iter().all(|i| !a.test.contains(i)));
    let mut all: Vec<u64> = a.train.iter().chain(&a.test).copied().collect();
    all.sort();
    assert_eq!(all, (0..250).collect::<Vec<_>>());
    assert_eq!(a, Split::seeded(250, 3, PhantomConfig::default()));
    assert_ne!(a.train, Split::seeded(250, 4, PhantomConfig::default()).train);
}

#[test]
fn dataset_directory_is_reproducible() {
    let cfg = PhantomConfig { width: 16, height: 16, bands: 16, window: [4, 7], ..PhantomConfig::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(a.path(), 10, &cfg, false).unwrap();
    generate_dataset(b.path(), 10, &cfg, false).unwrap();
    for sub in ["cubes", "masks"] {
        let mut names: Vec<_> = fs::read_dir(a.path().join(sub)).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 10);
        for n in names {
            assert_eq!(fs::read(a.path().join(sub).join(&n)).unwrap(), fs::read(b.path().join(sub).join(&n)).unwrap());
        }
    }
    assert_eq!(fs::read(a.path().join("split.json")).unwrap(), fs::read(b.path().join("split.json")).unwrap());
    assert!(generate_dataset(a.path(), 10, &cfg, false).is_err());
    generate_dataset(a.path(), 10, &cfg, true).unwrap();

    let ds = Dataset::open(a.path()).unwrap();
    let train = ds.train().unwrap();
    assert_eq!(train.len(), 8);
    let (cube, mask) = generate_phantom(&cfg, train[0].id).unwrap();
    assert_eq!(encode_cube(&train[0].cube), encode_cube(&cube));
    assert_eq!(train[0].mask, mask);
}

proptest! {
    #[test]
    fn cube_and_mask_codecs_round_trip(w in 1usize..6, h in 1usize..6, l in 1usize..5, seed in any::<u64>()) {
        let cube = random_cube(w, h, l, seed);
        let back = decode_cube(&encode_cube(&cube)).unwrap();
        prop_assert_eq!(encode_cube(&back), encode_cube(&cube));
        let mask = common::random_mask(w, h, 0.3, &mut rng(seed));
        prop_assert_eq!(decode_mask(&encode_mask(&mask)).unwrap(), mask);
    }

    #[test]
    fn flips_move_whole_spectra(seed in any::<u64>(), hflip in any::<bool>(), vflip in any::<bool>()) {
        let cube = random_cube(6, 4, 3, seed);
        let mask = Mask::zeros(6, 4);
        let (out, _) = Transform { degrees: 0.0, hflip, vflip }.apply(&cube, &mask);
        for y in 0..4 {
            for x in 0..6 {
                let (sx, sy) = (if hflip { 5 - x } else { x }, if vflip { 3 - y } else { y });
                for s in 0..3 {
                    prop_assert_eq!(out.get(x, y, s), cube.get(sx, sy, s));
                }
            }
        }
    }
}
