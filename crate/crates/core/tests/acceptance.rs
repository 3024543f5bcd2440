//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. `SPECTR_ACCEPTANCE=1,4,8` restricts the run to some criteria
//! (6 always trains through 5 first). Artifacts go to
//! `$CARGO_TARGET_TMPDIR/acceptance`.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::{hausdorff_brute, random_mask, rng, simplex_projection};
use rand::Rng;
use spectr::data::{
    decode_cube, decode_mask, encode_cube, encode_mask, generate_dataset, generate_phantom, Dataset, PhantomConfig,
    Sample,
};
use spectr::entmax::entmax_forward;
use spectr::gradcheck::{self, random_tensor};
use spectr::model::{ForwardOptions, ModelConfig, SpecTr};
use spectr::spectral_norm::{spectral_normalize, SpectralNormParams};
use spectr::train::{
    ablate, ablation_csv, ablation_rows, attention_report, dsc, evaluate, hausdorff, iou, Checkpoint, TrainConfig,
    Trainer,
};
use spectr::{Graph, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn artifacts() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("artifact directory");
    dir
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1} s", t.as_secs_f64()))
}

fn c1_entmax_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let (mut worst, mut sum_err, mut negative) = (0.0f64, 0.0f64, false);
    for _ in 0..1000 {
        let n = r.gen_range(1..=8);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let p = entmax_forward(&x, 2.0).map_err(|e| e.to_string())?.p;
        let want = simplex_projection(&x);
        worst = p.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
        negative |= p.iter().any(|&v| v < 0.0);
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    check(
        worst < 1e-6 && sum_err < 1e-6 && !negative && fast,
        format!("max |p - proj| {worst:.1e}, max |sum - 1| {sum_err:.1e}, negative {negative}, {time}"),
    )
}

fn c2_gradients() -> Outcome {
    let start = Instant::now();
    let mut r = rng(202);
    let mut reports = gradcheck::entmax_suite(&mut r).map_err(|e| e.to_string())?;
    reports.push(gradcheck::network_suite(&mut r).map_err(|e| e.to_string())?);
    let (fast, time) = within(Duration::from_secs(300), start);
    let summary: Vec<String> =
        reports.iter().map(|r| format!("{} {:.1e}/{:.0e} on {}", r.name, r.max_rel_err, r.tolerance, r.checked)).collect();
    let counts_ok = reports[0].checked == 50 && reports[1].checked == 50 && reports[2].checked == 100;
    check(reports.iter().all(|r| r.passed()) && counts_ok && fast, format!("{}, {time}", summary.join("; ")))
}

fn c3_spectral_norm() -> Outcome {
    let mut r = rng(303);
    let params = SpectralNormParams::<f64>::new(3, 8, 4, 1e-5).map_err(|e| e.to_string())?;
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_tensor(&[4, 4, 3, 8], &mut r, 2.0);
        let y = spectral_normalize(&x, &params).map_err(|e| e.to_string())?;
        for s in 0..3 {
            for g in 0..4 {
                let vals: Vec<f64> = (0..4)
                    .flat_map(|a| (0..4).flat_map(move |b| (2 * g..2 * g + 2).map(move |c| [a, b, s, c])))
                    .map(|i| y.get(&i))
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|u| (u - m).powi(2)).sum::<f64>() / vals.len() as f64;
                mean_err = mean_err.max(m.abs());
                var_err = var_err.max((v - 1.0).abs());
            }
        }
    }
    let x = random_tensor(&[4, 4, 3, 8], &mut r, 1.0);
    let base = spectral_normalize(&x, &params).map_err(|e| e.to_string())?;
    let mut independent = true;
    for band in 0..3 {
        let mut bumped = x.clone();
        let o = bumped.offset(&[1, 2, band, 3]);
        bumped.data_mut()[o] += 1.5;
        let y = spectral_normalize(&bumped, &params).map_err(|e| e.to_string())?;
        for i in 0..x.numel() {
            let s = (i / 8) % 3;
            if s != band && y.data()[i].to_bits() != base.data()[i].to_bits() {
                independent = false;
            }
        }
    }
    check(
        mean_err < 1e-5 && var_err < 1e-3 && independent,
        format!("max |mean| {mean_err:.1e}, max |var - 1| {var_err:.1e}, band independence {independent}"),
    )
}

fn c4_ladder() -> Outcome {
    let model = SpecTr::<f32>::new(ModelConfig::default(), &mut rng(404)).map_err(|e| e.to_string())?;
    let mut r = rng(405);
    let cube = Tensor::<f32>::from_fn(&[32, 32, 30, 1], |_| r.gen_range(0.0..1.0));
    let mut g = Graph::new();
    let b = model.params().bind_frozen(&mut g);
    let x = g.input(cube);
    let out = model.forward(&mut g, &b, x, ForwardOptions::default()).map_err(|e| e.to_string())?;
    let levels: Vec<usize> = out.encoder_shapes.iter().map(|s| s[2]).collect();
    let attn: Vec<usize> = out.attention.iter().map(|&(_, v)| g.attention_probs(v).map_or(0, |p| p.seq_len)).collect();
    let map = g.value(out.prob_map);
    let in_range = map.data().iter().all(|&p| (0.0..=1.0).contains(&p));
    // E1..E3 carry 30/15/8 bands; the transformers see the E2..E4 extents
    check(
        levels[..3] == [30, 15, 8] && attn == levels[1..] && map.shape() == [32, 32] && in_range,
        format!("level extents {levels:?}, attention extents {attn:?}, prob_map {:?}, in [0,1] {in_range}", map.shape()),
    )
}

struct Trained {
    model: SpecTr<f32>,
    test: Vec<Sample>,
    window: [usize; 2],
}

fn c5_phantom_run() -> (Outcome, Option<Trained>) {
    let start = Instant::now();
    let dir = artifacts().join("phantoms");
    let phantom = PhantomConfig::default();
    let run = || -> spectr::Result<(Trainer, Vec<Sample>, f64)> {
        generate_dataset(&dir, 250, &phantom, true)?;
        let data = Dataset::open(&dir)?;
        let (train, test) = (data.train()?, data.test()?);
        let cfg = TrainConfig { eval_every: 5, ..TrainConfig::default() };
        let mut trainer = Trainer::new(ModelConfig::default(), cfg)?;
        trainer.fit(&train, &test, |log| {
            let d = log.test_dsc.map_or(String::new(), |d| format!(", test dsc {d:.4}"));
            eprintln!("  epoch {:>2}: loss {:.4}{d} ({:.0} s)", log.epoch, log.mean_loss, start.elapsed().as_secs_f64());
        })?;
        let report = evaluate(trainer.model(), &test, 0.5)?;
        std::fs::write(artifacts().join("phantom_metrics.csv"), report.to_csv())?;
        trainer.checkpoint().save(artifacts().join("phantom.sptr"))?;
        Ok((trainer, test, report.mean_dsc()))
    };
    match run() {
        Ok((trainer, test, mean)) => {
            let (fast, time) = within(Duration::from_secs(30 * 60), start);
            let detail = format!(
                "200/50 phantoms, 20 epochs: final-model test mean DSC {mean:.4} (>= 0.90), {time}{}",
                if fast { "" } else { " (runtime target 30 min exceeded; not part of the pass condition)" }
            );
            let trained = Trained { model: trainer.model().clone(), test, window: phantom.window };
            (check(mean >= 0.90, detail), Some(trained))
        }
        Err(e) => (Err(e.to_string()), None),
    }
}

fn c6_sparsity(trained: Option<&Trained>) -> Outcome {
    let t = trained.ok_or("criterion 5 produced no model")?;
    let report = attention_report(&t.model, &t.test, Some(t.window)).map_err(|e| e.to_string())?;
    report.write(artifacts().join("attention")).map_err(|e| e.to_string())?;
    let zero = report.max_zero_fraction();
    let alphas_ok = report.heads.iter().all(|h| h.alpha > 1.0 && h.alpha < 2.0);
    let ratio = report.best_window_ratio().unwrap_or(0.0);
    let best = report
        .heads
        .iter()
        .max_by(|a, b| a.window_ratio(t.window).2.total_cmp(&b.window_ratio(t.window).2))
        .map(|h| format!("{} head {}", h.stage, h.head + 1))
        .unwrap_or_default();
    let (lo, hi) = report.heads.iter().fold((2.0f64, 1.0f64), |(lo, hi), h| (lo.min(h.alpha), hi.max(h.alpha)));
    check(
        zero > 0.05 && alphas_ok && ratio >= 2.0,
        format!(
            "max zero fraction {zero:.3} (> 0.05), alpha range [{lo:.3}, {hi:.3}], best window mass ratio {ratio:.2} at {best} (>= 2)"
        ),
    )
}

fn c7_ablation() -> Outcome {
    let start = Instant::now();
    let phantom = PhantomConfig { seed: 7, ..PhantomConfig::default() };
    let samples = |ids: std::ops::Range<u64>| -> spectr::Result<Vec<Sample>> {
        ids.map(|id| generate_phantom(&phantom, id).map(|(cube, mask)| Sample { id, cube, mask })).collect()
    };
    let run = || -> spectr::Result<String> {
        let (train, test) = (samples(0..16)?, samples(16..24)?);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let rows = ablation_rows();
        let results = ablate(&rows, &ModelConfig::default(), &cfg, &train, &test, |i, row| {
            eprintln!("  ablation row {}: {} ({:.0} s)", i + 1, row.label(), start.elapsed().as_secs_f64());
        })?;
        let csv = ablation_csv(&results);
        std::fs::write(artifacts().join("ablation.csv"), &csv)?;
        Ok(csv)
    };
    let csv = run().map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    let reference_ok = lines.len() == 9
        && lines[0].ends_with(",reference_dsc")
        && lines[1].ends_with(",75.21")
        && lines[8].ends_with(",70.40");
    let finite = lines[1..].iter().all(|l| l.split(',').all(|f| !f.contains("NaN")));
    check(reference_ok && finite, format!("8 rows x 5 epochs on 16/8 phantoms, csv rows {}, {:.0} s", lines.len() - 1, start.elapsed().as_secs_f64()))
}

fn c8_metrics() -> Outcome {
    let mut r = rng(808);
    let mut identity_err = 0.0f64;
    for _ in 0..100 {
        let (p, q) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let (a, b) = (random_mask(16, 16, p, &mut r), random_mask(16, 16, q, &mut r));
        let (d, j) = (dsc(&a, &b).map_err(|e| e.to_string())?, iou(&a, &b).map_err(|e| e.to_string())?);
        identity_err = identity_err.max((d - 2.0 * j / (1.0 + j)).abs());
    }
    let mut mismatches = 0;
    for _ in 0..200 {
        let (p, q) = (r.gen_range(0.02..0.7), r.gen_range(0.02..0.7));
        let (a, b) = (random_mask(16, 16, p, &mut r), random_mask(16, 16, q, &mut r));
        if hausdorff(&a, &b).map_err(|e| e.to_string())? != hausdorff_brute(&a, &b) {
            mismatches += 1;
        }
    }
    let a = spectr::data::Mask::from_fn(8, 8, |x, y| (x, y) == (0, 0));
    let b = spectr::data::Mask::from_fn(8, 8, |x, y| (x, y) == (3, 4));
    let hd = hausdorff(&a, &b).map_err(|e| e.to_string())?;
    check(
        identity_err <= 1e-12 && mismatches == 0 && hd == 5.0,
        format!("max |DSC - 2IoU/(1+IoU)| {identity_err:.1e}, HD oracle mismatches {mismatches}/200, HD(3-4-5) {hd}"),
    )
}

fn c9_determinism() -> Outcome {
    let dir = artifacts().join("determinism");
    let phantom = PhantomConfig { width: 16, height: 16, bands: 16, window: [4, 7], seed: 9, ..PhantomConfig::default() };
    let model = ModelConfig { bands: 16, base_channels: 4, heads: 2, ..ModelConfig::default() };
    let run = |tag: &str| -> spectr::Result<(Vec<Vec<u8>>, Vec<u8>, String, String)> {
        let d = dir.join(tag);
        generate_dataset(&d, 8, &phantom, true)?;
        let mut files = Vec::new();
        for id in 0..8 {
            files.push(std::fs::read(d.join(format!("cubes/{id:04}.hsc")))?);
            files.push(std::fs::read(d.join(format!("masks/{id:04}.hsm")))?);
        }
        files.push(std::fs::read(d.join("split.json"))?);
        let data = Dataset::open(&d)?;
        let (train, test) = (data.train()?, data.test()?);
        let mut trainer = Trainer::new(model.clone(), TrainConfig { epochs: 2, seed: 3, ..TrainConfig::default() })?;
        trainer.fit(&train, &test, |_| {})?;
        let ckpt = trainer.checkpoint().encode()?;
        let metrics = evaluate(trainer.model(), &test, 0.5)?.to_csv();
        let attention = attention_report(trainer.model(), &test, Some(phantom.window))?.to_csv();
        Ok((files, ckpt, metrics, attention))
    };
    let (a, b) = (run("a").map_err(|e| e.to_string())?, run("b").map_err(|e| e.to_string())?);
    let same = a == b;

    let (cube, mask) = generate_phantom(&phantom, 3).map_err(|e| e.to_string())?;
    let cube_bytes = encode_cube(&cube);
    let cube_rt = decode_cube(&cube_bytes).map(|c| encode_cube(&c) == cube_bytes).unwrap_or(false);
    let mask_bytes = encode_mask(&mask);
    let mask_rt = decode_mask(&mask_bytes).map(|m| encode_mask(&m) == mask_bytes).unwrap_or(false);
    let ckpt_rt = Checkpoint::decode(&a.1).and_then(|c| c.encode()).map(|e| e == a.1).unwrap_or(false);
    check(
        same && cube_rt && mask_rt && ckpt_rt,
        format!("repeat run identical {same}; round trips: HSC1 {cube_rt}, HSM1 {mask_rt}, checkpoint {ckpt_rt}"),
    )
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("SPECTR_ACCEPTANCE").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().map_or(true, |o| o.contains(&c));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |c: u32, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {c} {tag} {name}: {detail}");
        results.push((c, name, outcome));
    };
    if wanted(1) {
        record(1, "entmax oracle", c1_entmax_oracle());
    }
    if wanted(2) {
        record(2, "gradient suites", c2_gradients());
    }
    if wanted(3) {
        record(3, "spectral normalization statistics", c3_spectral_norm());
    }
    if wanted(4) {
        record(4, "shape ladder", c4_ladder());
    }
    let mut trained = None;
    if wanted(5) || wanted(6) {
        eprintln!("criterion 5: training on 200 phantoms");
        let (outcome, t) = c5_phantom_run();
        trained = t;
        if wanted(5) {
            record(5, "phantom segmentation", outcome);
        }
    }
    if wanted(6) {
        record(6, "sparsity emergence", c6_sparsity(trained.as_ref()));
    }
    if wanted(7) {
        record(7, "ablation harness", c7_ablation());
    }
    if wanted(8) {
        record(8, "metrics", c8_metrics());
    }
    if wanted(9) {
        record(9, "determinism and formats", c9_determinism());
    }
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    println!("artifacts: {}", artifacts().display());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
