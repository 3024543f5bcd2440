use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectr::data::{generate_dataset, read_cube, read_mask, Dataset, Mask, PhantomConfig, Sample};
use spectr::gradcheck::full_suite;
use spectr::train::{ablate as run_ablation, ablation_csv, ablation_rows, attention_report, evaluate, Checkpoint, Trainer};

use crate::config::RunConfig;

/// A check ran to completion and its numbers were out of tolerance.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SplitPart {
    Train,
    Test,
    All,
}

pub struct GenArgs {
    pub out: PathBuf,
    pub n: u64,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub bands: Option<usize>,
    pub window: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub force: bool,
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?.phantom,
        None => PhantomConfig::default(),
    };
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.height = a.height.unwrap_or(cfg.height);
    cfg.bands = a.bands.unwrap_or(cfg.bands);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(w) = a.window {
        cfg.window = [w[0], w[1]];
    }
    cfg.validate()?;
    let split = generate_dataset(&a.out, a.n, &cfg, a.force)?;
    eprintln!(
        "wrote {} phantoms ({} train / {} test) to {}",
        a.n,
        split.train.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

fn open_data(dir: &Path) -> Result<Dataset> {
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

fn check_bands(data: &Dataset, bands: usize) -> Result<()> {
    let have = data.split().phantom.bands;
    if have != bands {
        bail!("dataset cubes have {have} bands but the model expects {bands}");
    }
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub last: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let data = open_data(&a.data)?;
    check_bands(&data, cfg.model.bands)?;
    let (train, test) = (data.train()?, data.test()?);
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if ckpt.model.config() != &cfg.model {
                bail!("checkpoint model settings differ from {}", a.config.display());
            }
            Trainer::resume(ckpt, cfg.train.clone())?
        }
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    eprintln!("training on {} images, testing on {}", train.len(), test.len());
    let epochs = cfg.train.epochs;
    trainer.fit(&train, &test, |log| {
        let dsc = log.test_dsc.map_or("-".to_string(), |d| format!("{d:.4}"));
        eprintln!("epoch {:>3}/{epochs}  loss {:.4}  test dsc {dsc}", log.epoch, log.mean_loss);
    })?;
    trainer.best().save(&a.out)?;
    if let Some(path) = &a.last {
        trainer.checkpoint().save(path)?;
    }
    if let Some(path) = &a.log {
        std::fs::write(path, serde_json::to_string_pretty(trainer.history())? + "\n")?;
    }
    let state = &trainer.best().state;
    match state.best_dsc {
        Some(d) => eprintln!("saved epoch {} (test dsc {d:.4}) to {}", state.epoch, a.out.display()),
        None => eprintln!("saved epoch {} to {}", state.epoch, a.out.display()),
    }
    Ok(())
}

pub fn eval(ckpt: &Path, dir: &Path, report: &Path, part: SplitPart, threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        bail!("threshold must lie in (0, 1)");
    }
    let ckpt = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let data = open_data(dir)?;
    check_bands(&data, ckpt.model.config().bands)?;
    let samples = match part {
        SplitPart::Train => data.train()?,
        SplitPart::Test => data.test()?,
        SplitPart::All => {
            let mut s = data.train()?;
            s.extend(data.test()?);
            s.sort_by_key(|s| s.id);
            s
        }
    };
    let metrics = evaluate(&ckpt.model, &samples, threshold)?;
    std::fs::write(report, metrics.to_csv())?;
    eprintln!(
        "{} images: mean dsc {:.4} (median {:.4}, max {:.4}, min {:.4})",
        metrics.images.len(),
        metrics.mean_dsc(),
        metrics.median_dsc(),
        metrics.max_dsc(),
        metrics.min_dsc()
    );
    Ok(())
}

pub fn ablate(config: &Path, dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let data = open_data(dir)?;
    check_bands(&data, cfg.model.bands)?;
    let (train, test) = (data.train()?, data.test()?);
    let rows = ablation_rows();
    let results = run_ablation(&rows, &cfg.model, &cfg.train, &train, &test, |i, row| {
        eprintln!("[{}/{}] {}", i + 1, rows.len(), row.label());
    })?;
    std::fs::write(out, ablation_csv(&results))?;
    Ok(())
}

pub fn attn(ckpt: &Path, cube: &Path, out: &Path, mask: Option<&Path>, window: Option<Vec<usize>>) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let cube = read_cube(cube).with_context(|| format!("reading {}", cube.display()))?;
    let mask = match mask {
        Some(p) => read_mask(p).with_context(|| format!("reading {}", p.display()))?,
        None => Mask::zeros(cube.width(), cube.height()),
    };
    let window = window.map(|w| [w[0], w[1]]);
    if let Some([a, b]) = window {
        if a > b || b >= cube.bands() {
            bail!("window [{a}, {b}] outside the {} bands", cube.bands());
        }
    }
    let report = attention_report(&ckpt.model, &[Sample { id: 0, cube, mask }], window)?;
    let files = report.write(out)?;
    eprintln!("max zero fraction {:.4}; wrote {} files to {}", report.max_zero_fraction(), files.len(), out.display());
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = full_suite(&mut rng)?;
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<24} max rel err {:.3e}  (tol {:.0e}, {} checked)  {verdict}", r.name, r.max_rel_err, r.tolerance, r.checked);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(NumericFailure(format!("gradient checks out of tolerance: {}", failed.join(", "))).into());
    }
    Ok(())
}
