//! Dataset directories: `cubes/NNNN.hsc`, `masks/NNNN.hsm` and `split.json`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cube::{HsiCube, Mask};
use super::format::{read_cube, read_mask, write_cube, write_mask};
use super::phantom::{generate_phantom, PhantomConfig};
use crate::error::{bail, Result};

/// Contents of `split.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub phantom: PhantomConfig,
}

impl Split {
    /// Seeded shuffle of `0..n`, the first 80% (rounded) for training.
    pub fn seeded(n: u64, seed: u64, phantom: PhantomConfig) -> Self {
        let mut ids: Vec<u64> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b11_7000_0000);
        ids.shuffle(&mut rng);
        let n_train = ((n * 4 + 2) / 5) as usize;
        let mut train = ids[..n_train].to_vec();
        let mut test = ids[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Self { train, test, phantom }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: u64,
    pub cube: HsiCube,
    pub mask: Mask,
}

fn cube_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("cubes").join(format!("{id:04}.hsc"))
}

fn mask_path(dir: &Path, id: u64) -> PathBuf {
    dir.join("masks").join(format!("{id:04}.hsm"))
}

/// Writes `n` phantoms and their split into `dir`. A non-empty `dir` is only
/// overwritten with `force`.
pub fn generate_dataset(dir: impl AsRef<Path>, n: u64, cfg: &PhantomConfig, force: bool) -> Result<Split> {
    let dir = dir.as_ref();
    cfg.validate()?;
    if n == 0 {
        bail!(Config, "dataset size must be positive");
    }
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        bail!(Input, "{} exists and is not empty (use --force)", dir.display());
    }
    if force && dir.exists() {
        for sub in ["cubes", "masks"] {
            if dir.join(sub).exists() {
                std::fs::remove_dir_all(dir.join(sub))?;
            }
        }
    }
    std::fs::create_dir_all(dir.join("cubes"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let items: Vec<(HsiCube, Mask)> = (0..n).into_par_iter().map(|i| generate_phantom(cfg, i)).collect::<Result<_>>()?;
    for (id, (cube, mask)) in items.iter().enumerate() {
        write_cube(cube_path(dir, id as u64), cube)?;
        write_mask(mask_path(dir, id as u64), mask)?;
    }
    let split = Split::seeded(n, cfg.seed, cfg.clone());
    std::fs::write(dir.join("split.json"), serde_json::to_string_pretty(&split)? + "\n")?;
    Ok(split)
}

/// A dataset directory opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    split: Split,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join("split.json");
        if !path.is_file() {
            bail!(Input, "{} is not a dataset directory (no split.json)", dir.display());
        }
        let split: Split = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(Self { dir, split })
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn load(&self, id: u64) -> Result<Sample> {
        let cube = read_cube(cube_path(&self.dir, id))?;
        let mask = read_mask(mask_path(&self.dir, id))?;
        if (cube.width(), cube.height()) != (mask.width(), mask.height()) {
            bail!(Input, "sample {id}: cube and mask sizes differ");
        }
        Ok(Sample { id, cube, mask })
    }

    pub fn load_all(&self, ids: &[u64]) -> Result<Vec<Sample>> {
        ids.iter().map(|&id| self.load(id)).collect()
    }

    pub fn train(&self) -> Result<Vec<Sample>> {
        self.load_all(&self.split.train)
    }

    pub fn test(&self) -> Result<Vec<Sample>> {
        self.load_all(&self.split.test)
    }
}
