//! Per-stage, per-head statistics of learned spectral attention: sparsity,
//! learned α, and where along the band axis the mass goes.

use std::path::{Path, PathBuf};

use crate::autodiff::Graph;
use crate::data::{Mask, Sample};
use crate::error::{bail, Result};
use crate::model::{ForwardOptions, SpecTr, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadStats {
    pub stage: Stage,
    pub head: usize,
    pub alpha: f64,
    pub seq_len: usize,
    /// Fraction of attention entries that are exactly zero.
    pub zero_fraction: f64,
    /// Largest `|Σ row - 1|` seen.
    pub max_row_error: f64,
    /// Mass received by each key position, averaged over queries, spatial
    /// locations and images.
    pub mass_all: Vec<f64>,
    pub mass_lesion: Vec<f64>,
    pub mass_background: Vec<f64>,
    /// Mean attention matrix `[L', L']` (query-major).
    pub mean: Vec<f64>,
}

impl HeadStats {
    /// Key positions `[a, b]` at this stage covering input bands `[w0, w1]`.
    pub fn stage_window(&self, window: [usize; 2]) -> [usize; 2] {
        let f = 1usize << (self.stage.level() - 1);
        [(window[0] / f).min(self.seq_len - 1), (window[1] / f).min(self.seq_len - 1)]
    }

    fn window_sum(mass: &[f64], w: [usize; 2]) -> f64 {
        mass[w[0]..=w[1]].iter().sum()
    }

    /// `(window mass, uniform baseline, ratio)` over all locations.
    pub fn window_ratio(&self, window: [usize; 2]) -> (f64, f64, f64) {
        let w = self.stage_window(window);
        let mass = Self::window_sum(&self.mass_all, w);
        let baseline = (w[1] - w[0] + 1) as f64 / self.seq_len as f64;
        (mass, baseline, mass / baseline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    pub heads: Vec<HeadStats>,
    /// Input band window used for the mass ratios.
    pub window: Option<[usize; 2]>,
}

/// Lesion label of each stage location (`x * H' + y`), by majority of the
/// covered input pixels.
fn stage_labels(mask: &Mask, factor: usize) -> Vec<bool> {
    let (w, h) = (mask.width() / factor, mask.height() / factor);
    let mut out = Vec::with_capacity(w * h);
    for x in 0..w {
        for y in 0..h {
            let mut on = 0;
            for dx in 0..factor {
                for dy in 0..factor {
                    on += usize::from(mask.get(x * factor + dx, y * factor + dy));
                }
            }
            out.push(2 * on >= factor * factor);
        }
    }
    out
}

pub fn attention_report(model: &SpecTr<f32>, samples: &[Sample], window: Option<[usize; 2]>) -> Result<AttentionReport> {
    if samples.is_empty() {
        bail!(Input, "attention report needs at least one cube");
    }
    let mut heads: Vec<HeadStats> = Vec::new();
    // per head: (zero count, entry count, lesion locations, background locations)
    let mut counts: Vec<(usize, usize, usize, usize)> = Vec::new();
    for sample in samples {
        let mut g = Graph::new();
        let b = model.params().bind_frozen(&mut g);
        let x = g.input(sample.cube.to_tensor::<f32>());
        let out = model.forward(&mut g, &b, x, ForwardOptions::default())?;
        let mut slot = 0;
        for &(stage, var) in &out.attention {
            let p = g.attention_probs(var).expect("attention records its probabilities");
            let l = p.seq_len;
            let labels = stage_labels(&sample.mask, 1 << (stage.level() - 1));
            debug_assert_eq!(labels.len(), p.sequences);
            for h in 0..p.heads {
                if heads.len() <= slot {
                    heads.push(HeadStats {
                        stage,
                        head: h,
                        alpha: p.alphas[h] as f64,
                        seq_len: l,
                        zero_fraction: 0.0,
                        max_row_error: 0.0,
                        mass_all: vec![0.0; l],
                        mass_lesion: vec![0.0; l],
                        mass_background: vec![0.0; l],
                        mean: vec![0.0; l * l],
                    });
                    counts.push((0, 0, 0, 0));
                }
                let (st, c) = (&mut heads[slot], &mut counts[slot]);
                for (n, &lesion) in labels.iter().enumerate() {
                    let mut key_mass = vec![0.0; l];
                    for q in 0..l {
                        let row = p.row(n, h, q);
                        let mut sum = 0.0;
                        for (k, &v) in row.iter().enumerate() {
                            let v = v as f64;
                            sum += v;
                            key_mass[k] += v / l as f64;
                            st.mean[q * l + k] += v;
                            c.0 += usize::from(v == 0.0);
                        }
                        c.1 += l;
                        st.max_row_error = st.max_row_error.max((sum - 1.0).abs());
                    }
                    let target = if lesion {
                        c.2 += 1;
                        &mut st.mass_lesion
                    } else {
                        c.3 += 1;
                        &mut st.mass_background
                    };
                    target.iter_mut().zip(&key_mass).for_each(|(t, m)| *t += m);
                    st.mass_all.iter_mut().zip(&key_mass).for_each(|(t, m)| *t += m);
                }
                slot += 1;
            }
        }
    }
    for (st, &(zeros, entries, nl, nb)) in heads.iter_mut().zip(&counts) {
        st.zero_fraction = zeros as f64 / entries as f64;
        let locations = (nl + nb) as f64;
        st.mass_all.iter_mut().for_each(|v| *v /= locations);
        st.mean.iter_mut().for_each(|v| *v /= locations);
        if nl > 0 {
            st.mass_lesion.iter_mut().for_each(|v| *v /= nl as f64);
        }
        if nb > 0 {
            st.mass_background.iter_mut().for_each(|v| *v /= nb as f64);
        }
    }
    Ok(AttentionReport { heads, window })
}

impl AttentionReport {
    /// Largest window mass ratio over all heads.
    pub fn best_window_ratio(&self) -> Option<f64> {
        let w = self.window?;
        self.heads.iter().map(|h| h.window_ratio(w).2).reduce(f64::max)
    }

    pub fn max_zero_fraction(&self) -> f64 {
        self.heads.iter().map(|h| h.zero_fraction).fold(0.0, f64::max)
    }

    /// `stage,head,alpha,seq_len,zero_fraction,window_start,window_end,window_mass,lesion_window_mass,background_window_mass,uniform_baseline,window_ratio`
    /// (window columns empty without a window).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "stage,head,alpha,seq_len,zero_fraction,window_start,window_end,window_mass,\
             lesion_window_mass,background_window_mass,uniform_baseline,window_ratio\n",
        );
        for h in &self.heads {
            s += &format!("{},{},{},{},{}", h.stage, h.head + 1, h.alpha, h.seq_len, h.zero_fraction);
            match self.window {
                Some(win) => {
                    let w = h.stage_window(win);
                    let (mass, baseline, ratio) = h.window_ratio(win);
                    let lesion = HeadStats::window_sum(&h.mass_lesion, w);
                    let background = HeadStats::window_sum(&h.mass_background, w);
                    s += &format!(",{},{},{mass},{lesion},{background},{baseline},{ratio}\n", w[0], w[1]);
                }
                None => s += ",,,,,,,\n",
            }
        }
        s
    }

    /// `stage,head,key,mass_all,mass_lesion,mass_background`.
    pub fn mass_csv(&self) -> String {
        let mut s = String::from("stage,head,key,mass_all,mass_lesion,mass_background\n");
        for h in &self.heads {
            for k in 0..h.seq_len {
                s += &format!(
                    "{},{},{},{},{},{}\n",
                    h.stage,
                    h.head + 1,
                    k,
                    h.mass_all[k],
                    h.mass_lesion[k],
                    h.mass_background[k]
                );
            }
        }
        s
    }

    /// Writes `attention.csv`, `attention_mass.csv` and one
    /// `<stage>_head<h>.pgm` heatmap of the mean attention matrix per head.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut written = vec![dir.join("attention.csv"), dir.join("attention_mass.csv")];
        std::fs::write(&written[0], self.to_csv())?;
        std::fs::write(&written[1], self.mass_csv())?;
        for h in &self.heads {
            let path = dir.join(format!("{}_head{}.pgm", h.stage, h.head + 1));
            std::fs::write(&path, heatmap_pgm(&h.mean, h.seq_len, CELL))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Pixels per attention cell in the heatmaps.
const CELL: usize = 8;

/// Binary PGM of an `n x n` matrix (row = query), scaled so the largest
/// entry is white.
pub fn heatmap_pgm(values: &[f64], n: usize, cell: usize) -> Vec<u8> {
    let side = n * cell;
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            let v = values[(py / cell) * n + px / cell];
            let g = if max > 0.0 { (255.0 * v / max).round() } else { 0.0 };
            out.push(g as u8);
        }
    }
    out
}
