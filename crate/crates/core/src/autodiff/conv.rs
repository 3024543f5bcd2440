//! Same-padded 3x3 (band) and 3x3x3 (volumetric) convolutions over
//! channels-last feature maps `[W, H, L, C]`.
//!
//! Each kernel tap is one strided GEMM over a zero-padded copy of the input:
//! in the padded layout a spatial shift is a constant row offset, so no
//! patch matrix is materialized. Rows that land on padding are computed and
//! discarded.

use std::any::Any;

use rayon::prelude::*;

use super::elementwise::any_impl;
use super::{Backward, Graph, Var};
use crate::error::{bail, Result};
use crate::gemm::{gemm, View};
use crate::parallel::chunk_rows;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How band convolutions treat the spectral axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandFilters {
    /// One `[Cout, Cin, 3, 3]` kernel applied to every band.
    Shared,
    /// A separate `[Cout, Cin, 3, 3]` kernel per band: `[L, Cout, Cin, 3, 3]`.
    PerBand,
}

#[derive(Clone, Debug)]
struct Geometry {
    w: usize,
    h: usize,
    l: usize,
    cin: usize,
    cout: usize,
    /// Spectral padding: 1 for 3x3x3 kernels, 0 for band kernels.
    pl: usize,
    /// Signed row offsets of each tap in padded-voxel units.
    taps: Vec<isize>,
    per_band: bool,
}

impl Geometry {
    fn hp(&self) -> usize {
        self.h + 2
    }
    fn lp(&self) -> usize {
        self.l + 2 * self.pl
    }
    fn padded_index(&self, x: usize, y: usize, z: usize) -> usize {
        ((x + 1) * self.hp() + y + 1) * self.lp() + z + self.pl
    }
    /// First padded voxel row with a real output.
    fn base(&self) -> usize {
        self.padded_index(0, 0, 0)
    }
    fn rows(&self) -> usize {
        self.padded_index(self.w - 1, self.h - 1, self.l - 1) - self.base() + 1
    }
    fn ntaps(&self) -> usize {
        self.taps.len()
    }
    /// `[Cin x Cout]` view of one tap (and band) of the kernel.
    fn weight_view(&self, band: usize, tap: usize) -> View {
        let nt = self.ntaps();
        let band_off = if self.per_band { band * self.cout * self.cin * nt } else { 0 };
        View { offset: band_off + tap, rs: nt, cs: self.cin * nt }
    }
}

fn pad_input<T: Scalar>(g: &Geometry, x: &[T], c: usize) -> Vec<T> {
    let n = (g.w + 2) * g.hp() * g.lp();
    let mut xp = vec![T::zero(); n * c];
    let run = g.l * c;
    for xi in 0..g.w {
        for yi in 0..g.h {
            let src = (xi * g.h + yi) * run;
            let dst = g.padded_index(xi, yi, 0) * c;
            xp[dst..dst + run].copy_from_slice(&x[src..src + run]);
        }
    }
    xp
}

/// Copies real voxels out of (or into) a buffer of padded rows starting at
/// `base`.
fn crop<T: Scalar>(g: &Geometry, rows: &[T], c: usize) -> Vec<T> {
    let run = g.l * c;
    let mut out = vec![T::zero(); g.w * g.h * run];
    let base = g.base();
    for xi in 0..g.w {
        for yi in 0..g.h {
            let src = (g.padded_index(xi, yi, 0) - base) * c;
            let dst = (xi * g.h + yi) * run;
            out[dst..dst + run].copy_from_slice(&rows[src..src + run]);
        }
    }
    out
}

fn uncrop<T: Scalar>(g: &Geometry, x: &[T], c: usize) -> Vec<T> {
    let run = g.l * c;
    let mut rows = vec![T::zero(); g.rows() * c];
    let base = g.base();
    for xi in 0..g.w {
        for yi in 0..g.h {
            let dst = (g.padded_index(xi, yi, 0) - base) * c;
            let src = (xi * g.h + yi) * run;
            rows[dst..dst + run].copy_from_slice(&x[src..src + run]);
        }
    }
    rows
}

fn forward_rows<T: Scalar>(g: &Geometry, xp: &[T], k: &[T]) -> Vec<T> {
    let (cin, cout, base) = (g.cin, g.cout, g.base());
    let rows = g.rows();
    let mut out = vec![T::zero(); rows * cout];
    if !g.per_band {
        let chunk = chunk_rows(rows);
        out.par_chunks_mut(chunk * cout).enumerate().for_each(|(ci, dst)| {
            let r0 = ci * chunk;
            let m = dst.len() / cout;
            for (t, &off) in g.taps.iter().enumerate() {
                let row = (base + r0) as isize + off;
                gemm(
                    m,
                    cin,
                    cout,
                    T::one(),
                    xp,
                    View::row_major(row as usize * cin, cin),
                    k,
                    g.weight_view(0, t),
                    if t == 0 { T::zero() } else { T::one() },
                    dst,
                    View::row_major(0, cout),
                );
            }
        });
    } else {
        // rows are planes of L voxels; band s is column block s of each plane
        let planes = rows / g.l;
        for s in 0..g.l {
            for (t, &off) in g.taps.iter().enumerate() {
                let row = (base + s) as isize + off;
                gemm(
                    planes,
                    cin,
                    cout,
                    T::one(),
                    xp,
                    View { offset: row as usize * cin, rs: g.l * cin, cs: 1 },
                    k,
                    g.weight_view(s, t),
                    if t == 0 { T::zero() } else { T::one() },
                    &mut out,
                    View { offset: s * cout, rs: g.l * cout, cs: 1 },
                );
            }
        }
    }
    out
}

/// Input gradient in padded-row space (rows relative to `base`).
fn input_grad_rows<T: Scalar>(g: &Geometry, gp: &[T], k: &[T]) -> Vec<T> {
    let (cin, cout) = (g.cin, g.cout);
    let rows = g.rows() as isize;
    let mut dx = vec![T::zero(); g.rows() * cin];
    if !g.per_band {
        let chunk = chunk_rows(g.rows());
        dx.par_chunks_mut(chunk * cin).enumerate().for_each(|(ci, dst)| {
            let q0 = (ci * chunk) as isize;
            let q1 = q0 + (dst.len() / cin) as isize;
            for (t, &off) in g.taps.iter().enumerate() {
                // dx[q] += gp[q - off] * W_t^T
                let lo = (q0 - off).max(0);
                let hi = (q1 - off).min(rows);
                if hi <= lo {
                    continue;
                }
                gemm(
                    (hi - lo) as usize,
                    cout,
                    cin,
                    T::one(),
                    gp,
                    View::row_major(lo as usize * cout, cout),
                    k,
                    g.weight_view(0, t).t(),
                    T::one(),
                    dst,
                    View::row_major((lo + off - q0) as usize * cin, cin),
                );
            }
        });
    } else {
        let l = g.l as isize;
        let planes = rows / l;
        for s in 0..l {
            for (t, &off) in g.taps.iter().enumerate() {
                // plane offset of the tap; band taps never shift along L
                let poff = off / l;
                let lo = (-poff).max(0);
                let hi = (planes - poff).min(planes);
                if hi <= lo {
                    continue;
                }
                gemm(
                    (hi - lo) as usize,
                    cout,
                    cin,
                    T::one(),
                    gp,
                    View { offset: ((lo * l + s) as usize) * cout, rs: g.l * cout, cs: 1 },
                    k,
                    g.weight_view(s as usize, t).t(),
                    T::one(),
                    &mut dx,
                    View { offset: (((lo + poff) * l + s) as usize) * cin, rs: g.l * cin, cs: 1 },
                );
            }
        }
    }
    dx
}

fn kernel_grad<T: Scalar>(g: &Geometry, xp: &[T], gp: &[T]) -> Vec<T> {
    let (cin, cout, base) = (g.cin, g.cout, g.base());
    let nt = g.ntaps();
    let bands = if g.per_band { g.l } else { 1 };
    let jobs: Vec<(usize, usize)> = (0..bands).flat_map(|s| (0..nt).map(move |t| (s, t))).collect();
    let blocks: Vec<Vec<T>> = jobs
        .par_iter()
        .map(|&(s, t)| {
            let mut blk = vec![T::zero(); cin * cout];
            let row = (base + s) as isize + g.taps[t];
            let (m_rows, rs_in, rs_out) = if g.per_band {
                (g.rows() / g.l, g.l * cin, g.l * cout)
            } else {
                (g.rows(), cin, cout)
            };
            // dW_t[ci, co] = sum_r xp[row + r, ci] * gp[r, co]
            gemm(
                cin,
                m_rows,
                cout,
                T::one(),
                xp,
                View { offset: row as usize * cin, rs: 1, cs: rs_in },
                gp,
                View { offset: s * cout, rs: rs_out, cs: 1 },
                T::zero(),
                &mut blk,
                View::row_major(0, cout),
            );
            blk
        })
        .collect();
    let mut dk = vec![T::zero(); bands * cout * cin * nt];
    for (&(s, t), blk) in jobs.iter().zip(&blocks) {
        let v = g.weight_view(s, t);
        for ci in 0..cin {
            for co in 0..cout {
                dk[v.offset + ci * v.rs + co * v.cs] = blk[ci * cout + co];
            }
        }
    }
    dk
}

struct Conv {
    geom: Geometry,
}

impl<T: Scalar> Backward<T> for Conv {
    fn name(&self) -> &'static str {
        if self.geom.pl == 1 {
            "conv3d"
        } else {
            "band_conv2d"
        }
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let gp = uncrop(g, grad, g.cout);
        let dx = needs[0].then(|| crop(g, &input_grad_rows(g, &gp, x[1].data()), g.cin));
        let dk = needs[1].then(|| kernel_grad(g, &pad_input(g, x[0].data(), g.cin), &gp));
        let db = needs[2].then(|| {
            let mut db = vec![T::zero(); g.cout];
            for row in grad.chunks(g.cout) {
                db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
            }
            db
        });
        vec![dx, dk, db]
    }
    any_impl!();
}

impl<T: Scalar> Graph<T> {
    fn conv_common(&mut self, x: Var, k: Var, bias: Var, geom: Geometry) -> Result<Var> {
        let xp = pad_input(&geom, self.value(x).data(), geom.cin);
        let rows = forward_rows(&geom, &xp, self.value(k).data());
        let mut out = crop(&geom, &rows, geom.cout);
        let b = self.value(bias).data();
        for row in out.chunks_mut(geom.cout) {
            row.iter_mut().zip(b).for_each(|(o, &b)| *o = *o + b);
        }
        let out = Tensor::new(vec![geom.w, geom.h, geom.l, geom.cout], out)?;
        Ok(self.push(out, vec![x, k, bias], Conv { geom }))
    }

    /// 2-D 3x3 convolution applied to every spectral band independently
    /// (the band axis acts as a batch axis). Zero padding keeps `W x H`.
    ///
    /// Kernel shape is `[Cout, Cin, 3, 3]` for [`BandFilters::Shared`] and
    /// `[L, Cout, Cin, 3, 3]` for [`BandFilters::PerBand`].
    pub fn band_conv2d(&mut self, x: Var, k: Var, bias: Var, filters: BandFilters) -> Result<Var> {
        let [w, h, l, cin] = dims4(self.shape(x), "band_conv2d")?;
        let ks = self.shape(k).to_vec();
        let per_band = filters == BandFilters::PerBand;
        let cout = match (&ks[..], per_band) {
            (&[co, ci, 3, 3], false) if ci == cin => co,
            (&[lb, co, ci, 3, 3], true) if ci == cin && lb == l => co,
            _ => bail!(Dimension, "band_conv2d: kernel {:?} for input {:?} ({:?})", ks, self.shape(x), filters),
        };
        check_bias(self.shape(bias), cout)?;
        let hp = (h + 2) as isize;
        let taps = (0..3)
            .flat_map(|kx| (0..3).map(move |ky| ((kx - 1) * hp + (ky - 1)) * l as isize))
            .collect();
        let geom = Geometry { w, h, l, cin, cout, pl: 0, taps, per_band };
        self.conv_common(x, k, bias, geom)
    }

    /// 3x3x3 convolution over `(W, H, L)` with zero padding 1.
    /// Kernel shape `[Cout, Cin, 3, 3, 3]`.
    pub fn conv3d(&mut self, x: Var, k: Var, bias: Var) -> Result<Var> {
        let [w, h, l, cin] = dims4(self.shape(x), "conv3d")?;
        let ks = self.shape(k).to_vec();
        let cout = match ks[..] {
            [co, ci, 3, 3, 3] if ci == cin => co,
            _ => bail!(Dimension, "conv3d: kernel {:?} for input {:?}", ks, self.shape(x)),
        };
        check_bias(self.shape(bias), cout)?;
        let (hp, lp) = ((h + 2) as isize, (l + 2) as isize);
        let taps = (0..3)
            .flat_map(|kx| {
                (0..3).flat_map(move |ky| (0..3).map(move |kz| ((kx - 1) * hp + (ky - 1)) * lp + (kz - 1)))
            })
            .collect();
        let geom = Geometry { w, h, l, cin, cout, pl: 1, taps, per_band: false };
        self.conv_common(x, k, bias, geom)
    }
}

pub(crate) fn dims4(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match shape {
        &[w, h, l, c] => Ok([w, h, l, c]),
        _ => bail!(Dimension, "{op}: expected [W, H, L, C], got {:?}", shape),
    }
}

fn check_bias(shape: &[usize], cout: usize) -> Result<()> {
    if shape != [cout] {
        bail!(Dimension, "convolution bias {:?} for {cout} output channels", shape);
    }
    Ok(())
}
