//! Central finite-difference verification of reverse-mode gradients.
//!
//! Checks run in `f64`: the analytic gradient from [`Graph::backward`] is
//! compared against `(L(θ + h e_i) - L(θ - h e_i)) / 2h`, which only ever
//! evaluates the forward pass.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AttentionKind, BandFilters, Graph, Var};
use crate::entmax::{entmax_alpha_grad, entmax_forward, entmax_input_vjp};
use crate::error::{Error, Result};
use crate::model::{init_transformer, transformer_block, ForwardOptions, ModelConfig, ParamStore, SpecTr, TransformerShape};
use crate::spectral_norm::{spectral_normalize_var, DEFAULT_EPS, DEFAULT_GROUPS};
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so that two gradients that are both
/// numerically zero compare equal.
pub const REL_FLOOR: f64 = 1e-7;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates passed over because a kink lay within `±h`.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }
}

/// Settings of one finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub h: f64,
    pub tolerance: f64,
    /// Coordinates to check, drawn uniformly across all parameters; `None`
    /// checks every coordinate.
    pub samples: Option<usize>,
    /// Pass over coordinates whose forward and backward one-sided
    /// differences disagree by more than `tolerance` (relative): the loss has
    /// a kink (ReLU, max pooling, an entmax support change) inside
    /// `[θ - h, θ + h]` there, and a central difference does not estimate a
    /// derivative. Another coordinate is drawn in its place.
    pub screen_kinks: bool,
}

impl FdOptions {
    pub fn new(h: f64, tolerance: f64, samples: Option<usize>) -> Self {
        Self { h, tolerance, samples, screen_kinks: false }
    }

    pub fn screened(self) -> Self {
        Self { screen_kinks: true, ..self }
    }
}

/// Compares analytic and numeric gradients of the scalar built by `loss`
/// with respect to every tensor in `params`.
pub fn check_gradients<F>(
    name: &str,
    params: &[Tensor<f64>],
    loss: F,
    opts: FdOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let l = loss(&mut g, &vars)?;
        Ok(g.value(l).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let l = loss(&mut g, &vars)?;
    let base = g.value(l).data()[0];
    let grads = g.backward(l)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p.numel())).collect();

    let coords: Vec<(usize, usize)> =
        params.iter().enumerate().flat_map(|(t, p)| (0..p.numel()).map(move |i| (t, i))).collect();
    // a random order of all coordinates, consumed until enough are accepted
    let order: Vec<usize> = sample(rng, coords.len(), coords.len()).into_vec();
    let want = opts.samples.unwrap_or(coords.len()).min(coords.len());
    let h = opts.h;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    let mut work = params.to_vec();
    for &c in &order {
        if checked == want {
            break;
        }
        let (t, i) = coords[c];
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + h;
        let up = eval(&work)?;
        work[t].data_mut()[i] = orig - h;
        let down = eval(&work)?;
        work[t].data_mut()[i] = orig;
        if opts.screen_kinks {
            let (fwd, bwd) = ((up - base) / h, (base - down) / h);
            if rel_err(fwd, bwd) > opts.tolerance {
                skipped += 1;
                continue;
            }
        }
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[t][i], numeric));
        checked += 1;
    }
    Ok(GradCheckReport { name: name.to_string(), checked, skipped, max_rel_err: worst, tolerance: opts.tolerance })
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0) * scale)
}

/// Values bounded away from zero by at least `margin`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a grid of spacing `2 * margin`, shuffled.
fn well_separated(shape: &[usize], rng: &mut ChaCha8Rng, margin: f64) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 2.0 * margin).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals).expect("shape matches")
}

/// `Σ out ⊙ R` with a fixed random `R`, so every output element matters.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_tensor(g.shape(out), &mut rng, 1.0);
    let r = g.input(r);
    let prod = g.mul(out, r)?;
    Ok(g.sum(prod))
}

const POINTS: usize = 20;
const KINK_MARGIN: f64 = 1e-2;
const H: f64 = 1e-4;
const TOL_SMOOTH: f64 = 1e-4;
const TOL_KINK: f64 = 1e-3;

/// Finite-difference checks of every differentiable primitive.
pub fn primitive_suite(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    let mut run = |name: &str,
                   params: Vec<Tensor<f64>>,
                   tol: f64,
                   rng: &mut ChaCha8Rng,
                   f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>|
     -> Result<()> {
        let seed = rng.gen();
        let mut opts = FdOptions::new(H, tol, Some(POINTS));
        if tol == TOL_KINK {
            opts = opts.screened();
        }
        let rep = check_gradients(name, &params, |g, v| {
            let o = f(g, v)?;
            project(g, o, seed)
        }, opts, rng)?;
        out.push(rep);
        Ok(())
    };
    let r = |s: &[usize], rng: &mut ChaCha8Rng| random_tensor(s, rng, 1.0);

    let ps = vec![r(&[3, 4], rng), r(&[3, 4], rng)];
    run("add", ps, TOL_SMOOTH, rng, &|g, v| g.add(v[0], v[1]))?;
    let ps = vec![r(&[3, 4], rng), r(&[3, 4], rng)];
    run("sub", ps, TOL_SMOOTH, rng, &|g, v| g.sub(v[0], v[1]))?;
    let ps = vec![r(&[3, 4], rng), r(&[3, 4], rng)];
    run("mul", ps, TOL_SMOOTH, rng, &|g, v| g.mul(v[0], v[1]))?;
    let ps = vec![r(&[5], rng)];
    run("scale", ps, TOL_SMOOTH, rng, &|g, v| Ok(g.scale(v[0], -1.7)))?;
    let ps = vec![away_from_zero(&[4, 5], rng, KINK_MARGIN)];
    run("relu", ps, TOL_KINK, rng, &|g, v| Ok(g.relu(v[0])))?;
    let ps = vec![random_tensor(&[4, 5], rng, 3.0)];
    run("sigmoid", ps, TOL_SMOOTH, rng, &|g, v| Ok(g.sigmoid(v[0])))?;
    let ps = vec![r(&[6, 3], rng), r(&[2, 3], rng)];
    run("add_tiled", ps, TOL_SMOOTH, rng, &|g, v| g.add_tiled(v[0], v[1]))?;
    let ps = vec![r(&[2, 3, 4], rng)];
    run("mean_axis", ps, TOL_SMOOTH, rng, &|g, v| g.mean_axis(v[0], 1))?;
    let ps = vec![r(&[2, 3, 4], rng)];
    run("sum_mean", ps, TOL_SMOOTH, rng, &|g, v| {
        let m = g.mean(v[0]);
        let s = g.sum(v[0]);
        g.mul(m, s)
    })?;
    let ps = vec![r(&[3, 4], rng)];
    run("transpose_reshape", ps, TOL_SMOOTH, rng, &|g, v| {
        let t = g.transpose2d(v[0])?;
        g.reshape(t, &[2, 6])
    })?;
    let ps = vec![r(&[2, 2, 3, 2], rng), r(&[2, 2, 3, 3], rng)];
    run("concat", ps, TOL_SMOOTH, rng, &|g, v| g.concat_last(v[0], v[1]))?;
    let ps = vec![r(&[3, 4], rng), r(&[4, 2], rng)];
    run("matmul", ps, TOL_SMOOTH, rng, &|g, v| g.matmul(v[0], v[1]))?;
    let ps = vec![r(&[5, 4], rng), r(&[4, 3], rng), r(&[3], rng)];
    run("linear", ps, TOL_SMOOTH, rng, &|g, v| g.linear(v[0], v[1], Some(v[2])))?;
    let ps = vec![r(&[4, 5, 3, 2], rng), r(&[3, 2, 3, 3], rng), r(&[3], rng)];
    run("band_conv2d", ps, TOL_SMOOTH, rng, &|g, v| g.band_conv2d(v[0], v[1], v[2], BandFilters::Shared))?;
    let ps = vec![r(&[4, 3, 3, 2], rng), r(&[3, 2, 2, 3, 3], rng), r(&[2], rng)];
    run("band_conv2d_per_band", ps, TOL_SMOOTH, rng, &|g, v| {
        g.band_conv2d(v[0], v[1], v[2], BandFilters::PerBand)
    })?;
    let ps = vec![r(&[3, 4, 3, 2], rng), r(&[2, 2, 3, 3, 3], rng), r(&[2], rng)];
    run("conv3d", ps, TOL_SMOOTH, rng, &|g, v| g.conv3d(v[0], v[1], v[2]))?;
    let ps = vec![well_separated(&[4, 3, 5, 2], rng, KINK_MARGIN)];
    run("maxpool3", ps, TOL_KINK, rng, &|g, v| g.maxpool3(v[0]))?;
    let ps = vec![r(&[2, 3, 2, 2], rng)];
    run("upsample3", ps, TOL_SMOOTH, rng, &|g, v| g.upsample3_to(v[0], [4, 5, 3]))?;
    let ps = vec![r(&[5, 8], rng), r(&[8], rng), r(&[8], rng)];
    run("layer_norm", ps, TOL_SMOOTH, rng, &|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))?;
    let ps = vec![r(&[3, 2, 3, 8], rng), r(&[8], rng), r(&[8], rng)];
    run("group_norm", ps, TOL_SMOOTH, rng, &|g, v| g.group_norm(v[0], v[1], v[2], 4, 1e-5, false))?;
    let ps = vec![r(&[4, 4, 3, 8], rng), r(&[3, 8], rng), r(&[3, 8], rng)];
    run("spectral_norm", ps, TOL_SMOOTH, rng, &|g, v| g.group_norm(v[0], v[1], v[2], 4, 1e-5, true))?;
    let ps = vec![random_tensor(&[8, 12], rng, 1.5)];
    run("attention_softmax", ps, TOL_SMOOTH, rng, &|g, v| {
        g.attention(v[0], None, 2, 4, AttentionKind::Softmax)
    })?;
    let ps = vec![random_tensor(&[8, 12], rng, 1.5), r(&[2], rng)];
    run("attention_entmax", ps, TOL_KINK, rng, &|g, v| {
        g.attention(v[0], Some(v[1]), 2, 4, AttentionKind::Entmax)
    })?;
    Ok(out)
}

/// Points and tolerances of the entmax checks.
pub const ENTMAX_POINTS: usize = 50;
pub const ENTMAX_INPUT_TOL: f64 = 1e-4;
pub const ENTMAX_ALPHA_TOL: f64 = 1e-3;
/// Tolerance of the transformer-block and whole-network checks.
pub const NETWORK_TOL: f64 = 1e-3;
/// Minimum distance of every scaled score from the entmax threshold.
pub const SUPPORT_MARGIN: f64 = 1e-2;

/// Input VJP and α-derivative of entmax against central differences of
/// `gᵀ entmax(x; α)` on random points with `α ∈ [1.1, 1.9]`.
///
/// Entmax is only once differentiable where an entry enters the support, so
/// points with some `(α-1) x_i - τ` within [`SUPPORT_MARGIN`] of zero are
/// redrawn, as kinks are for the other primitives.
pub fn entmax_suite(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let (mut worst_x, mut worst_a) = (0.0f64, 0.0f64);
    let phi = |x: &[f64], a: f64, g: &[f64]| -> Result<f64> {
        let p = entmax_forward(x, a)?.p;
        Ok(p.iter().zip(g).map(|(p, g)| p * g).sum())
    };
    let mut accepted = 0;
    while accepted < ENTMAX_POINTS {
        let n = rng.gen_range(2..=8);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let alpha = rng.gen_range(1.1..1.9);
        let res = entmax_forward(&x, alpha)?;
        if x.iter().any(|&v| ((alpha - 1.0) * v - res.tau).abs() < SUPPORT_MARGIN) {
            continue;
        }
        accepted += 1;
        let vjp = entmax_input_vjp(&res, alpha, &g);
        let h = 1e-4;
        for i in 0..n {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let numeric = (phi(&up, alpha, &g)? - phi(&down, alpha, &g)?) / (2.0 * h);
            worst_x = worst_x.max(rel_err(vjp[i], numeric));
        }
        let analytic = entmax_alpha_grad(&x, alpha, &g)?;
        let h = 1e-5;
        let numeric = (phi(&x, alpha + h, &g)? - phi(&x, alpha - h, &g)?) / (2.0 * h);
        worst_a = worst_a.max(rel_err(analytic, numeric));
    }
    Ok(vec![
        GradCheckReport {
            name: "entmax_input_vjp".into(),
            checked: ENTMAX_POINTS,
            skipped: 0,
            max_rel_err: worst_x,
            tolerance: ENTMAX_INPUT_TOL,
        },
        GradCheckReport {
            name: "entmax_alpha".into(),
            checked: ENTMAX_POINTS,
            skipped: 0,
            max_rel_err: worst_a,
            tolerance: ENTMAX_ALPHA_TOL,
        },
    ])
}

/// One transformer block (entmax attention, 2 heads, L' = 5) with the
/// gradient of `Σ output` checked on 50 sampled parameters.
pub fn transformer_suite(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let shape = TransformerShape {
        channels: 8,
        d_model: 8,
        heads: 2,
        seq_len: 5,
        mlp_hidden: 16,
        kind: AttentionKind::Entmax,
    };
    let mut store = ParamStore::<f64>::new();
    init_transformer(&mut store, "tf", &shape, rng)?;
    // attention scores of a freshly initialized block are tiny; larger
    // weights exercise non-trivial supports
    for name in ["tf.qkv.weight", "tf.qkv.bias"] {
        store.get_mut(name)?.data_mut().iter_mut().for_each(|v| *v *= 4.0);
    }
    let mut params: Vec<Tensor<f64>> = store.tensors().to_vec();
    params.push(random_tensor(&[3 * shape.seq_len, shape.d_model], rng, 1.0));
    let np = store.len();
    check_gradients(
        "transformer_block",
        &params,
        |g, v| {
            let b = store.bind_vars(v[..np].to_vec())?;
            let (out, _) = transformer_block(g, v[np], &b, "tf", &shape)?;
            Ok(g.sum(out))
        },
        FdOptions::new(1e-4, NETWORK_TOL, Some(50)).screened(),
        rng,
    )
}

/// Spectral normalization (per-band group norm) checked through a random
/// projection on 50 sampled coordinates.
pub fn spectral_norm_suite(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let params = vec![
        random_tensor(&[4, 4, 3, 8], rng, 1.0),
        random_tensor(&[3, 8], rng, 1.0),
        random_tensor(&[3, 8], rng, 1.0),
    ];
    let seed = rng.gen();
    check_gradients(
        "spectral_normalize",
        &params,
        |g, v| {
            let y = spectral_normalize_var(g, v[0], v[1], v[2], DEFAULT_GROUPS, DEFAULT_EPS)?;
            project(g, y, seed)
        },
        FdOptions::new(H, TOL_SMOOTH, Some(50)),
        rng,
    )
}

/// Dice + BCE loss of the whole network on an `8 x 8 x 8` cube with base
/// width 4, checked on 100 sampled parameters.
pub fn network_suite(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = ModelConfig { bands: 8, base_channels: 4, heads: 2, ..ModelConfig::default() };
    let model = SpecTr::<f64>::new(cfg, rng)?;
    let cube = Tensor::from_fn(&[8, 8, 8, 1], |_| rng.gen_range(0.0..1.0));
    let target = Tensor::from_fn(&[8, 8], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let params = model.params().tensors().to_vec();
    check_gradients(
        "network_loss",
        &params,
        |g, v| {
            let b = model.params().bind_vars(v.to_vec())?;
            let x = g.input(cube.clone());
            let out = model.forward(g, &b, x, ForwardOptions::default())?;
            let t = g.input(target.clone());
            g.dice_bce_loss(out.prob_map, t)
        },
        FdOptions::new(1e-5, NETWORK_TOL, Some(100)).screened(),
        rng,
    )
}

/// Every suite: primitives, entmax, spectral normalization, one transformer
/// block and the whole network.
pub fn full_suite(rng: &mut ChaCha8Rng) -> Result<Vec<GradCheckReport>> {
    let mut out = primitive_suite(rng)?;
    out.extend(entmax_suite(rng)?);
    out.push(spectral_norm_suite(rng)?);
    out.push(transformer_suite(rng)?);
    out.push(network_suite(rng)?);
    Ok(out)
}

/// Fails with a numeric error naming the first breached check.
pub fn require_all(reports: &[GradCheckReport]) -> Result<()> {
    match reports.iter().find(|r| !r.passed()) {
        Some(r) => Err(Error::Numeric(format!(
            "gradient check {} failed: max rel err {:.3e} >= {:.0e}",
            r.name, r.max_rel_err, r.tolerance
        ))),
        None => Ok(()),
    }
}
