//! Central finite-difference checks of every analytic backward pass.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{Model, ModelConfig};
use crate::geometry::{render_heatmap, BBox, GridSpec};
use crate::losses::{dfl, dfl_grad, heatmap_loss, nc_dfl_with_draw, noise_calibrate, BinDistribution, LossWeights, NoiseConfig, NoiseSampler};
use crate::nn::alff::AlffParams;
use crate::nn::conv::ConvBlock;
use crate::nn::lstm::{lstm_cell_backward, lstm_cell_forward, LstmState, LstmWeights};
use crate::nn::Parameterized;
use crate::objective::{loss_and_grad, loss_only, NoiseDraws};
use crate::tensor::Tensor3;

pub const STEP: f64 = 1e-5;
pub const UNIT_TOL: f64 = 1e-4;
pub const PIPELINE_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-5;

pub const UNITS: [&str; 7] = [
    "lstm_cell",
    "conv_block",
    "alff",
    "dfl",
    "nc_dfl",
    "heatmap_loss",
    "full_pipeline",
];

#[derive(Debug, Clone, PartialEq)]
pub struct UnitReport {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
    pub checked: usize,
}

impl UnitReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub seed: u64,
    pub units: Vec<UnitReport>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.units.iter().all(UnitReport::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.units.iter().filter(|u| !u.passed()).map(|u| u.name).collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck seed {}", self.seed)?;
        for u in &self.units {
            writeln!(
                f,
                "{:<14} worst {:.3e}  tol {:.0e}  coords {:>5}  {}",
                u.name,
                u.worst,
                u.tol,
                u.checked,
                if u.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error of `grad` against central differences of `f` at `theta`.
fn compare(theta: &[f64], grad: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(theta.len(), grad.len());
    let mut x = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let plus = f(&x);
        x[i] = orig - STEP;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

/// Perturbs the largest analytic entry; used to prove the checker bites.
fn corrupt(grad: &mut [f64]) {
    if let Some((i, _)) = grad.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
        grad[i] = grad[i] * 1.01 + 1e-3;
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn flat<P: Parameterized>(p: &P) -> Vec<f64> {
    p.params().iter().flat_map(|t| t.data.iter().copied()).collect()
}

fn load_flat<P: Parameterized>(p: &mut P, theta: &[f64]) {
    let mut k = 0;
    for t in p.params_mut() {
        t.copy_from_slice(&theta[k..k + t.len()]);
        k += t.len();
    }
}

/// `r . (out - base)`: the same gradient as `r . out`, but the sum stays small
/// so rounding in the reduction does not swamp tiny derivatives.
fn probe(out: &[f64], base: &[f64], r: &[f64]) -> f64 {
    out.iter().zip(base).zip(r).map(|((o, b), r)| r * (o - b)).sum()
}

fn lstm_unit(rng: &mut ChaCha8Rng, bad: bool) -> (f64, usize) {
    let (input, hidden, cols) = (3, 2, 3);
    let wts = LstmWeights::new(input, hidden, rng);
    let x = random_vec(rng, input * cols, 1.0);
    let h0 = random_vec(rng, hidden * cols, 0.5);
    let c0 = random_vec(rng, hidden * cols, 0.5);
    let (ra, rb) = (random_vec(rng, hidden * cols, 1.0), random_vec(rng, hidden * cols, 1.0));
    let (nx, nh) = (x.len(), h0.len());

    let split = |theta: &[f64]| {
        let mut w = wts.clone();
        load_flat(&mut w, &theta[nx + 2 * nh..]);
        let state = LstmState {
            h: theta[nx..nx + nh].to_vec(),
            c: theta[nx + nh..nx + 2 * nh].to_vec(),
            columns: cols,
        };
        (theta[..nx].to_vec(), state, w)
    };
    let theta: Vec<f64> = [x.clone(), h0.clone(), c0.clone(), flat(&wts)].concat();
    let (xv, s, w) = split(&theta);
    let (base, cache) = lstm_cell_forward(&xv, &s, &w).expect("valid shapes");
    let f = |theta: &[f64]| {
        let (x, s, w) = split(theta);
        let (next, _) = lstm_cell_forward(&x, &s, &w).expect("valid shapes");
        probe(&next.h, &base.h, &ra) + probe(&next.c, &base.c, &rb)
    };
    let g = lstm_cell_backward(&ra, &rb, &cache, &w).expect("fresh cache");
    let mut grad = [g.x, g.state.h, g.state.c, flat(&g.weights)].concat();
    if bad {
        corrupt(&mut grad);
    }
    (compare(&theta, &grad, &f), theta.len())
}

fn conv_unit(rng: &mut ChaCha8Rng, bad: bool) -> (f64, usize) {
    let block = ConvBlock::new(2, 3, 2, true, rng);
    let input = random_vec(rng, 2 * 5 * 5, 1.0);
    let r = random_vec(rng, 3 * 3 * 3, 1.0);
    let ni = input.len();
    let split = |theta: &[f64]| {
        let mut b = block.clone();
        load_flat(&mut b, &theta[ni..]);
        (Tensor3::from_vec(2, 5, 5, theta[..ni].to_vec()).expect("size"), b)
    };
    let theta = [input, flat(&block)].concat();
    let (x, b) = split(&theta);
    let (base, cache) = b.forward(&x).expect("shapes");
    let f = |theta: &[f64]| {
        let (x, b) = split(theta);
        probe(b.forward(&x).expect("shapes").0.data(), base.data(), &r)
    };
    let mut grads = b.zeros_like();
    let dx = b
        .backward(&cache, &Tensor3::from_vec(3, 3, 3, r.clone()).expect("size"), &mut grads)
        .expect("shapes");
    let mut grad = [dx.into_vec(), flat(&grads)].concat();
    if bad {
        corrupt(&mut grad);
    }
    (compare(&theta, &grad, &f), theta.len())
}

fn alff_unit(rng: &mut ChaCha8Rng, bad: bool) -> (f64, usize) {
    let (c, h, w) = (2, 4, 4);
    let params = AlffParams::new(c, 2, rng);
    let input = random_vec(rng, c * h * w, 1.0);
    let r = random_vec(rng, 8 * h * 8 * w, 1.0);
    let ni = input.len();
    let split = |theta: &[f64]| {
        let mut p = params.clone();
        load_flat(&mut p, &theta[ni..]);
        (Tensor3::from_vec(c, h, w, theta[..ni].to_vec()).expect("size"), p)
    };
    let theta = [input, flat(&params)].concat();
    let (x, p) = split(&theta);
    let (base, cache) = p.forward(&x).expect("shapes");
    let f = |theta: &[f64]| {
        let (x, p) = split(theta);
        probe(p.forward(&x).expect("shapes").0.data(), base.data(), &r)
    };
    let mut grads = p.zeros_like();
    let dx = p
        .backward(&cache, &Tensor3::from_vec(1, 8 * h, 8 * w, r.clone()).expect("size"), &mut grads)
        .expect("shapes");
    let mut grad = [dx.into_vec(), flat(&grads)].concat();
    if bad {
        corrupt(&mut grad);
    }
    (compare(&theta, &grad, &f), theta.len())
}

/// DFL (optionally against a calibrated target) at several targets, including
/// the upper edge.
fn dfl_unit(rng: &mut ChaCha8Rng, noise: Option<(NoiseConfig, f64)>, bad: bool) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for y in [0.0, 4.3, rng.random_range(0.0..15.0), 14.6, 15.0] {
        let target = match noise {
            Some((cfg, xi)) => noise_calibrate(y, &cfg, xi, 15.0),
            None => y,
        };
        let logits = random_vec(rng, 16, 2.0);
        let f = |z: &[f64]| {
            let d = BinDistribution::from_logits(z.to_vec()).expect("finite");
            match noise {
                Some((cfg, xi)) => nc_dfl_with_draw(&d, y, &cfg, xi),
                None => dfl(&d, y),
            }
            .expect("in range")
        };
        let mut grad = dfl_grad(&BinDistribution::from_logits(logits.clone()).expect("finite"), target).expect("in range");
        if bad {
            corrupt(&mut grad);
        }
        worst = worst.max(compare(&logits, &grad, &f));
        checked += logits.len();
    }
    (worst, checked)
}

fn heatmap_unit(rng: &mut ChaCha8Rng, bad: bool) -> (f64, usize) {
    let spec = GridSpec::new(64, 64, 8).expect("divisible");
    let boxes = [
        BBox::new(4.0, 4.0, 28.0, 30.0).expect("valid"),
        BBox::new(30.0, 20.0, 60.0, 52.0).expect("valid"),
    ];
    let target = render_heatmap(&boxes, &spec).expect("inside image");
    let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
    let f = |p: &[f64]| {
        heatmap_loss(&Tensor3::from_vec(1, 8, 8, p.to_vec()).expect("size"), &target)
            .expect("shapes")
            .0
    };
    let (_, g) = heatmap_loss(&Tensor3::from_vec(1, 8, 8, pred.clone()).expect("size"), &target).expect("shapes");
    let mut grad = g.into_vec();
    if bad {
        corrupt(&mut grad);
    }
    (compare(&pred, &grad, &f), pred.len())
}

/// Whole network plus every loss term on a 32x32 image with reduced widths.
fn pipeline_unit(rng: &mut ChaCha8Rng, seed: u64, bad: bool) -> (f64, usize) {
    let model = Model::new(ModelConfig::tiny(), seed);
    let image = Tensor3::from_vec(3, 32, 32, random_vec(rng, 3 * 32 * 32, 1.0)).expect("size");
    let gts = vec![
        BBox::new(3.0, 5.0, 14.0, 17.0).expect("valid"),
        BBox::new(15.0, 11.0, 29.0, 28.0).expect("valid"),
        BBox::new(20.0, 2.0, 26.0, 8.0).expect("valid"),
    ];
    let weights = LossWeights::default();
    let noise = NoiseConfig::default();
    let f = |theta: &[f64]| {
        let mut m = model.clone();
        load_flat(&mut m, theta);
        let mut sampler = NoiseSampler::new(seed);
        let nd = NoiseDraws {
            config: &noise,
            sampler: &mut sampler,
        };
        loss_only(&m, &image, &gts, &weights, Some(nd)).expect("finite loss")
    };
    let mut sampler = NoiseSampler::new(seed);
    let nd = NoiseDraws {
        config: &noise,
        sampler: &mut sampler,
    };
    let e = loss_and_grad(&model, &image, &gts, &weights, Some(nd), 0).expect("finite loss");
    let theta = flat(&model);
    let mut grad = flat(&e.grads);
    if bad {
        corrupt(&mut grad);
    }
    (compare(&theta, &grad, &f), theta.len())
}

/// Runs every unit. `corrupt_unit` names a unit whose analytic gradient is
/// deliberately perturbed.
pub fn run(seed: u64, corrupt_unit: Option<&str>) -> Report {
    let units = UNITS
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(k as u64));
            let bad = corrupt_unit == Some(name);
            let (worst, checked) = match name {
                "lstm_cell" => lstm_unit(&mut rng, bad),
                "conv_block" => conv_unit(&mut rng, bad),
                "alff" => alff_unit(&mut rng, bad),
                "dfl" => dfl_unit(&mut rng, None, bad),
                "nc_dfl" => {
                    let cfg = NoiseConfig::default();
                    dfl_unit(&mut rng, Some((cfg, 0.7)), bad)
                }
                "heatmap_loss" => heatmap_unit(&mut rng, bad),
                "full_pipeline" => pipeline_unit(&mut rng, seed, bad),
                _ => unreachable!("unit list is fixed"),
            };
            UnitReport {
                name,
                worst,
                tol: if name == "full_pipeline" { PIPELINE_TOL } else { UNIT_TOL },
                checked,
            }
        })
        .collect();
    Report { seed, units }
}
