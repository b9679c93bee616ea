//! Acceptance criteria, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line (visible with `--nocapture`) and asserts on it.

use std::fs;
use std::path::Path;
use std::time::Instant;

use alff::checkpoint::Checkpoint;
use alff::config::RunConfig;
use alff::data::{make_split, Dataset, Profile};
use alff::detector::{Detection, Model, ModelPreset};
use alff::evaluation::{average_precision, coco_thresholds, density_split, Density};
use alff::geometry::{render_heatmap, render_single, GridSpec};
use alff::gradcheck;
use alff::losses::{dfl, nc_dfl, BinDistribution, NoiseConfig, NoiseMode, NoiseSampler};
use alff::nn::lstm::{lstm_cell_forward, lstm_sequence_forward, LstmState, LstmWeights};
use alff::train::{evaluate, format_detections_csv, train};
use alff::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{brute_force_ap, oracle_nc_mean};

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {criterion} ({name}): {detail}");
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let r = gradcheck::run(0, None);
    let secs = start.elapsed().as_secs_f64();
    let worst: Vec<String> = r.units.iter().map(|u| format!("{}={:.1e}", u.name, u.worst)).collect();
    let tols_ok = r
        .units
        .iter()
        .all(|u| u.tol == if u.name == "full_pipeline" { 1e-3 } else { 1e-4 });
    report(
        1,
        "gradient correctness",
        r.passed() && tols_ok && r.units.len() == 7 && secs < 120.0,
        &format!("{} in {secs:.1}s", worst.join(" ")),
    );
}

#[test]
fn criterion_2_heatmap_units() {
    let spec = GridSpec::new(32, 32, 1).unwrap();
    // 3 px square centred on cell (11, 11): sigma = 1 cell, support radius 3 cells
    let head = bx(10.0, 10.0, 13.0, 13.0);
    let g = render_single(&head, &spec).unwrap();
    let centre = g.get(0, 11, 11) == 1.0;
    let at_sigma = (g.get(0, 11, 12) - (-0.5f64).exp()).abs() <= 1e-12
        && (g.get(0, 10, 11) - (-0.5f64).exp()).abs() <= 1e-12;
    let mut outside_zero = true;
    for y in 0..32 {
        for x in 0..32 {
            let d = ((x as f64 - 11.0).powi(2) + (y as f64 - 11.0).powi(2)).sqrt();
            if d > 3.0 && g.get(0, y, x) != 0.0 {
                outside_zero = false;
            }
        }
    }

    // at stride 8: a 48 px head has sigma 2 cells
    let s8 = GridSpec::new(160, 160, 8).unwrap();
    let big = bx(44.0, 44.0, 92.0, 92.0);
    let h8 = render_single(&big, &s8).unwrap();
    let stride8 = (h8.get(0, 8, 9) - (-1.0f64 / 8.0).exp()).abs() <= 1e-12;

    // overlapping heads: every cell clamped to at most 1
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clamped = true;
    for _ in 0..50 {
        let boxes: Vec<BBox> = (0..6)
            .map(|_| {
                let (x, y) = (rng.random_range(8..16) as f64, rng.random_range(8..16) as f64);
                let s = rng.random_range(3..9) as f64;
                bx(x, y, x + s, y + s)
            })
            .collect();
        let t = render_heatmap(&boxes, &spec).unwrap();
        clamped &= t.grid.data().iter().all(|&v| (0.0..=1.0).contains(&v));
    }
    report(
        2,
        "heatmap units",
        centre && at_sigma && outside_zero && stride8 && clamped,
        &format!("centre={centre} sigma={at_sigma} truncation={outside_zero} stride8={stride8} clamp={clamped}"),
    );
}

/// Scalar LSTM step written out longhand.
fn scalar_lstm(x: f64, h: f64, c: f64, w: f64) -> (f64, f64) {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let z = w * x + w * h;
    let (i, f, g, o) = (sig(z), sig(z), z.tanh(), sig(z));
    let c = f * c + i * g;
    (o * c.tanh(), c)
}

#[test]
fn criterion_3_scalar_lstm() {
    let mut w = LstmWeights::zeros(1, 1);
    for m in [
        &mut w.w_ii, &mut w.w_if, &mut w.w_ig, &mut w.w_io, &mut w.w_hi, &mut w.w_hf, &mut w.w_hg, &mut w.w_ho,
    ] {
        m[0] = 1.0;
    }
    let (s, _) = lstm_cell_forward(&[1.0], &LstmState::zeros(1, 1), &w).unwrap();
    let (want, _) = scalar_lstm(1.0, 0.0, 0.0, 1.0);
    let single = (s.h[0] - want).abs() <= 1e-4;

    // a 3-step sequence equals three chained single steps, bit for bit
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let wts = LstmWeights::new(4, 3, &mut rng);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let init = LstmState::single(vec![0.1, -0.2, 0.3], vec![0.0, 0.5, -0.5]);
    let (seq, _) = lstm_sequence_forward(&refs, &init, &wts).unwrap();
    let mut state = init;
    let mut exact = true;
    for (k, x) in xs.iter().enumerate() {
        state = lstm_cell_forward(x, &state, &wts).unwrap().0;
        exact &= state == seq[k];
    }
    // and the longhand scalar recurrence over three steps
    let mut st = LstmState::zeros(1, 1);
    let (mut h, mut c) = (0.0, 0.0);
    let mut longhand = true;
    for x in [1.0, -0.5, 2.0] {
        st = lstm_cell_forward(&[x], &st, &w).unwrap().0;
        (h, c) = scalar_lstm(x, h, c, 1.0);
        longhand &= (st.h[0] - h).abs() <= 1e-15 && (st.c[0] - c).abs() <= 1e-15;
    }
    report(
        3,
        "scalar lstm",
        single && exact && longhand,
        &format!("h1={:.6} oracle={want:.6} compositional={exact} recurrence={longhand}", s.h[0]),
    );
}

#[test]
fn criterion_4_dfl_identities() {
    let mut zero_iff = true;
    for k in 0..16 {
        let one_hot = BinDistribution::one_hot(16, k);
        zero_iff &= dfl(&one_hot, k as f64).unwrap() == 0.0;
        if k < 15 {
            zero_iff &= dfl(&one_hot, k as f64 + 0.5).unwrap() > 0.0;
        }
        let mut soft = vec![0.01 / 15.0; 16];
        soft[k] = 0.99;
        zero_iff &= dfl(&BinDistribution::from_probs(soft).unwrap(), k as f64).unwrap() > 0.0;
    }

    let mut pair = vec![0.0; 16];
    pair[4] = 0.5;
    pair[5] = 0.5;
    let ln2 = (dfl(&BinDistribution::from_probs(pair).unwrap(), 4.5).unwrap() - 2f64.ln()).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sampler = NoiseSampler::new(5);
    let mut bit_identical = true;
    for case in 0..1000 {
        let logits: Vec<f64> = (0..16).map(|_| rng.random_range(-4.0..4.0)).collect();
        let d = BinDistribution::from_logits(logits).unwrap();
        let y = rng.random_range(0.0..=15.0);
        let cfg = NoiseConfig {
            alpha: 0.0,
            mu: rng.random_range(-1.0..1.0),
            sigma_n: rng.random_range(0.0..3.0),
            mode: if case % 2 == 0 { NoiseMode::Inflate } else { NoiseMode::Deflate },
            seed: case,
        };
        bit_identical &= nc_dfl(&d, y, &cfg, &mut sampler).unwrap().to_bits() == dfl(&d, y).unwrap().to_bits();
    }

    let logits: Vec<f64> = (0..16).map(|i| -0.08 * (i as f64 - 6.0).powi(2)).collect();
    let d = BinDistribution::from_logits(logits).unwrap();
    let n = 100_000;
    let mut worst = 0.0f64;
    for (mode, y, sigma_n) in [(NoiseMode::Inflate, 5.3, 1.0), (NoiseMode::Deflate, 9.6, 0.3)] {
        let cfg = NoiseConfig {
            alpha: 1.0,
            mu: 0.0,
            sigma_n,
            mode,
            seed: 3,
        };
        let mut s = NoiseSampler::new(21);
        let ours = (0..n).map(|_| nc_dfl(&d, y, &cfg, &mut s).unwrap()).sum::<f64>() / n as f64;
        let theirs = oracle_nc_mean(d.probs(), y, sigma_n, mode == NoiseMode::Inflate, n);
        worst = worst.max((ours - theirs).abs() / theirs);
    }
    report(
        4,
        "dfl identities",
        zero_iff && ln2 && bit_identical && worst < 0.01,
        &format!("zero_iff={zero_iff} ln2={ln2} alpha0_bits={bit_identical} mc_rel={worst:.2e}"),
    );
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<BBox>) {
    let mut b = || {
        let (x, y) = (rng.random_range(0..20) as f64, rng.random_range(0..20) as f64);
        let (w, h) = (rng.random_range(2..12) as f64, rng.random_range(2..12) as f64);
        bx(x, y, x + w, y + h)
    };
    let gts: Vec<BBox> = (0..4).map(|_| b()).collect();
    let dets: Vec<BBox> = (0..5).map(|_| b()).collect();
    let nd = rng.random_range(0..=5);
    let ng = rng.random_range(0..=4);
    let dets = dets[..nd]
        .iter()
        .map(|&bbox| Detection {
            bbox,
            score: rng.random_range(0..6) as f64 / 5.0,
        })
        .collect();
    (dets, gts[..ng].to_vec())
}

#[test]
fn criterion_5_ap_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut agree = 0;
    let mut total = 0;
    for _ in 0..2000 {
        let (dets, gts) = random_instance(&mut rng);
        for t in coco_thresholds() {
            total += 1;
            agree += (average_precision(&dets, &gts, t) == brute_force_ap(&dets, &gts, t)) as usize;
        }
    }
    let mut monotone = true;
    for _ in 0..200 {
        let (dets, gts) = random_instance(&mut rng);
        let aps: Vec<f64> = coco_thresholds().iter().map(|&t| average_precision(&dets, &gts, t)).collect();
        monotone &= aps.windows(2).all(|w| w[1] <= w[0]);
    }
    report(
        5,
        "ap oracle",
        agree == total && monotone,
        &format!("{agree}/{total} exact agreements, monotone={monotone}"),
    );
}

const ABLATION_EPOCHS: usize = 50;
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];
const ABLATION_CONFIGS: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];
/// Noise spread for the ablation; the config default of 1.0 inflates box
/// targets by ~80% on average at this scale.
const ABLATION_SIGMA_N: f64 = 0.1;

fn ablation_config(data: &Path, out: &Path, seed: u64, alff_on: bool, ncdfl_on: bool) -> RunConfig {
    RunConfig {
        dataset: data.to_path_buf(),
        epochs: ABLATION_EPOCHS,
        batch_size: 4,
        model: ModelPreset::Compact,
        enable_alff: alff_on,
        enable_ncdfl: ncdfl_on,
        sigma_n: ABLATION_SIGMA_N,
        seed,
        checkpoint: out.join(format!("s{seed}_{alff_on}_{ncdfl_on}.ckpt")),
        loss_csv: out.join(format!("s{seed}_{alff_on}_{ncdfl_on}.csv")),
        ..RunConfig::default()
    }
}

/// Returns whether both orderings hold for this seed, plus a summary line.
fn ablation_seed(train_dir: &Path, test: &Dataset, out: &Path, seed: u64) -> (bool, String) {
    let baseline = Model::new(ModelPreset::Compact.config(), seed);
    let base = evaluate(&baseline, test).unwrap().0;
    let mut ok = true;
    let mut line = format!("seed {seed}: random-init AP50 {:.3}", base.ap50);
    let mut on_on = 0.0;
    let mut off_off = 0.0;
    for (a, n) in ABLATION_CONFIGS {
        let trainer = train(ablation_config(train_dir, out, seed, a, n), None, |_| {}).unwrap();
        let s = evaluate(&trainer.model, test).unwrap().0;
        ok &= s.ap50 >= base.ap50 + 0.2;
        match (a, n) {
            (true, true) => on_on = s.ap50_95,
            (false, false) => off_off = s.ap50_95,
            _ => {}
        }
        line += &format!(
            ", alff={} ncdfl={} AP50 {:.3} AP50-95 {:.3}",
            a as u8, n as u8, s.ap50, s.ap50_95
        );
    }
    ok &= on_on >= off_off;
    (ok, line)
}

#[test]
fn criterion_6_desk_scale_ablation() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    make_split(Profile::Low, 200, 1, &train_dir).unwrap();
    let test = make_split(Profile::Low, 50, 1001, &dir.path().join("test")).unwrap();

    let mut passed = 0;
    let mut lines = Vec::new();
    for (k, &seed) in ABLATION_SEEDS.iter().enumerate() {
        let (ok, line) = ablation_seed(&train_dir, &test, dir.path(), seed);
        println!("  {} {line}", if ok { "ok  " } else { "miss" });
        passed += ok as usize;
        lines.push(line);
        // the remaining seeds cannot change the 2-of-3 outcome
        let left = ABLATION_SEEDS.len() - k - 1;
        if passed >= 2 || passed + left < 2 {
            break;
        }
    }
    let mins = start.elapsed().as_secs_f64() / 60.0;
    report(
        6,
        "desk-scale ablation",
        passed >= 2 && mins <= 60.0,
        &format!("{passed} of {} seeds hold, {mins:.1} min; {}", lines.len(), lines.join("; ")),
    );
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |tag: &str| {
        let data = d.join(format!("data_{tag}"));
        make_split(Profile::Low, 8, 4, &data).unwrap();
        let cfg = RunConfig {
            dataset: data.clone(),
            epochs: 2,
            batch_size: 4,
            model: ModelPreset::Tiny,
            seed: 9,
            checkpoint: d.join(format!("{tag}.ckpt")),
            loss_csv: d.join(format!("{tag}.csv")),
            ..RunConfig::default()
        };
        let trainer = train(cfg.clone(), None, |_| {}).unwrap();
        let dets = evaluate(&trainer.model, &Dataset::load(&data).unwrap()).unwrap().1;
        (
            tree_bytes(&data),
            fs::read(&cfg.checkpoint).unwrap(),
            fs::read(&cfg.loss_csv).unwrap(),
            format_detections_csv(&dets),
        )
    };
    let (a, b) = (run("a"), run("b"));
    let datasets = a.0 == b.0;
    let checkpoints = a.1 == b.1;
    let csvs = a.2 == b.2;
    let detections = a.3 == b.3;
    let reencode = Checkpoint::from_bytes(&a.1).unwrap().to_bytes() == a.1;
    report(
        7,
        "determinism",
        datasets && checkpoints && csvs && detections && reencode,
        &format!(
            "datasets={datasets} checkpoints={checkpoints} loss_csv={csvs} detections={detections} reencode={reencode}"
        ),
    );
}

#[test]
fn criterion_8_density_split() {
    let anchors = Density::classify(77.30) == Density::Low && Density::classify(256.68) == Density::High;
    let via_split = density_split(&[(0, vec![77, 78, 77]), (1, vec![256, 257, 257])]).unwrap();
    let split_labels = via_split.scenes[0].label == Density::Low && via_split.scenes[1].label == Density::High;
    let dir = tempfile::tempdir().unwrap();
    let low = make_split(Profile::Low, 30, 1, &dir.path().join("low")).unwrap();
    let high = make_split(Profile::High, 30, 1, &dir.path().join("high")).unwrap();
    let (ls, hs) = (low.stats().unwrap(), high.stats().unwrap());
    let generated = ls.label() == Some(Density::Low) && hs.label() == Some(Density::High);
    report(
        8,
        "density split",
        anchors && split_labels && generated,
        &format!(
            "anchors={anchors} split={split_labels} low scenes={:?} high scenes={:?}",
            ls.scenes.iter().map(|s| s.mean).collect::<Vec<_>>(),
            hs.scenes.iter().map(|s| s.mean).collect::<Vec<_>>()
        ),
    );
}
