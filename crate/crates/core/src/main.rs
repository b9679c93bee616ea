use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use alff::checkpoint::Checkpoint;
use alff::config::{RunConfig, SEED_ENV};
use alff::data::{make_split, Dataset, Profile};
use alff::detector::DEFAULT_NMS_IOU;
use alff::geometry::{render_heatmap, GridSpec};
use alff::train::{evaluate_with, format_detections_csv, train, EVAL_SCORE_THR};
use alff::{gradcheck, pgm};

#[derive(Parser)]
#[command(name = "alff", version, about = "Toy anchor-free head detector")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        profile: Profile,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint and a per-step loss CSV.
    Train {
        /// `key = value` config file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, action = clap::ArgAction::Set)]
        enable_alff: Option<bool>,
        #[arg(long, action = clap::ArgAction::Set)]
        enable_ncdfl: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Any config key, as `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// AP50 / AP75 / AP50-95 of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Metrics CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Detections CSV path.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, default_value_t = EVAL_SCORE_THR)]
        score_thr: f64,
        #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
        iou_thr: f64,
    },
    /// Dump the ground-truth heatmap of one image as PGM.
    Heatmap {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        image_id: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        /// Perturb the named unit's analytic gradient (checker self-test).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?}"))?)),
        Err(_) => Ok(None),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth { profile, n, seed, out } => {
            let seed = seed.or(env_seed()?).unwrap_or(0);
            let data = make_split(profile, n, seed, &out)?;
            let stats = data.stats()?;
            println!(
                "wrote {} images in {} scenes to {} (split {})",
                data.images.len(),
                stats.scenes.len(),
                out.display(),
                stats.label().map_or("mixed".to_string(), |l| l.to_string())
            );
        }
        Cmd::Train {
            config,
            dataset,
            epochs,
            batch_size,
            lr,
            model,
            enable_alff,
            enable_ncdfl,
            seed,
            checkpoint,
            loss_csv,
            overrides,
            resume,
            print_config,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            cfg.apply_env()?;
            for kv in &overrides {
                let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
                cfg.set(k.trim(), v.trim()).map_err(|e| anyhow::anyhow!("--set {kv}: {e}"))?;
            }
            if let Some(v) = dataset {
                cfg.dataset = v;
            }
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = lr {
                cfg.lr = v;
            }
            if let Some(v) = model {
                cfg.model = v.parse()?;
            }
            if let Some(v) = enable_alff {
                cfg.enable_alff = v;
            }
            if let Some(v) = enable_ncdfl {
                cfg.enable_ncdfl = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = checkpoint {
                cfg.checkpoint = v;
            }
            if let Some(v) = loss_csv {
                cfg.loss_csv = v;
            }
            if print_config {
                print!("{}", cfg.to_text());
                return Ok(());
            }
            let trainer = train(cfg, resume.as_deref(), |t| {
                let last = t.log.last().map_or(f64::NAN, |r| r.total);
                eprintln!("epoch {:>3}  step {:>6}  loss {:.5}", t.epoch, t.step, last);
            })?;
            println!(
                "trained {} epochs ({} steps); checkpoint {}",
                trainer.epoch,
                trainer.step,
                trainer.cfg.checkpoint.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            dataset,
            out,
            detections,
            score_thr,
            iou_thr,
        } => {
            if !(0.0..=1.0).contains(&score_thr) || !(0.0..=1.0).contains(&iou_thr) {
                bail!("thresholds must lie in [0, 1]");
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = Dataset::load(&dataset)?;
            let (summary, dets) = evaluate_with(&ckpt.model, &data, score_thr, iou_thr)?;
            println!("{summary}");
            if let Some(p) = out {
                write_file(&p, summary.to_csv())?;
            }
            if let Some(p) = detections {
                write_file(&p, format_detections_csv(&dets))?;
            }
        }
        Cmd::Heatmap {
            dataset,
            image_id,
            out,
            stride,
        } => {
            let data = Dataset::load(&dataset)?;
            let entry = data.get(image_id)?;
            let spec = GridSpec::new(entry.width, entry.height, stride)?;
            let target = render_heatmap(&entry.boxes, &spec)?;
            let pixels = pgm::quantize(target.grid.data());
            pgm::write(&out, spec.grid_w(), spec.grid_h(), &pixels)?;
            println!("wrote {}x{} heatmap to {}", spec.grid_w(), spec.grid_h(), out.display());
        }
        Cmd::Gradcheck { seed, corrupt } => {
            let seed = seed.or(env_seed()?).unwrap_or(0);
            if let Some(u) = &corrupt {
                if !gradcheck::UNITS.contains(&u.as_str()) {
                    bail!("unknown unit {u:?}; units: {}", gradcheck::UNITS.join(", "));
                }
            }
            let report = gradcheck::run(seed, corrupt.as_deref());
            print!("{report}");
            if !report.passed() {
                bail!("gradient check failed: {}", report.failures().join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
