//! Run configuration: `key = value` text with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::detector::ModelPreset;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, NoiseConfig, NoiseMode};

pub const SEED_ENV: &str = "ALFF_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub image_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub mu: f64,
    pub sigma_n: f64,
    pub mode: NoiseMode,
    pub w_box: f64,
    pub w_cls: f64,
    pub w_dfl: f64,
    pub w_aux: f64,
    pub enable_alff: bool,
    pub enable_ncdfl: bool,
    pub model: ModelPreset,
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            image_size: 160,
            epochs: 50,
            batch_size: 16,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            alpha: 1.0,
            mu: 0.0,
            sigma_n: 1.0,
            mode: NoiseMode::Inflate,
            w_box: 1.0,
            w_cls: 0.5,
            w_dfl: 1.5,
            w_aux: 1.0,
            enable_alff: true,
            enable_ncdfl: true,
            model: ModelPreset::Standard,
            seed: 0,
            checkpoint: PathBuf::from("alff.ckpt"),
            loss_csv: PathBuf::from("loss.csv"),
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

impl RunConfig {
    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            alpha: self.alpha,
            mu: self.mu,
            sigma_n: self.sigma_n,
            mode: self.mode,
            seed: self.seed,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_box: self.w_box,
            w_cls: self.w_cls,
            w_dfl: self.w_dfl,
            w_aux: self.w_aux,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return bad(format!("image_size must be a positive multiple of 32, got {}", self.image_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        self.noise().validate()?;
        self.weights().validate()
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "image_size" => self.image_size = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "lr" => self.lr = num(value)?,
            "momentum" => self.momentum = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "alpha" => self.alpha = num(value)?,
            "mu" => self.mu = num(value)?,
            "sigma_n" => self.sigma_n = num(value)?,
            "mode" => self.mode = value.parse().map_err(|e: Error| e.to_string())?,
            "w_box" => self.w_box = num(value)?,
            "w_cls" => self.w_cls = num(value)?,
            "w_dfl" => self.w_dfl = num(value)?,
            "w_aux" => self.w_aux = num(value)?,
            "enable_alff" => self.enable_alff = parse_bool(value)?,
            "enable_ncdfl" => self.enable_ncdfl = parse_bool(value)?,
            "model" => self.model = value.parse().map_err(|e: Error| e.to_string())?,
            "seed" => self.seed = num(value)?,
            "checkpoint" => self.checkpoint = PathBuf::from(value),
            "loss_csv" => self.loss_csv = PathBuf::from(value),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Replaces the seed with `ALFF_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}={v:?}: {e}")))?;
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.display().to_string());
        kv("image_size", self.image_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("alpha", self.alpha.to_string());
        kv("mu", self.mu.to_string());
        kv("sigma_n", self.sigma_n.to_string());
        kv("mode", self.mode.to_string());
        kv("w_box", self.w_box.to_string());
        kv("w_cls", self.w_cls.to_string());
        kv("w_dfl", self.w_dfl.to_string());
        kv("w_aux", self.w_aux.to_string());
        kv("enable_alff", self.enable_alff.to_string());
        kv("enable_ncdfl", self.enable_ncdfl.to_string());
        kv("model", self.model.to_string());
        kv("seed", self.seed.to_string());
        kv("checkpoint", self.checkpoint.display().to_string());
        kv("loss_csv", self.loss_csv.display().to_string());
        s
    }
}
