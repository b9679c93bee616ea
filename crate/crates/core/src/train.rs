//! SGD training loop, per-step loss log and evaluation of a trained model.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{Dataset, ImageEntry};
use crate::detector::{postprocess, Detection, Model, DEFAULT_NMS_IOU};
use crate::error::{Error, Result};
use crate::evaluation::{ap_range_multi, ApSummary, EvalImage};
use crate::losses::{splitmix, total_loss, LossTerms, NoiseSampler};
use crate::nn::Parameterized;
use crate::objective::{loss_and_grad, NoiseDraws};

pub const LOSS_HEADER: &str = "step,box,cls,dfl,aux,total";

/// Score threshold used when collecting detections for AP.
pub const EVAL_SCORE_THR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub terms: LossTerms,
    pub total: f64,
}

impl LossRow {
    pub fn to_csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{}",
            self.step, t.box_iou, t.cls, t.dfl, t.aux, self.total
        )
    }
}

pub fn format_loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim() == LOSS_HEADER) {
            continue;
        }
        let err = |m: String| Error::Parse {
            path: "loss csv".into(),
            line: i + 1,
            message: m,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let v = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        rows.push(LossRow {
            step: f[0].parse().map_err(|e| err(format!("{:?}: {e}", f[0])))?,
            terms: LossTerms {
                box_iou: v(f[1])?,
                cls: v(f[2])?,
                dfl: v(f[3])?,
                aux: v(f[4])?,
            },
            total: v(f[5])?,
        });
    }
    Ok(rows)
}

/// Model, optimizer state and counters of a run in progress.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    pub momentum: Model,
    pub epoch: u64,
    pub step: u64,
    pub log: Vec<LossRow>,
}

/// Epoch order of the training images.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ 0x5_4FF1E) ^ epoch));
    order.shuffle(&mut rng);
    order
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model.config().with_alff(cfg.enable_alff), cfg.seed);
        let momentum = model.zeros_like();
        Ok(Self {
            cfg,
            model,
            momentum,
            epoch: 0,
            step: 0,
            log: Vec::new(),
        })
    }

    /// Continues from a checkpoint; `log` holds rows already written before it.
    pub fn resume(cfg: RunConfig, ckpt: Checkpoint, log: Vec<LossRow>) -> Result<Self> {
        cfg.validate()?;
        if ckpt.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint seed {} differs from configured seed {}",
                ckpt.seed, cfg.seed
            )));
        }
        if ckpt.model.alff.is_some() != cfg.enable_alff {
            return Err(Error::Config("checkpoint and config disagree on enable_alff".into()));
        }
        let log = log.into_iter().filter(|r| r.step < ckpt.step).collect();
        Ok(Self {
            cfg,
            model: ckpt.model,
            momentum: ckpt.momentum,
            epoch: ckpt.epoch,
            step: ckpt.step,
            log,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.epoch, self.step, self.cfg.seed, self.model.clone(), self.momentum.clone())
    }

    /// One optimizer step on a batch; returns the batch-mean losses.
    pub fn train_step(&mut self, batch: &[&ImageEntry]) -> Result<LossRow> {
        let weights = self.cfg.weights();
        let noise_cfg = self.cfg.noise();
        let mut grads = self.model.zeros_like();
        let mut terms = LossTerms::default();
        for entry in batch {
            let image = entry.tensor();
            let mut sampler = NoiseSampler::for_item(self.cfg.seed, self.step, entry.image_id as u64);
            let noise = self.cfg.enable_ncdfl.then(|| NoiseDraws {
                config: &noise_cfg,
                sampler: &mut sampler,
            });
            let e = loss_and_grad(&self.model, &image, &entry.boxes, &weights, noise, self.step)?;
            terms.add(&e.terms);
            grads.add_assign(&e.grads);
        }
        let inv = 1.0 / batch.len() as f64;
        let terms = terms.scaled(inv);
        let total = total_loss(&terms, &weights, self.step)?;
        grads.scale(inv);
        if let Some(p) = grads.params().iter().find(|p| p.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("gradient of {} is not finite", p.name),
            });
        }
        self.sgd(&grads);
        let row = LossRow {
            step: self.step,
            terms,
            total,
        };
        self.log.push(row);
        self.step += 1;
        Ok(row)
    }

    /// `v = m v + g + wd w` (decay on weight matrices only), `w -= lr v`.
    fn sgd(&mut self, grads: &Model) {
        let (lr, mom, wd) = (self.cfg.lr, self.cfg.momentum, self.cfg.weight_decay);
        let decay: Vec<bool> = self.model.params().iter().map(|p| p.shape.len() >= 2).collect();
        let g: Vec<&[f64]> = grads.params().into_iter().map(|p| p.data).collect();
        let params = self.model.params_mut();
        let vels = self.momentum.params_mut();
        for (((w, v), g), decay) in params.into_iter().zip(vels).zip(g).zip(decay) {
            let wd = if decay { wd } else { 0.0 };
            for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mom * *vi + gi + wd * *wi;
                *wi -= lr * *vi;
            }
        }
    }

    /// Runs one epoch over `data` in the seeded order.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<()> {
        let order = epoch_order(self.cfg.seed, self.epoch, data.images.len());
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&ImageEntry> = chunk.iter().map(|&i| &data.images[i]).collect();
            self.train_step(&batch)?;
        }
        self.epoch += 1;
        Ok(())
    }

    fn write_outputs(&self) -> Result<()> {
        self.checkpoint().save(&self.cfg.checkpoint)?;
        if let Some(dir) = self.cfg.loss_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&self.cfg.loss_csv, format_loss_csv(&self.log))?;
        Ok(())
    }

    /// Trains until `cfg.epochs`, saving the checkpoint and loss CSV after
    /// every epoch. `on_epoch` sees the trainer after each epoch.
    pub fn run(&mut self, data: &Dataset, mut on_epoch: impl FnMut(&Trainer)) -> Result<()> {
        check_dataset(data, self.cfg.image_size)?;
        while self.epoch < self.cfg.epochs as u64 {
            self.train_epoch(data)?;
            self.write_outputs()?;
            on_epoch(self);
        }
        if self.cfg.epochs == 0 {
            self.write_outputs()?;
        }
        Ok(())
    }
}

pub fn check_dataset(data: &Dataset, image_size: usize) -> Result<()> {
    if data.images.is_empty() {
        return Err(Error::Config(format!("dataset {} has no images", data.root.display())));
    }
    if let Some(e) = data
        .images
        .iter()
        .find(|e| e.width != image_size || e.height != image_size)
    {
        return Err(Error::Config(format!(
            "image {} is {}x{}, configured image_size is {image_size}",
            e.image_id, e.width, e.height
        )));
    }
    Ok(())
}

/// Fresh training run, or a resumed one when `resume` names a checkpoint.
pub fn train(cfg: RunConfig, resume: Option<&Path>, on_epoch: impl FnMut(&Trainer)) -> Result<Trainer> {
    let data = Dataset::load(&cfg.dataset)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let log = match fs::read_to_string(&cfg.loss_csv) {
                Ok(text) => parse_loss_csv(&text)?,
                Err(_) => Vec::new(),
            };
            Trainer::resume(cfg, ckpt, log)?
        }
        None => Trainer::new(cfg)?,
    };
    trainer.run(&data, on_epoch)?;
    Ok(trainer)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: u32,
    pub dets: Vec<Detection>,
}

pub fn detect(model: &Model, entry: &ImageEntry, score_thr: f64, iou_thr: f64) -> Result<Vec<Detection>> {
    let (head, _) = model.forward_full(&entry.tensor())?;
    Ok(postprocess(&head, score_thr, iou_thr))
}

pub fn evaluate_with(model: &Model, data: &Dataset, score_thr: f64, iou_thr: f64) -> Result<(ApSummary, Vec<ImageDetections>)> {
    // the auxiliary branch plays no part at inference
    let main = model.without_alff();
    let all: Vec<ImageDetections> = data
        .images
        .iter()
        .map(|e| {
            Ok(ImageDetections {
                image_id: e.image_id,
                dets: detect(&main, e, score_thr, iou_thr)?,
            })
        })
        .collect::<Result<_>>()?;
    let views: Vec<EvalImage<'_>> = all
        .iter()
        .zip(&data.images)
        .map(|(d, e)| EvalImage {
            dets: &d.dets,
            gts: &e.boxes,
        })
        .collect();
    Ok((ap_range_multi(&views), all))
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<(ApSummary, Vec<ImageDetections>)> {
    evaluate_with(model, data, EVAL_SCORE_THR, DEFAULT_NMS_IOU)
}

pub fn format_detections_csv(all: &[ImageDetections]) -> String {
    let mut s = String::from("image_id,x1,y1,x2,y2,score\n");
    for im in all {
        for d in &im.dets {
            let b = &d.bbox;
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                im.image_id,
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2(),
                d.score
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossTerms;

    #[test]
    fn loss_csv_round_trip() {
        let rows = vec![
            LossRow {
                step: 0,
                terms: LossTerms {
                    box_iou: 0.5,
                    cls: 1.0 / 3.0,
                    dfl: 2.25,
                    aux: 0.1,
                },
                total: 4.0,
            },
            LossRow {
                step: 1,
                terms: LossTerms::default(),
                total: 0.0,
            },
        ];
        assert_eq!(parse_loss_csv(&format_loss_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(1, 0, 20);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(1, 0, 20));
        assert_ne!(a, epoch_order(1, 1, 20));
    }
}
