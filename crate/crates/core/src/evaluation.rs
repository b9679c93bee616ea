//! Greedy matching, 101-point interpolated AP and per-scene density labels.

use std::fmt;

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use crate::losses::iou;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// Processing order: descending score, ties by input index.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// True positive flag per detection, in input order.
    pub tp: Vec<bool>,
    /// Matched flag per ground truth.
    pub gt_matched: Vec<bool>,
}

/// Each detection, best first, takes the highest-IoU unmatched ground truth
/// with IoU at least `iou_thr` (lowest index on IoU ties).
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thr: f64) -> MatchResult {
    let mut tp = vec![false; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in score_order(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] {
                continue;
            }
            let v = iou(&dets[i].bbox, g);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            tp[i] = true;
        }
    }
    MatchResult { tp, gt_matched }
}

/// One image's detections and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub dets: &'a [Detection],
    pub gts: &'a [BBox],
}

/// Mean over recall levels 0, 0.01, ..., 1 of the best precision reached at
/// that recall or beyond.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut envelope = precision.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        while k < recall.len() && recall[k] < level {
            k += 1;
        }
        if k < recall.len() {
            sum += envelope[k];
        }
    }
    sum / 101.0
}

/// AP pooled over images. Zero when there is no ground truth.
pub fn average_precision_multi(images: &[EvalImage<'_>], iou_thr: f64) -> f64 {
    let n_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    // (score, image, index, tp)
    let mut pooled: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (k, im) in images.iter().enumerate() {
        let m = match_detections(im.dets, im.gts, iou_thr);
        pooled.extend(im.dets.iter().zip(m.tp).enumerate().map(|(i, (d, tp))| (d.score, k, i, tp)));
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut precision = Vec::with_capacity(pooled.len());
    let mut recall = Vec::with_capacity(pooled.len());
    let mut tps = 0usize;
    for (rank, p) in pooled.iter().enumerate() {
        tps += p.3 as usize;
        precision.push(tps as f64 / (rank + 1) as f64);
        recall.push(tps as f64 / n_gt as f64);
    }
    interpolated_ap(&precision, &recall)
}

pub fn average_precision(dets: &[Detection], gts: &[BBox], iou_thr: f64) -> f64 {
    average_precision_multi(&[EvalImage { dets, gts }], iou_thr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApSummary {
    pub ap50: f64,
    pub ap75: f64,
    pub ap50_95: f64,
}

impl ApSummary {
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nAP50,{:.6}\nAP75,{:.6}\nAP50-95,{:.6}\n",
            self.ap50, self.ap75, self.ap50_95
        )
    }
}

impl fmt::Display for ApSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>8}", "metric", "value")?;
        writeln!(f, "{:<8} {:>8.4}", "AP50", self.ap50)?;
        writeln!(f, "{:<8} {:>8.4}", "AP75", self.ap75)?;
        write!(f, "{:<8} {:>8.4}", "AP50-95", self.ap50_95)
    }
}

pub fn ap_range_multi(images: &[EvalImage<'_>]) -> ApSummary {
    let per: Vec<f64> = coco_thresholds()
        .iter()
        .map(|&t| average_precision_multi(images, t))
        .collect();
    ApSummary {
        ap50: per[0],
        ap75: per[5],
        ap50_95: per.iter().sum::<f64>() / per.len() as f64,
    }
}

pub fn ap_range(dets: &[Detection], gts: &[BBox]) -> ApSummary {
    ap_range_multi(&[EvalImage { dets, gts }])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Density {
    /// Fewer than 100 heads per image.
    Low,
    /// At least 100 and fewer than 300.
    High,
    /// 300 or more; outside both splits.
    Beyond,
}

impl Density {
    pub fn classify(mean: f64) -> Self {
        if mean < 100.0 {
            Self::Low
        } else if mean < 300.0 {
            Self::High
        } else {
            Self::Beyond
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Low => "low",
            Self::High => "high",
            Self::Beyond => "beyond",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStats {
    pub scene: u32,
    pub images: usize,
    pub mean: f64,
    pub label: Density,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub scenes: Vec<SceneStats>,
}

impl DatasetStats {
    /// The common label of every scene, if they agree.
    pub fn label(&self) -> Option<Density> {
        let first = self.scenes.first()?.label;
        self.scenes.iter().all(|s| s.label == first).then_some(first)
    }
}

/// Mean head count per scene and its density label.
pub fn density_split(scenes: &[(u32, Vec<usize>)]) -> Result<DatasetStats> {
    let scenes = scenes
        .iter()
        .map(|(id, counts)| {
            if counts.is_empty() {
                return Err(Error::EmptyScene(*id));
            }
            let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
            Ok(SceneStats {
                scene: *id,
                images: counts.len(),
                mean,
                label: Density::classify(mean),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DatasetStats { scenes })
}
