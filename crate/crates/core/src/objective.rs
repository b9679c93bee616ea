//! Per-image training objective and its gradient with respect to the head
//! outputs and the auxiliary heatmap.

use crate::detector::{
    assign_targets, decode_corners, expected_offsets, HeadOutput, Model, ScaleTargets,
};
use crate::error::Result;
use crate::geometry::{render_heatmap, BBox, GridSpec, HeatmapTarget};
use crate::losses::{
    bce_with_logit, dfl, dfl_grad, heatmap_loss, iou_loss, noise_calibrate, total_loss, LossTerms, LossWeights,
    NoiseConfig, NoiseSampler,
};
use crate::tensor::Tensor3;

/// Noise calibration for the distribution loss, with the stream to draw from.
pub struct NoiseDraws<'a> {
    pub config: &'a NoiseConfig,
    pub sampler: &'a mut NoiseSampler,
}

/// Losses of one image.
///
/// Classification is summed over every location, the box and distribution
/// terms over positives (distribution also over the four sides); all three
/// are divided by `max(positives, 1)`. The heatmap term is a plain mean.
#[derive(Debug, Clone)]
pub struct ImageObjective {
    pub terms: LossTerms,
    pub positives: usize,
    /// Gradient of the weighted total with respect to the head logits.
    pub grad_head: HeadOutput,
    /// Gradient of the weighted total with respect to the heatmap prediction.
    pub grad_heat: Option<Tensor3>,
}

/// Heatmap target at image resolution, matching the upsampled prediction.
pub fn heatmap_target(boxes: &[BBox], image_w: usize, image_h: usize) -> Result<HeatmapTarget> {
    render_heatmap(boxes, &GridSpec::new(image_w, image_h, 1)?)
}

pub fn image_objective(
    head: &HeadOutput,
    heat_pred: Option<&Tensor3>,
    targets: &[ScaleTargets],
    gts: &[BBox],
    heat_target: Option<&HeatmapTarget>,
    weights: &LossWeights,
    mut noise: Option<NoiseDraws<'_>>,
) -> Result<ImageObjective> {
    let positives: usize = targets.iter().map(ScaleTargets::positives).sum();
    let norm = positives.max(1) as f64;
    let mut terms = LossTerms::default();
    let mut grad_head = head.zeros_like();

    for ((level, tgt), glevel) in head.scales.iter().zip(targets).zip(&mut grad_head.scales) {
        let n_bins = level.n_bins();
        let max_target = (n_bins - 1) as f64;
        let (_, h, w) = level.cls.shape();
        for y in 0..h {
            for x in 0..w {
                let cell = tgt.get(y, x);
                let (l, g) = bce_with_logit(level.cls.get(0, y, x), if cell.is_some() { 1.0 } else { 0.0 });
                terms.cls += l / norm;
                glevel.cls.set(0, y, x, weights.w_cls * g / norm);

                let Some(cell) = cell else { continue };
                let dists = level.dists(y, x);
                let s = level.stride as f64;

                let corners = decode_corners(expected_offsets(&dists), x, y, level.stride);
                let (bl, dcorner) = iou_loss(corners, &gts[cell.gt]);
                terms.box_iou += bl / norm;
                // corners are anchor -/+ offset * stride
                let doffset = [-dcorner[0] * s, -dcorner[1] * s, dcorner[2] * s, dcorner[3] * s];

                for side in 0..4 {
                    let y_target = match noise.as_mut() {
                        Some(nd) => noise_calibrate(cell.offsets[side], nd.config, nd.sampler.draw(), max_target),
                        None => cell.offsets[side],
                    };
                    terms.dfl += dfl(&dists[side], y_target)? / (4.0 * norm);
                    let gd = dfl_grad(&dists[side], y_target)?;
                    let p = dists[side].probs();
                    let e = dists[side].expectation();
                    for (b, gdb) in gd.iter().enumerate() {
                        // d E / d z_b = P_b (b - E)
                        let de = p[b] * (b as f64 - e);
                        let g = weights.w_dfl * gdb / (4.0 * norm) + weights.w_box * doffset[side] * de / norm;
                        let c = side * n_bins + b;
                        glevel.reg.set(c, y, x, g);
                    }
                }
            }
        }
    }

    let grad_heat = match (heat_pred, heat_target) {
        (Some(pred), Some(target)) => {
            let (l, g) = heatmap_loss(pred, target)?;
            terms.aux = l;
            Some(g.map(|v| weights.w_aux * v))
        }
        _ => None,
    };

    Ok(ImageObjective {
        terms,
        positives,
        grad_head,
        grad_heat,
    })
}

/// Forward, loss and parameter gradients for one annotated image.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub terms: LossTerms,
    pub total: f64,
    pub grads: Model,
}

pub fn loss_and_grad(
    model: &Model,
    image: &Tensor3,
    gts: &[BBox],
    weights: &LossWeights,
    noise: Option<NoiseDraws<'_>>,
    step: u64,
) -> Result<Evaluated> {
    let (_, h, w) = image.shape();
    let (head, heat, cache) = model.forward(image)?;
    let targets = assign_targets(gts, w, h, model.config.n_bins);
    let heat_target = match heat {
        Some(_) => Some(heatmap_target(gts, w, h)?),
        None => None,
    };
    let obj = image_objective(&head, heat.as_ref(), &targets, gts, heat_target.as_ref(), weights, noise)?;
    let total = total_loss(&obj.terms, weights, step)?;
    let grads = model.backward(&cache, &obj.grad_head, obj.grad_heat.as_ref())?;
    Ok(Evaluated {
        terms: obj.terms,
        total,
        grads,
    })
}

/// Weighted loss only; used by finite-difference checks.
pub fn loss_only(
    model: &Model,
    image: &Tensor3,
    gts: &[BBox],
    weights: &LossWeights,
    noise: Option<NoiseDraws<'_>>,
) -> Result<f64> {
    let (_, h, w) = image.shape();
    let (head, heat) = model.forward_full(image)?;
    let targets = assign_targets(gts, w, h, model.config.n_bins);
    let heat_target = match heat {
        Some(_) => Some(heatmap_target(gts, w, h)?),
        None => None,
    };
    let obj = image_objective(&head, heat.as_ref(), &targets, gts, heat_target.as_ref(), weights, noise)?;
    total_loss(&obj.terms, weights, 0)
}
