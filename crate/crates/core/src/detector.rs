//! Toy three-scale backbone, decoupled anchor-free head, box decoding,
//! target assignment and non-maximum suppression.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::geometry::BBox;
use crate::losses::{iou, splitmix, BinDistribution};
use crate::nn::alff::{AlffCache, AlffParams};
use crate::nn::conv::{ConvBlock, ConvCache, Pointwise};
use crate::nn::{join, ParamRef, Parameterized};
use crate::tensor::Tensor3;

pub const STRIDES: [usize; 3] = [8, 16, 32];

/// Initial classification probability used to set the output bias.
const CLS_PRIOR: f64 = 0.01;

/// Channel widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_ch: usize,
    /// Outputs of the three stride-2 stem blocks; the last feeds the stride-8 block.
    pub stem: [usize; 3],
    pub p8: usize,
    pub p16: usize,
    pub p32: usize,
    pub head_hidden: usize,
    pub alff_hidden: usize,
    pub n_bins: usize,
    pub alff: bool,
}

impl ModelConfig {
    /// 64/96/128 pyramid, LSTM hidden 32.
    pub fn standard() -> Self {
        Self {
            in_ch: 3,
            stem: [16, 32, 64],
            p8: 64,
            p16: 96,
            p32: 128,
            head_hidden: 64,
            alff_hidden: 32,
            n_bins: 16,
            alff: true,
        }
    }

    /// Half-width network for single-core training runs.
    pub fn compact() -> Self {
        Self {
            in_ch: 3,
            stem: [8, 16, 32],
            p8: 32,
            p16: 48,
            p32: 64,
            head_hidden: 16,
            alff_hidden: 16,
            n_bins: 16,
            alff: true,
        }
    }

    /// Very narrow network for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            in_ch: 3,
            stem: [2, 3, 2],
            p8: 2,
            p16: 3,
            p32: 2,
            head_hidden: 2,
            alff_hidden: 2,
            n_bins: 16,
            alff: true,
        }
    }

    pub fn with_alff(mut self, on: bool) -> Self {
        self.alff = on;
        self
    }

    pub fn pyramid_channels(&self) -> [usize; 3] {
        [self.p8, self.p16, self.p32]
    }

    /// Canonical `key=value` form, one entry per line.
    pub fn to_text(&self) -> String {
        format!(
            "in_ch={}\nstem={},{},{}\np8={}\np16={}\np32={}\nhead_hidden={}\nalff_hidden={}\nn_bins={}\nalff={}\n",
            self.in_ch,
            self.stem[0],
            self.stem[1],
            self.stem[2],
            self.p8,
            self.p16,
            self.p32,
            self.head_hidden,
            self.alff_hidden,
            self.n_bins,
            self.alff
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::standard();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad model config line {line:?}")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("model config {k}: {e}")))
            };
            match k.trim() {
                "in_ch" => cfg.in_ch = num(v)?,
                "stem" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    if parts.len() != 3 {
                        return Err(Error::Config(format!("stem needs 3 widths, got {v:?}")));
                    }
                    for (dst, p) in cfg.stem.iter_mut().zip(parts) {
                        *dst = num(p)?;
                    }
                }
                "p8" => cfg.p8 = num(v)?,
                "p16" => cfg.p16 = num(v)?,
                "p32" => cfg.p32 = num(v)?,
                "head_hidden" => cfg.head_hidden = num(v)?,
                "alff_hidden" => cfg.alff_hidden = num(v)?,
                "n_bins" => cfg.n_bins = num(v)?,
                "alff" => {
                    cfg.alff = v
                        .trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("model config alff: {e}")))?
                }
                other => return Err(Error::Config(format!("unknown model config key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

/// Named width presets accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelPreset {
    Standard,
    Compact,
    Tiny,
}

impl ModelPreset {
    pub fn config(self) -> ModelConfig {
        match self {
            Self::Standard => ModelConfig::standard(),
            Self::Compact => ModelConfig::compact(),
            Self::Tiny => ModelConfig::tiny(),
        }
    }
}

impl FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "compact" => Ok(Self::Compact),
            "tiny" => Ok(Self::Tiny),
            other => Err(Error::Config(format!(
                "unknown model preset {other:?} (standard|compact|tiny)"
            ))),
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Compact => "compact",
            Self::Tiny => "tiny",
        })
    }
}

/// Feature maps at strides 8, 16 and 32.
#[derive(Debug, Clone)]
pub struct PyramidFeatures {
    pub p8: Tensor3,
    pub p16: Tensor3,
    pub p32: Tensor3,
}

impl PyramidFeatures {
    pub fn levels(&self) -> [&Tensor3; 3] {
        [&self.p8, &self.p16, &self.p32]
    }
}

/// Classification and box-distribution branches for one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHead {
    pub cls_conv: ConvBlock,
    pub cls_out: Pointwise,
    pub reg_conv: ConvBlock,
    pub reg_out: Pointwise,
}

#[derive(Debug, Clone)]
struct ScaleHeadCache {
    cls_conv: ConvCache,
    cls_hidden: Tensor3,
    reg_conv: ConvCache,
    reg_hidden: Tensor3,
}

/// Raw head logits for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutput {
    pub stride: usize,
    /// `1 x h x w` classification logits.
    pub cls: Tensor3,
    /// `4 * n_bins x h x w` logits, sides ordered left, top, right, bottom.
    pub reg: Tensor3,
}

impl ScaleOutput {
    pub fn n_bins(&self) -> usize {
        self.reg.channels() / 4
    }

    pub fn side_logits(&self, side: usize, y: usize, x: usize) -> Vec<f64> {
        let n = self.n_bins();
        (0..n).map(|b| self.reg.get(side * n + b, y, x)).collect()
    }

    pub fn dists(&self, y: usize, x: usize) -> [BinDistribution; 4] {
        std::array::from_fn(|side| {
            BinDistribution::from_logits(self.side_logits(side, y, x)).expect("finite head logits")
        })
    }

    fn zeros_like(&self) -> Self {
        let (c, h, w) = self.reg.shape();
        Self {
            stride: self.stride,
            cls: Tensor3::zeros(1, h, w),
            reg: Tensor3::zeros(c, h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub scales: Vec<ScaleOutput>,
}

impl HeadOutput {
    pub fn zeros_like(&self) -> Self {
        Self {
            scales: self.scales.iter().map(ScaleOutput::zeros_like).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Vec<ConvBlock>,
    pub heads: Vec<ScaleHead>,
    pub alff: Option<AlffParams>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    backbone: Vec<ConvCache>,
    features: PyramidFeatures,
    heads: Vec<ScaleHeadCache>,
    alff: Option<AlffCache>,
}

impl ForwardCache {
    pub fn features(&self) -> &PyramidFeatures {
        &self.features
    }
}

impl Model {
    /// Backbone and head weights come from one stream and the auxiliary branch
    /// from another, so toggling the branch leaves the rest of the init unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [s0, s1, s2] = config.stem;
        let backbone = vec![
            ConvBlock::new(config.in_ch, s0, 2, true, &mut rng),
            ConvBlock::new(s0, s1, 2, true, &mut rng),
            ConvBlock::new(s1, s2, 2, true, &mut rng),
            ConvBlock::new(s2, config.p8, 1, true, &mut rng),
            ConvBlock::new(config.p8, config.p16, 2, true, &mut rng),
            ConvBlock::new(config.p16, config.p32, 2, true, &mut rng),
        ];
        let prior_bias = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
        let heads = config
            .pyramid_channels()
            .iter()
            .map(|&c| {
                let mut cls_out = Pointwise::new(config.head_hidden, 1, &mut rng);
                cls_out.bias = vec![prior_bias];
                ScaleHead {
                    cls_conv: ConvBlock::new(c, config.head_hidden, 1, true, &mut rng),
                    cls_out,
                    reg_conv: ConvBlock::new(c, config.head_hidden, 1, true, &mut rng),
                    reg_out: Pointwise::new(config.head_hidden, 4 * config.n_bins, &mut rng),
                }
            })
            .collect();
        let alff = config.alff.then(|| {
            let mut arng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xA1FF));
            AlffParams::new(config.p8, config.alff_hidden, &mut arng)
        });
        Self {
            config,
            backbone,
            heads,
            alff,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    /// Same parameters with the auxiliary branch removed.
    pub fn without_alff(&self) -> Self {
        let mut m = self.clone();
        m.alff = None;
        m.config.alff = false;
        m
    }

    fn check_input(&self, image: &Tensor3) -> Result<()> {
        let (c, h, w) = image.shape();
        if c != self.config.in_ch {
            return Err(shape_err("image channels", self.config.in_ch, c));
        }
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(shape_err("image size", "multiples of 32", format!("{h}x{w}")));
        }
        Ok(())
    }

    pub fn backbone_forward(&self, image: &Tensor3) -> Result<PyramidFeatures> {
        self.backbone_with_cache(image).map(|(f, _)| f)
    }

    fn backbone_with_cache(&self, image: &Tensor3) -> Result<(PyramidFeatures, Vec<ConvCache>)> {
        self.check_input(image)?;
        let mut caches = Vec::with_capacity(6);
        let mut x = image.clone();
        let mut outs = Vec::with_capacity(6);
        for block in &self.backbone {
            let (y, cache) = block.forward(&x)?;
            caches.push(cache);
            outs.push(y.clone());
            x = y;
        }
        let p32 = outs.pop().expect("six blocks");
        let p16 = outs.pop().expect("six blocks");
        let p8 = outs.pop().expect("six blocks");
        Ok((PyramidFeatures { p8, p16, p32 }, caches))
    }

    /// Main-branch head outputs, the auxiliary heatmap (when enabled) and the
    /// activations needed for [`Model::backward`].
    pub fn forward(&self, image: &Tensor3) -> Result<(HeadOutput, Option<Tensor3>, ForwardCache)> {
        let (features, backbone) = self.backbone_with_cache(image)?;
        let mut scales = Vec::with_capacity(3);
        let mut head_caches = Vec::with_capacity(3);
        for ((head, feat), stride) in self.heads.iter().zip(features.levels()).zip(STRIDES) {
            let (cls_hidden, cls_conv) = head.cls_conv.forward(feat)?;
            let cls = head.cls_out.forward(&cls_hidden)?;
            let (reg_hidden, reg_conv) = head.reg_conv.forward(feat)?;
            let reg = head.reg_out.forward(&reg_hidden)?;
            scales.push(ScaleOutput { stride, cls, reg });
            head_caches.push(ScaleHeadCache {
                cls_conv,
                cls_hidden,
                reg_conv,
                reg_hidden,
            });
        }
        let (heat, alff) = match &self.alff {
            Some(a) => {
                let (pred, cache) = a.forward(&features.p8)?;
                (Some(pred), Some(cache))
            }
            None => (None, None),
        };
        Ok((
            HeadOutput { scales },
            heat,
            ForwardCache {
                backbone,
                features,
                heads: head_caches,
                alff,
            },
        ))
    }

    pub fn forward_full(&self, image: &Tensor3) -> Result<(HeadOutput, Option<Tensor3>)> {
        self.forward(image).map(|(h, p, _)| (h, p))
    }

    /// Parameter gradients given gradients of the head logits and (optionally)
    /// of the auxiliary heatmap.
    pub fn backward(&self, cache: &ForwardCache, grad_head: &HeadOutput, grad_heat: Option<&Tensor3>) -> Result<Model> {
        if grad_head.scales.len() != 3 {
            return Err(shape_err("head gradient scales", 3, grad_head.scales.len()));
        }
        let mut grads = self.zeros_like();
        let mut feat_grads: Vec<Tensor3> = Vec::with_capacity(3);
        for (i, (head, hc)) in self.heads.iter().zip(&cache.heads).enumerate() {
            let g = &grad_head.scales[i];
            let gh = &mut grads.heads[i];
            let dcls_hidden = head.cls_out.backward(&hc.cls_hidden, &g.cls, &mut gh.cls_out)?;
            let mut dfeat = head.cls_conv.backward(&hc.cls_conv, &dcls_hidden, &mut gh.cls_conv)?;
            let dreg_hidden = head.reg_out.backward(&hc.reg_hidden, &g.reg, &mut gh.reg_out)?;
            let d2 = head.reg_conv.backward(&hc.reg_conv, &dreg_hidden, &mut gh.reg_conv)?;
            accumulate(&mut dfeat, &d2);
            feat_grads.push(dfeat);
        }
        let [mut d8, mut d16, d32]: [Tensor3; 3] = feat_grads.try_into().expect("three scales");

        if let (Some(alff), Some(ac), Some(gp)) = (&self.alff, &cache.alff, grad_heat) {
            let ga = grads.alff.as_mut().expect("gradient mirrors model");
            let d = alff.backward(ac, gp, ga)?;
            accumulate(&mut d8, &d);
        }

        let bc = &cache.backbone;
        let gb = &mut grads.backbone;
        let d = self.backbone[5].backward(&bc[5], &d32, &mut gb[5])?;
        accumulate(&mut d16, &d);
        let d = self.backbone[4].backward(&bc[4], &d16, &mut gb[4])?;
        accumulate(&mut d8, &d);
        let mut d = self.backbone[3].backward(&bc[3], &d8, &mut gb[3])?;
        for i in (1..3).rev() {
            d = self.backbone[i].backward(&bc[i], &d, &mut gb[i])?;
        }
        // nothing consumes the image gradient
        self.backbone[0].backward_params(&bc[0], &d, &mut gb[0])?;
        Ok(grads)
    }
}

fn accumulate(dst: &mut Tensor3, src: &Tensor3) {
    dst.data_mut().iter_mut().zip(src.data()).for_each(|(a, b)| *a += b);
}

impl Parameterized for ScaleHead {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.cls_conv.collect(&join(prefix, "cls_conv"), out);
        self.cls_out.collect(&join(prefix, "cls_out"), out);
        self.reg_conv.collect(&join(prefix, "reg_conv"), out);
        self.reg_out.collect(&join(prefix, "reg_out"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.cls_conv.collect_mut(out);
        self.cls_out.collect_mut(out);
        self.reg_conv.collect_mut(out);
        self.reg_out.collect_mut(out);
    }
}

impl Parameterized for Model {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.backbone.iter().enumerate() {
            b.collect(&join(prefix, &format!("backbone.{i}")), out);
        }
        for (h, s) in self.heads.iter().zip(STRIDES) {
            h.collect(&join(prefix, &format!("head{s}")), out);
        }
        if let Some(a) = &self.alff {
            a.collect(&join(prefix, "alff"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for b in &mut self.backbone {
            b.collect_mut(out);
        }
        for h in &mut self.heads {
            h.collect_mut(out);
        }
        if let Some(a) = &mut self.alff {
            a.collect_mut(out);
        }
    }
}

/// Scored box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Anchor point (cell centre) of location `(x, y)` in pixels.
pub fn anchor_point(x: usize, y: usize, stride: usize) -> (f64, f64) {
    let s = stride as f64;
    ((x as f64 + 0.5) * s, (y as f64 + 0.5) * s)
}

/// Expected side offsets (left, top, right, bottom) in stride units.
pub fn expected_offsets(dists: &[BinDistribution; 4]) -> [f64; 4] {
    std::array::from_fn(|i| dists[i].expectation())
}

/// Raw corners `anchor -/+ offset * stride`; may be degenerate.
pub fn decode_corners(offsets: [f64; 4], x: usize, y: usize, stride: usize) -> [f64; 4] {
    let (ax, ay) = anchor_point(x, y, stride);
    let s = stride as f64;
    [ax - offsets[0] * s, ay - offsets[1] * s, ax + offsets[2] * s, ay + offsets[3] * s]
}

/// Box implied by the expectation of each side's distribution; `None` when
/// the result has no area.
pub fn decode_box(dists: &[BinDistribution; 4], x: usize, y: usize, stride: usize) -> Option<BBox> {
    let [x1, y1, x2, y2] = decode_corners(expected_offsets(dists), x, y, stride);
    BBox::new(x1, y1, x2, y2).ok()
}

/// Greedy NMS: keep the best remaining detection, drop everything overlapping
/// it by more than `iou_thr`, repeat. Ties in score keep input order.
pub fn nms(mut dets: Vec<Detection>, iou_thr: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut keep: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if keep.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_thr) {
            keep.push(d);
        }
    }
    keep
}

pub const DEFAULT_SCORE_THR: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.65;

/// Confidence filter, decoding and greedy NMS over every level.
pub fn postprocess(head: &HeadOutput, score_thr: f64, iou_thr: f64) -> Vec<Detection> {
    let mut dets = Vec::new();
    for level in &head.scales {
        let (_, h, w) = level.cls.shape();
        for y in 0..h {
            for x in 0..w {
                let score = crate::linalg::sigmoid(level.cls.get(0, y, x));
                if score < score_thr {
                    continue;
                }
                if let Some(bbox) = decode_box(&level.dists(y, x), x, y, level.stride) {
                    dets.push(Detection { bbox, score });
                }
            }
        }
    }
    nms(dets, iou_thr)
}

/// Regression target of one positive location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTarget {
    pub gt: usize,
    /// Left, top, right, bottom distances in stride units, clamped to `[0, n_bins - 1]`.
    pub offsets: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTargets {
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub cells: Vec<Option<CellTarget>>,
}

impl ScaleTargets {
    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn get(&self, y: usize, x: usize) -> Option<&CellTarget> {
        self.cells[y * self.w + x].as_ref()
    }
}

fn cell_target(gt: usize, b: &BBox, x: usize, y: usize, stride: usize, n_bins: usize) -> CellTarget {
    let (ax, ay) = anchor_point(x, y, stride);
    let s = stride as f64;
    let max = (n_bins - 1) as f64;
    let raw = [(ax - b.x1()) / s, (ay - b.y1()) / s, (b.x2() - ax) / s, (b.y2() - ay) / s];
    CellTarget {
        gt,
        offsets: raw.map(|v| v.clamp(0.0, max)),
    }
}

/// Centre-radius assignment: a location is positive for a box when its anchor
/// lies strictly inside the box and within `0.5 * min(w, h)` of the box
/// centre. Contested locations go to the smallest box. A box that wins no
/// location on any level is given the stride-8 cell containing its centre, if
/// that cell is still free.
pub fn assign_targets(boxes: &[BBox], image_w: usize, image_h: usize, n_bins: usize) -> Vec<ScaleTargets> {
    let mut levels: Vec<ScaleTargets> = STRIDES
        .iter()
        .map(|&stride| {
            let (h, w) = (image_h / stride, image_w / stride);
            ScaleTargets {
                stride,
                h,
                w,
                cells: vec![None; h * w],
            }
        })
        .collect();
    let mut claimed = vec![false; boxes.len()];
    for level in &mut levels {
        let stride = level.stride;
        for y in 0..level.h {
            for x in 0..level.w {
                let (ax, ay) = anchor_point(x, y, stride);
                let best = boxes
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| {
                        let inside = ax > b.x1() && ax < b.x2() && ay > b.y1() && ay < b.y2();
                        let r = 0.5 * b.w().min(b.h());
                        inside && (ax - b.cx()).hypot(ay - b.cy()) <= r
                    })
                    .min_by(|a, b| a.1.area().total_cmp(&b.1.area()).then(a.0.cmp(&b.0)));
                if let Some((i, b)) = best {
                    level.cells[y * level.w + x] = Some(cell_target(i, b, x, y, stride, n_bins));
                    claimed[i] = true;
                }
            }
        }
    }
    let fine = &mut levels[0];
    for (i, b) in boxes.iter().enumerate() {
        if claimed[i] {
            continue;
        }
        let x = ((b.cx() / fine.stride as f64).floor().max(0.0) as usize).min(fine.w - 1);
        let y = ((b.cy() / fine.stride as f64).floor().max(0.0) as usize).min(fine.h - 1);
        let slot = &mut fine.cells[y * fine.w + x];
        if slot.is_none() {
            *slot = Some(cell_target(i, b, x, y, fine.stride, n_bins));
        }
    }
    levels
}
