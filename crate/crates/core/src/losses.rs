//! Distribution focal loss, its noise-calibrated variant, and the other
//! training terms (heatmap MSE, IoU loss, sigmoid cross-entropy).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};
use crate::geometry::{BBox, HeatmapTarget};
use crate::linalg::{sigmoid, softmax};
use crate::tensor::Tensor3;

/// Default number of regression bins per box side.
pub const N_BINS: usize = 16;

/// Lower bound applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Discrete distribution over integer offsets `0..n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinDistribution {
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl BinDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidDistribution("need at least two bins".into()));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite logit".into()));
        }
        let probs = softmax(&logits);
        Ok(Self { logits, probs })
    }

    /// Takes probabilities directly; logits become `ln p`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution("need at least two bins".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution("probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        let logits = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { logits, probs })
    }

    pub fn one_hot(n_bins: usize, k: usize) -> Self {
        let mut p = vec![0.0; n_bins];
        p[k] = 1.0;
        Self::from_probs(p).expect("valid one-hot")
    }

    pub fn uniform(n_bins: usize) -> Self {
        Self::from_logits(vec![0.0; n_bins]).expect("valid uniform")
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// `sum_i P_i * i`.
    pub fn expectation(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| p * i as f64).sum()
    }
}

/// The two bins bracketing `y` and their weights `(y_{i+1} - y, y - y_i)`.
fn neighbours(y: f64, n_bins: usize) -> Result<(usize, f64, f64)> {
    let max = (n_bins - 1) as f64;
    if !(0.0..=max).contains(&y) {
        return Err(Error::TargetOutOfRange { value: y, max });
    }
    let lo = (y.floor() as usize).min(n_bins - 2);
    let hi = lo + 1;
    Ok((lo, hi as f64 - y, y - lo as f64))
}

/// `-[(y_{i+1} - y) ln P_i + (y - y_i) ln P_{i+1}]` with `y_i = floor(y)`.
pub fn dfl(dist: &BinDistribution, y: f64) -> Result<f64> {
    let (lo, w_lo, w_hi) = neighbours(y, dist.n_bins())?;
    let p = dist.probs();
    Ok(-(w_lo * p[lo].max(LOG_FLOOR).ln() + w_hi * p[lo + 1].max(LOG_FLOOR).ln()))
}

/// Gradient of [`dfl`] with respect to the logits.
pub fn dfl_grad(dist: &BinDistribution, y: f64) -> Result<Vec<f64>> {
    let (lo, w_lo, w_hi) = neighbours(y, dist.n_bins())?;
    let p = dist.probs();
    // dL/dP, zero where the floor is active
    let mut dp = vec![0.0; p.len()];
    if p[lo] > LOG_FLOOR {
        dp[lo] -= w_lo / p[lo];
    }
    if p[lo + 1] > LOG_FLOOR {
        dp[lo + 1] -= w_hi / p[lo + 1];
    }
    Ok(softmax_backward(p, &dp))
}

/// Pulls `dL/dP` back through the softmax to `dL/dz`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// `y (1 + a (mu + s |xi|))`, for hard data.
    Inflate,
    /// `y (1 - a (mu + s |xi|))`, for easy data.
    Deflate,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inflate" => Ok(Self::Inflate),
            "deflate" => Ok(Self::Deflate),
            other => Err(Error::Config(format!("unknown noise mode {other:?} (inflate|deflate)"))),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Inflate => "inflate",
            Self::Deflate => "deflate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub alpha: f64,
    pub mu: f64,
    pub sigma_n: f64,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mu: 0.0,
            sigma_n: 1.0,
            mode: NoiseMode::Inflate,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.sigma_n.is_finite() && self.sigma_n >= 0.0) {
            return Err(Error::Config(format!("sigma_n must be >= 0, got {}", self.sigma_n)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        Ok(())
    }

    /// Multiplicative factor `1 +/- alpha (mu + sigma_n |xi|)`, before clamping.
    pub fn factor(&self, xi: f64) -> f64 {
        let shift = self.alpha * (self.mu + self.sigma_n * xi.abs());
        match self.mode {
            NoiseMode::Inflate => 1.0 + shift,
            NoiseMode::Deflate => 1.0 - shift,
        }
    }
}

/// Noise-calibrated target `y * factor(xi)`, clamped to `[0, max_target]`.
pub fn noise_calibrate(y: f64, cfg: &NoiseConfig, xi: f64, max_target: f64) -> f64 {
    (y * cfg.factor(xi)).clamp(0.0, max_target)
}

/// Standard-normal draws from a seeded stream.
///
/// [`NoiseSampler::for_item`] derives an independent stream per
/// `(seed, step, item)` so batch items never share draws.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    rng: ChaCha8Rng,
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_item(seed: u64, step: u64, item: u64) -> Self {
        Self::new(splitmix(splitmix(splitmix(seed) ^ step) ^ item))
    }

    pub fn draw(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// DFL against a noise-calibrated target built from an explicit draw `xi`.
pub fn nc_dfl_with_draw(dist: &BinDistribution, y: f64, cfg: &NoiseConfig, xi: f64) -> Result<f64> {
    let max = (dist.n_bins() - 1) as f64;
    if !(0.0..=max).contains(&y) {
        return Err(Error::TargetOutOfRange { value: y, max });
    }
    dfl(dist, noise_calibrate(y, cfg, xi, max))
}

/// DFL against a noise-calibrated target with a fresh draw from `sampler`.
pub fn nc_dfl(dist: &BinDistribution, y: f64, cfg: &NoiseConfig, sampler: &mut NoiseSampler) -> Result<f64> {
    let xi = sampler.draw();
    nc_dfl_with_draw(dist, y, cfg, xi)
}

/// Mean squared error and its gradient `2 (pred - target) / cells`.
pub fn heatmap_loss(pred: &Tensor3, target: &HeatmapTarget) -> Result<(f64, Tensor3)> {
    let t = &target.grid;
    if pred.shape() != t.shape() {
        return Err(shape_err(
            "heatmap_loss",
            format!("{:?}", t.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let n = pred.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.data().len());
    for (p, q) in pred.data().iter().zip(t.data()) {
        let d = p - q;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    let (c, h, w) = pred.shape();
    Ok((loss / n, Tensor3::from_vec(c, h, w, grad)?))
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// `1 - IoU(pred, truth)` for a predicted box given as raw corners, plus the
/// gradient with respect to those corners. Raw corners may be degenerate.
pub fn iou_loss(pred: [f64; 4], truth: &BBox) -> (f64, [f64; 4]) {
    let [x1, y1, x2, y2] = pred;
    let [gx1, gy1, gx2, gy2] = truth.corners();
    let pw = (x2 - x1).max(0.0);
    let ph = (y2 - y1).max(0.0);
    let area_p = pw * ph;
    let area_g = truth.area();

    let ix = x2.min(gx2) - x1.max(gx1);
    let iy = y2.min(gy2) - y1.max(gy1);
    let (iw, ih) = (ix.max(0.0), iy.max(0.0));
    let inter = iw * ih;
    let union = area_p + area_g - inter;
    let value = inter / union;

    // d(value) = dI / U - I dU / U^2, with dU = dA_p - dI
    let d_inter = 1.0 / union + inter / (union * union);
    let d_area = -inter / (union * union);

    let mut g = [0.0; 4];
    if ix > 0.0 && iy > 0.0 {
        // d iw / d x1 = -1 when pred's left edge is the binding one, etc.
        if x1 > gx1 {
            g[0] -= ih * d_inter;
        }
        if x2 < gx2 {
            g[2] += ih * d_inter;
        }
        if y1 > gy1 {
            g[1] -= iw * d_inter;
        }
        if y2 < gy2 {
            g[3] += iw * d_inter;
        }
    }
    if x2 > x1 && y2 > y1 {
        g[0] -= ph * d_area;
        g[2] += ph * d_area;
        g[1] -= pw * d_area;
        g[3] += pw * d_area;
    }
    (1.0 - value, g.map(|v| -v))
}

/// Sigmoid cross-entropy on a logit, and its derivative.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64) {
    // max(z, 0) - z t + ln(1 + e^{-|z|})
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_box: f64,
    pub w_cls: f64,
    pub w_dfl: f64,
    pub w_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_box: 1.0,
            w_cls: 0.5,
            w_dfl: 1.5,
            w_aux: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_box, self.w_cls, self.w_dfl, self.w_aux];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {all:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("loss weights are all zero".into()));
        }
        Ok(())
    }
}

/// Unweighted per-term losses of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub box_iou: f64,
    pub cls: f64,
    pub dfl: f64,
    pub aux: f64,
}

impl LossTerms {
    pub fn add(&mut self, other: &LossTerms) {
        self.box_iou += other.box_iou;
        self.cls += other.cls;
        self.dfl += other.dfl;
        self.aux += other.aux;
    }

    pub fn scaled(&self, s: f64) -> LossTerms {
        LossTerms {
            box_iou: self.box_iou * s,
            cls: self.cls * s,
            dfl: self.dfl * s,
            aux: self.aux * s,
        }
    }
}

/// `w_box * box + w_cls * cls + w_dfl * dfl + w_aux * aux`; any non-finite
/// term is an error naming it.
pub fn total_loss(terms: &LossTerms, w: &LossWeights, step: u64) -> Result<f64> {
    let named = [
        ("box", terms.box_iou),
        ("cls", terms.cls),
        ("dfl", terms.dfl),
        ("aux", terms.aux),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("{name} term is {v} ({terms:?})"),
        });
    }
    Ok(w.w_box * terms.box_iou + w.w_cls * terms.cls + w.w_dfl * terms.dfl + w.w_aux * terms.aux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(n: usize, lo: usize, p_lo: f64) -> BinDistribution {
        let mut p = vec![0.0; n];
        p[lo] = p_lo;
        p[lo + 1] = 1.0 - p_lo;
        BinDistribution::from_probs(p).unwrap()
    }

    #[test]
    fn dfl_examples() {
        assert_eq!(dfl(&BinDistribution::one_hot(16, 7), 7.0).unwrap(), 0.0);
        let v = dfl(&pair(16, 4, 0.5), 4.5).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let v = dfl(&pair(16, 4, 0.75), 4.25).unwrap();
        let want = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((v - want).abs() < 1e-12);
        assert!((v - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn dfl_upper_edge_uses_last_pair() {
        let d = BinDistribution::one_hot(16, 15);
        assert_eq!(dfl(&d, 15.0).unwrap(), 0.0);
    }

    #[test]
    fn dfl_rejects_out_of_range_targets() {
        let d = BinDistribution::uniform(16);
        assert!(matches!(dfl(&d, -0.1), Err(Error::TargetOutOfRange { .. })));
        assert!(matches!(dfl(&d, 15.01), Err(Error::TargetOutOfRange { .. })));
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(BinDistribution::from_probs(vec![0.5, 0.6]).is_err());
        assert!(BinDistribution::from_probs(vec![-0.1, 1.1]).is_err());
        assert!(BinDistribution::from_logits(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn noise_examples() {
        let mut cfg = NoiseConfig {
            alpha: 1.0,
            mu: 0.0,
            sigma_n: 1.0,
            mode: NoiseMode::Inflate,
            seed: 0,
        };
        assert_eq!(noise_calibrate(4.0, &cfg, 0.5, 15.0), 6.0);
        assert_eq!(noise_calibrate(4.0, &cfg, -0.5, 15.0), 6.0);
        cfg.mode = NoiseMode::Deflate;
        assert_eq!(noise_calibrate(4.0, &cfg, 0.5, 15.0), 2.0);
        cfg.alpha = 0.0;
        assert_eq!(noise_calibrate(4.3, &cfg, 3.0, 15.0), 4.3);
        cfg.alpha = 1.0;
        assert_eq!(noise_calibrate(4.3, &cfg, 0.0, 15.0), 4.3);
    }

    #[test]
    fn noise_clamps_overshoot() {
        let cfg = NoiseConfig::default();
        assert_eq!(noise_calibrate(10.0, &cfg, 2.0, 15.0), 15.0);
        let deflate = NoiseConfig {
            mode: NoiseMode::Deflate,
            ..cfg
        };
        assert_eq!(noise_calibrate(10.0, &deflate, 2.0, 15.0), 0.0);
    }

    #[test]
    fn noise_config_validation() {
        assert!(NoiseConfig::default().validate().is_ok());
        assert!(NoiseConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(NoiseConfig { sigma_n: -0.1, ..Default::default() }.validate().is_err());
        assert!(NoiseConfig { mu: f64::INFINITY, ..Default::default() }.validate().is_err());
        assert!("sideways".parse::<NoiseMode>().is_err());
    }

    #[test]
    fn nc_dfl_one_hot_against_shifted_target() {
        // y = 4 with draw 0.15 gives y_G = 4.6: weights 0.4 on bin 4, 0.6 on bin 5
        let d = BinDistribution::one_hot(16, 4);
        let cfg = NoiseConfig::default();
        let v = nc_dfl_with_draw(&d, 4.0, &cfg, 0.15).unwrap();
        let want = -(0.4 * 1f64.ln() + 0.6 * LOG_FLOOR.ln());
        assert!((v - want).abs() < 1e-9);
        assert!(v > 16.0);
    }

    #[test]
    fn sampler_is_deterministic_per_item() {
        let a: Vec<f64> = {
            let mut s = NoiseSampler::for_item(5, 3, 2);
            (0..4).map(|_| s.draw()).collect()
        };
        let b: Vec<f64> = {
            let mut s = NoiseSampler::for_item(5, 3, 2);
            (0..4).map(|_| s.draw()).collect()
        };
        let c: Vec<f64> = {
            let mut s = NoiseSampler::for_item(5, 3, 1);
            (0..4).map(|_| s.draw()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn heatmap_loss_examples() {
        let t = HeatmapTarget {
            grid: Tensor3::from_vec(1, 2, 2, vec![0.0, 0.2, 0.5, 1.0]).unwrap(),
            sigma_map: vec![],
        };
        let (l, g) = heatmap_loss(&t.grid, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        let shifted = t.grid.map(|v| v + 0.1);
        let (l, _) = heatmap_loss(&shifted, &t).unwrap();
        assert!((l - 0.01).abs() < 1e-15);
        assert!(heatmap_loss(&Tensor3::zeros(1, 2, 3), &t).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
        let c = BBox::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &c), 0.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_loss_gradient_matches_finite_differences() {
        let truth = BBox::new(2.0, 3.0, 12.0, 11.0).unwrap();
        for pred in [[1.0, 4.0, 10.5, 12.0], [3.0, 2.0, 13.0, 9.0], [2.5, 3.5, 11.0, 10.0]] {
            let (_, g) = iou_loss(pred, &truth);
            for k in 0..4 {
                let h = 1e-6;
                let mut p = pred;
                p[k] += h;
                let up = iou_loss(p, &truth).0;
                p[k] -= 2.0 * h;
                let dn = iou_loss(p, &truth).0;
                let fd = (up - dn) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "{pred:?} coord {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn bce_matches_direct_formula() {
        for (z, t) in [(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0), (-30.0, 1.0)] {
            let (l, g) = bce_with_logit(z, t);
            let p = sigmoid(z);
            let direct = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert!((l - direct).abs() < 1e-9 * direct.max(1.0));
            assert!((g - (p - t)).abs() < 1e-15);
        }
    }

    #[test]
    fn total_loss_projection_and_linearity() {
        let terms = LossTerms {
            box_iou: 0.4,
            cls: 1.3,
            dfl: 2.1,
            aux: 0.07,
        };
        let only_aux = LossWeights {
            w_box: 0.0,
            w_cls: 0.0,
            w_dfl: 0.0,
            w_aux: 1.0,
        };
        assert_eq!(total_loss(&terms, &only_aux, 0).unwrap(), 0.07);
        let w = LossWeights::default();
        let doubled = LossWeights { w_dfl: 2.0 * w.w_dfl, ..w };
        let diff = total_loss(&terms, &doubled, 0).unwrap() - total_loss(&terms, &w, 0).unwrap();
        assert!((diff - w.w_dfl * terms.dfl).abs() < 1e-12);
    }

    #[test]
    fn non_finite_term_aborts_with_name() {
        let terms = LossTerms {
            dfl: f64::NAN,
            ..Default::default()
        };
        let err = total_loss(&terms, &LossWeights::default(), 17).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("step 17") && msg.contains("dfl"), "{msg}");
    }

    #[test]
    fn loss_weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let zero = LossWeights {
            w_box: 0.0,
            w_cls: 0.0,
            w_dfl: 0.0,
            w_aux: 0.0,
        };
        assert!(zero.validate().is_err());
        assert!(LossWeights { w_cls: -1.0, ..Default::default() }.validate().is_err());
    }

    fn arb_dist() -> impl Strategy<Value = BinDistribution> {
        prop::collection::vec(-4.0..4.0f64, 16).prop_map(|z| BinDistribution::from_logits(z).unwrap())
    }

    proptest! {
        #[test]
        fn dfl_is_non_negative(d in arb_dist(), y in 0.0..15.0f64) {
            prop_assert!(dfl(&d, y).unwrap() >= 0.0);
        }

        #[test]
        fn dfl_is_linear_between_bins(d in arb_dist(), k in 0usize..15, t in 0.0..1.0f64) {
            let y = k as f64 + t;
            let a = dfl(&d, k as f64).unwrap();
            let b = dfl(&d, (k + 1) as f64).unwrap();
            let v = dfl(&d, y).unwrap();
            prop_assert!((v - ((1.0 - t) * a + t * b)).abs() < 1e-9);
        }

        #[test]
        fn inflate_never_decreases_deflate_never_increases(
            y in 0.0..15.0f64, xi in -4.0..4.0f64, alpha in 0.0..2.0f64, sigma_n in 0.0..2.0f64,
        ) {
            let up = NoiseConfig { alpha, sigma_n, mu: 0.0, mode: NoiseMode::Inflate, seed: 0 };
            let down = NoiseConfig { mode: NoiseMode::Deflate, ..up };
            prop_assert!(y * up.factor(xi) >= y);
            prop_assert!(y * down.factor(xi) <= y);
        }
    }
}
