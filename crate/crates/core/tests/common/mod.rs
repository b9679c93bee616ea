//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use alff::detector::Detection;
use alff::evaluation::iou;
use alff::BBox;

/// splitmix64 stream with Box-Muller normals; shares nothing with the crate's sampler.
pub struct Oracle {
    pub state: u64,
}

impl Oracle {
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        let (u1, u2) = (self.uniform(), self.uniform());
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Direct two-bin evaluation with its own bracketing.
pub fn oracle_dfl(p: &[f64], y: f64) -> f64 {
    let lo = (y.floor() as usize).min(p.len() - 2);
    let hi = lo + 1;
    -((hi as f64 - y) * p[lo].ln() + (y - lo as f64) * p[hi].ln())
}

/// Monte-Carlo mean of the noise-calibrated loss, sampled with [`Oracle`].
pub fn oracle_nc_mean(p: &[f64], y: f64, sigma_n: f64, inflate: bool, n: usize) -> f64 {
    let mut rng = Oracle { state: 0xDEC0DE };
    let sign = if inflate { 1.0 } else { -1.0 };
    let max = (p.len() - 1) as f64;
    (0..n)
        .map(|_| {
            let xi = rng.normal();
            let t = (y * (1.0 + sign * sigma_n * xi.abs())).clamp(0.0, max);
            oracle_dfl(p, t)
        })
        .sum::<f64>()
        / n as f64
}

/// Recomputes the matching from scratch for every prefix of the ranked list,
/// then reads the interpolated precision at each recall level directly off
/// the enumerated (precision, recall) points.
pub fn brute_force_ap(dets: &[Detection], gts: &[BBox], thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut points = Vec::new();
    for k in 1..=order.len() {
        let mut taken = vec![false; gts.len()];
        let mut tp = 0usize;
        for &i in &order[..k] {
            let mut best: Option<usize> = None;
            let mut best_iou = -1.0;
            for (j, g) in gts.iter().enumerate() {
                let v = iou(&dets[i].bbox, g);
                if !taken[j] && v >= thr && v > best_iou {
                    best = Some(j);
                    best_iou = v;
                }
            }
            if let Some(j) = best {
                taken[j] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / k as f64, tp as f64 / gts.len() as f64));
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let level = r as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(_, rec)| *rec >= level)
            .map(|(p, _)| *p)
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))));
        sum += best.unwrap_or(0.0);
    }
    sum / 101.0
}
