//! Auxiliary heatmap branch: three conv blocks whose outputs are fused by an LSTM.
//!
//! At every spatial location the channel vectors produced by blocks 1, 2 and 3
//! form a length-3 sequence. One LSTM (shared across locations, zero initial
//! state) consumes it; the three hidden states are concatenated, mapped to one
//! channel by a per-location linear layer, squashed by a sigmoid and
//! nearest-neighbour upsampled back to image resolution.

use rand::Rng;

use super::conv::{ConvBlock, ConvCache, Pointwise};
use super::lstm::{lstm_cell_backward, lstm_cell_forward, LstmCache, LstmState, LstmWeights};
use super::{join, ParamRef, Parameterized};
use crate::error::{shape_err, Result};
use crate::linalg::sigmoid;
use crate::tensor::Tensor3;

pub const ALFF_UPSAMPLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlffParams {
    pub blocks: [ConvBlock; 3],
    pub lstm: LstmWeights,
    /// `1 x 3*hidden` channel adjustment.
    pub fc: Pointwise,
    pub upsample: usize,
}

#[derive(Debug, Clone)]
pub struct AlffCache {
    block_caches: Vec<ConvCache>,
    fusion: FusionCache,
}

/// Activations of the LSTM + linear + sigmoid stage.
#[derive(Debug, Clone)]
pub struct FusionCache {
    h: usize,
    w: usize,
    lstm: Vec<LstmCache>,
    concat: Tensor3,
    prob: Tensor3,
}

impl AlffParams {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        let blocks = [
            ConvBlock::new(channels, channels, 1, true, rng),
            ConvBlock::new(channels, channels, 1, true, rng),
            ConvBlock::new(channels, channels, 1, true, rng),
        ];
        Self {
            blocks,
            lstm: LstmWeights::new(channels, hidden, rng),
            fc: Pointwise::new(3 * hidden, 1, rng),
            upsample: ALFF_UPSAMPLE,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn channels(&self) -> usize {
        self.blocks[0].in_ch
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden_dim
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels();
        for b in &self.blocks {
            if b.in_ch != c || b.out_ch != c || b.stride != 1 {
                return Err(shape_err(
                    "ALFF conv block",
                    format!("{c} -> {c}, stride 1"),
                    format!("{} -> {}, stride {}", b.in_ch, b.out_ch, b.stride),
                ));
            }
        }
        if self.lstm.input_dim != c {
            return Err(shape_err("ALFF lstm input", c, self.lstm.input_dim));
        }
        if self.fc.in_ch != 3 * self.hidden() || self.fc.out_ch != 1 {
            return Err(shape_err(
                "ALFF channel adjust",
                format!("{} -> 1", 3 * self.hidden()),
                format!("{} -> {}", self.fc.in_ch, self.fc.out_ch),
            ));
        }
        Ok(())
    }

    /// LSTM over the three block outputs, concat, linear, sigmoid. Output is at
    /// feature resolution (before upsampling).
    pub fn fuse(&self, seq: [&Tensor3; 3]) -> Result<(Tensor3, FusionCache)> {
        let (c, h, w) = seq[0].shape();
        for s in &seq[1..] {
            s.ensure_shape("ALFF fusion sequence", (c, h, w))?;
        }
        let n = h * w;
        let hid = self.hidden();
        let mut state = LstmState::zeros(hid, n);
        let mut caches = Vec::with_capacity(3);
        let mut concat = Vec::with_capacity(3 * hid * n);
        for x in seq {
            let (next, cache) = lstm_cell_forward(x.data(), &state, &self.lstm)?;
            concat.extend_from_slice(&next.h);
            caches.push(cache);
            state = next;
        }
        let concat = Tensor3::from_vec(3 * hid, h, w, concat)?;
        let prob = self.fc.forward(&concat)?.map(sigmoid);
        Ok((
            prob.clone(),
            FusionCache {
                h,
                w,
                lstm: caches,
                concat,
                prob,
            },
        ))
    }

    /// Gradient of the fused map back to the three sequence inputs.
    pub fn fuse_backward(&self, cache: &FusionCache, grad_prob: &Tensor3, grads: &mut AlffParams) -> Result<[Tensor3; 3]> {
        let (h, w) = (cache.h, cache.w);
        grad_prob.ensure_shape("ALFF fused gradient", (1, h, w))?;
        let n = h * w;
        let hid = self.hidden();
        let dlogit = Tensor3::from_vec(
            1,
            h,
            w,
            grad_prob
                .data()
                .iter()
                .zip(cache.prob.data())
                .map(|(g, p)| g * p * (1.0 - p))
                .collect(),
        )?;
        let dconcat = self.fc.backward(&cache.concat, &dlogit, &mut grads.fc)?;
        let dconcat = dconcat.data();

        let mut dh_next = vec![0.0; hid * n];
        let mut dc_next = vec![0.0; hid * n];
        let mut dxs: Vec<Tensor3> = Vec::with_capacity(3);
        for t in (0..3).rev() {
            let dh: Vec<f64> = dconcat[t * hid * n..(t + 1) * hid * n]
                .iter()
                .zip(&dh_next)
                .map(|(a, b)| a + b)
                .collect();
            let g = lstm_cell_backward(&dh, &dc_next, &cache.lstm[t], &self.lstm)?;
            grads.lstm.add_assign(&g.weights);
            dh_next = g.state.h;
            dc_next = g.state.c;
            dxs.push(Tensor3::from_vec(self.channels(), h, w, g.x)?);
        }
        dxs.reverse();
        let [a, b, c]: [Tensor3; 3] = dxs.try_into().expect("three timesteps");
        Ok([a, b, c])
    }

    /// `shared_feature` (`C x h x w`) to a `1 x 8h x 8w` heatmap in `(0, 1)`.
    pub fn forward(&self, shared_feature: &Tensor3) -> Result<(Tensor3, AlffCache)> {
        self.validate()?;
        if shared_feature.channels() != self.channels() {
            return Err(shape_err("ALFF input channels", self.channels(), shared_feature.channels()));
        }
        let (b1, c1) = self.blocks[0].forward(shared_feature)?;
        let (b2, c2) = self.blocks[1].forward(&b1)?;
        let (b3, c3) = self.blocks[2].forward(&b2)?;
        let (prob, fusion) = self.fuse([&b1, &b2, &b3])?;
        Ok((
            prob.upsample_nearest(self.upsample),
            AlffCache {
                block_caches: vec![c1, c2, c3],
                fusion,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient of the shared feature.
    pub fn backward(&self, cache: &AlffCache, grad_pred: &Tensor3, grads: &mut AlffParams) -> Result<Tensor3> {
        let (h, w) = (cache.fusion.h, cache.fusion.w);
        grad_pred.ensure_shape("ALFF output gradient", (1, h * self.upsample, w * self.upsample))?;
        let dprob = grad_pred.downsample_sum(self.upsample);
        let [dx1, dx2, dx3] = self.fuse_backward(&cache.fusion, &dprob, grads)?;

        let [g0, g1, g2] = &mut grads.blocks;
        let d2 = self.blocks[2].backward(&cache.block_caches[2], &dx3, g2)?;
        let d2 = add(&d2, &dx2);
        let d1 = self.blocks[1].backward(&cache.block_caches[1], &d2, g1)?;
        let d1 = add(&d1, &dx1);
        self.blocks[0].backward(&cache.block_caches[0], &d1, g0)
    }
}

fn add(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let (c, h, w) = a.shape();
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor3::from_vec(c, h, w, data).expect("same shape")
}

/// Convenience wrapper returning only the prediction.
pub fn alff_forward(shared_feature: &Tensor3, p: &AlffParams) -> Result<Tensor3> {
    p.forward(shared_feature).map(|(out, _)| out)
}

impl Parameterized for AlffParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("block{i}")), out);
        }
        self.lstm.collect(&join(prefix, "lstm"), out);
        self.fc.collect(&join(prefix, "fc"), out);
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for b in &mut self.blocks {
            b.collect_mut(out);
        }
        self.lstm.collect_mut(out);
        self.fc.collect_mut(out);
    }
}
