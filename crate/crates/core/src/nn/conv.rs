//! 3x3 convolution blocks (conv, channelwise normalisation, SiLU) and 1x1 linear layers.

use rand::Rng;

use super::{join, uniform, ParamRef, Parameterized};
use crate::error::{shape_err, Result};
use crate::linalg::{gemm, sigmoid};
use crate::tensor::Tensor3;

const NORM_EPS: f64 = 1e-5;

/// Per-channel scale and shift applied to spatially standardised activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// `3x3` convolution with zero padding 1, optional channel normalisation, then SiLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `out_ch x in_ch x 3 x 3`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: Option<ChannelNorm>,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    in_shape: (usize, usize, usize),
    out_h: usize,
    out_w: usize,
    cols: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_act: Vec<f64>,
    /// `sigmoid(pre_act)`, reused by the activation gradient.
    gate: Vec<f64>,
}

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, stride: usize, norm: bool, rng: &mut R) -> Self {
        let fan_in = in_ch * 9;
        Self {
            in_ch,
            out_ch,
            stride,
            weight: uniform(rng, out_ch * in_ch * 9, fan_in),
            bias: uniform(rng, out_ch, fan_in),
            norm: norm.then(|| ChannelNorm {
                gamma: vec![1.0; out_ch],
                beta: vec![0.0; out_ch],
            }),
        }
    }

    /// A block with every parameter zero (normalisation scale included).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, x: &Tensor3) -> Result<(Tensor3, ConvCache)> {
        let (c, h, w) = x.shape();
        if c != self.in_ch {
            return Err(shape_err("ConvBlock input channels", self.in_ch, c));
        }
        if h == 0 || w == 0 {
            return Err(shape_err("ConvBlock spatial size", "non-empty", format!("{h}x{w}")));
        }
        let (oh, ow) = self.output_size(h, w);
        let n = oh * ow;
        let k = self.in_ch * 9;
        let cols = im2col(x, self.stride, oh, ow);

        let mut pre = vec![0.0; self.out_ch * n];
        for (o, row) in pre.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias[o]);
        }
        gemm(self.out_ch, k, n, &self.weight, false, &cols, false, 1.0, &mut pre);

        let (xhat, inv_std, pre_act) = match &self.norm {
            Some(norm) => {
                let mut xhat = pre;
                let mut inv_std = vec![0.0; self.out_ch];
                let mut z = vec![0.0; self.out_ch * n];
                for o in 0..self.out_ch {
                    let row = &mut xhat[o * n..(o + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let is = 1.0 / (var + NORM_EPS).sqrt();
                    inv_std[o] = is;
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (*v - mean) * is;
                        z[o * n + j] = norm.gamma[o] * *v + norm.beta[o];
                    }
                }
                (xhat, inv_std, z)
            }
            None => (Vec::new(), Vec::new(), pre),
        };
        let gate: Vec<f64> = pre_act.iter().map(|&z| sigmoid(z)).collect();
        let out = Tensor3::from_vec(self.out_ch, oh, ow, pre_act.iter().zip(&gate).map(|(z, s)| z * s).collect())?;
        Ok((
            out,
            ConvCache {
                in_shape: (c, h, w),
                out_h: oh,
                out_w: ow,
                cols,
                xhat,
                inv_std,
                pre_act,
                gate,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns the input gradient.
    pub fn backward(&self, cache: &ConvCache, grad_out: &Tensor3, grads: &mut ConvBlock) -> Result<Tensor3> {
        Ok(self.backward_inner(cache, grad_out, grads, true)?.expect("input gradient requested"))
    }

    /// Parameter gradients only; skips the input gradient (e.g. for the image).
    pub fn backward_params(&self, cache: &ConvCache, grad_out: &Tensor3, grads: &mut ConvBlock) -> Result<()> {
        self.backward_inner(cache, grad_out, grads, false).map(|_| ())
    }

    fn backward_inner(
        &self,
        cache: &ConvCache,
        grad_out: &Tensor3,
        grads: &mut ConvBlock,
        input_grad: bool,
    ) -> Result<Option<Tensor3>> {
        grad_out.ensure_shape("ConvBlock grad_out", (self.out_ch, cache.out_h, cache.out_w))?;
        let n = cache.out_h * cache.out_w;
        let k = self.in_ch * 9;

        let mut d: Vec<f64> = grad_out
            .data()
            .iter()
            .zip(cache.pre_act.iter().zip(&cache.gate))
            .map(|(g, (&z, &s))| g * (s * (1.0 + z * (1.0 - s))))
            .collect();

        if let (Some(norm), Some(gnorm)) = (&self.norm, grads.norm.as_mut()) {
            for o in 0..self.out_ch {
                let dz = &mut d[o * n..(o + 1) * n];
                let xh = &cache.xhat[o * n..(o + 1) * n];
                let mut sum_dxh = 0.0;
                let mut sum_dxh_xh = 0.0;
                for (g, x) in dz.iter().zip(xh) {
                    gnorm.gamma[o] += g * x;
                    gnorm.beta[o] += g;
                    let dxh = g * norm.gamma[o];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * x;
                }
                let nf = n as f64;
                let is = cache.inv_std[o];
                for (g, x) in dz.iter_mut().zip(xh) {
                    let dxh = *g * norm.gamma[o];
                    *g = is / nf * (nf * dxh - sum_dxh - x * sum_dxh_xh);
                }
            }
        }

        for (o, row) in d.chunks(n).enumerate() {
            grads.bias[o] += row.iter().sum::<f64>();
        }
        gemm(self.out_ch, n, k, &d, false, &cache.cols, true, 1.0, &mut grads.weight);
        if !input_grad {
            return Ok(None);
        }
        let mut dcols = vec![0.0; k * n];
        gemm(k, self.out_ch, n, &self.weight, true, &d, false, 0.0, &mut dcols);
        let (c, h, w) = cache.in_shape;
        Ok(Some(col2im(&dcols, (c, h, w), self.stride, cache.out_h, cache.out_w)))
    }
}

fn im2col(x: &Tensor3, stride: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let n = oh * ow;
    let mut cols = vec![0.0; c * 9 * n];
    for ci in 0..c {
        let plane = x.channel(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            row[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], (c, h, w): (usize, usize, usize), stride: usize, oh: usize, ow: usize) -> Tensor3 {
    let n = oh * ow;
    let mut out = Tensor3::zeros(c, h, w);
    for ci in 0..c {
        let plane = out.channel_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

impl Parameterized for ConvBlock {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_ch, self.in_ch, 3, 3],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_ch],
            data: &self.bias,
        });
        if let Some(n) = &self.norm {
            out.push(ParamRef {
                name: join(prefix, "norm.gamma"),
                shape: vec![self.out_ch],
                data: &n.gamma,
            });
            out.push(ParamRef {
                name: join(prefix, "norm.beta"),
                shape: vec![self.out_ch],
                data: &n.beta,
            });
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
    }
}

/// Per-location linear map between channel vectors (a `1x1` convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch x in_ch`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Pointwise {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: uniform(rng, out_ch * in_ch, in_ch),
            bias: uniform(rng, out_ch, in_ch),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let (c, h, w) = x.shape();
        if c != self.in_ch {
            return Err(shape_err("Pointwise input channels", self.in_ch, c));
        }
        let n = h * w;
        let mut out = vec![0.0; self.out_ch * n];
        for (o, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias[o]);
        }
        gemm(self.out_ch, c, n, &self.weight, false, x.data(), false, 1.0, &mut out);
        Tensor3::from_vec(self.out_ch, h, w, out)
    }

    /// `input` is the tensor the forward pass consumed.
    pub fn backward(&self, input: &Tensor3, grad_out: &Tensor3, grads: &mut Pointwise) -> Result<Tensor3> {
        let (_, h, w) = input.shape();
        grad_out.ensure_shape("Pointwise grad_out", (self.out_ch, h, w))?;
        let n = h * w;
        for (o, row) in grad_out.data().chunks(n).enumerate() {
            grads.bias[o] += row.iter().sum::<f64>();
        }
        gemm(self.out_ch, n, self.in_ch, grad_out.data(), false, input.data(), true, 1.0, &mut grads.weight);
        let mut dx = vec![0.0; self.in_ch * n];
        gemm(self.in_ch, self.out_ch, n, &self.weight, true, grad_out.data(), false, 0.0, &mut dx);
        Tensor3::from_vec(self.in_ch, h, w, dx)
    }
}

impl Parameterized for Pointwise {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_ch, self.in_ch],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_ch],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::silu;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(in_ch: usize, out_ch: usize, stride: usize, norm: bool) -> ConvBlock {
        ConvBlock::new(in_ch, out_ch, stride, norm, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn identity_kernel_gives_silu() {
        let mut b = block(1, 1, 1, false);
        b.weight = vec![0.0; 9];
        b.weight[4] = 1.0;
        b.bias = vec![0.0];
        let x = Tensor3::from_vec(1, 3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.5).collect()).unwrap();
        let (y, _) = b.forward(&x).unwrap();
        for (a, v) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, silu(*v));
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let b = block(2, 3, 1, true).zeros_like();
        let x = Tensor3::filled(2, 4, 4, 0.7);
        let (y, _) = b.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_kernel_counts_padded_taps() {
        let mut b = block(1, 1, 1, false);
        b.weight = vec![1.0; 9];
        b.bias = vec![0.0];
        let x = Tensor3::filled(1, 3, 3, 1.0);
        let (_, cache) = b.forward(&x).unwrap();
        assert_eq!(cache.pre_act[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(cache.pre_act[corner], 4.0);
        }
        assert_eq!(cache.pre_act[1], 6.0);
    }

    #[test]
    fn stride_two_halves_spatial_size() {
        let b = block(3, 4, 2, true);
        let (y, _) = b.forward(&Tensor3::filled(3, 16, 12, 0.1)).unwrap();
        assert_eq!(y.shape(), (4, 8, 6));
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let b = block(2, 2, 1, true);
        assert!(b.forward(&Tensor3::zeros(3, 4, 4)).is_err());
    }

    #[test]
    fn pointwise_matches_manual_sum() {
        let mut p = Pointwise::new(2, 1, &mut ChaCha8Rng::seed_from_u64(0));
        p.weight = vec![2.0, -1.0];
        p.bias = vec![0.5];
        let x = Tensor3::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 5.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[2.0 - 3.0 + 0.5, 4.0 - 5.0 + 0.5]);
    }
}
