use std::fmt;

use crate::error::{shape_err, Result};

/// Channel-major rank-3 grid (`c x h x w`), row-major within a channel.
#[derive(Clone, PartialEq)]
pub struct Tensor3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f64) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(shape_err("Tensor3::from_vec", c * h * w, data.len()));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Number of cells in one channel.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn ensure_shape(&self, context: &'static str, shape: (usize, usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(shape_err(
                context,
                format!("{shape:?}"),
                format!("{:?}", self.shape()),
            ));
        }
        Ok(())
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Self {
        let (h, w) = (self.h * factor, self.w * factor);
        let mut out = Self::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y / factor, x / factor));
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor3::upsample_nearest`]: sums each `factor x factor` block.
    pub fn downsample_sum(&self, factor: usize) -> Self {
        let (h, w) = (self.h / factor, self.w / factor);
        let mut out = Self::zeros(self.c, h, w);
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    let i = (c * h + y / factor) * w + x / factor;
                    out.data[i] += self.get(c, y, x);
                }
            }
        }
        out
    }
}

impl fmt::Debug for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor3({}x{}x{})", self.c, self.h, self.w)
    }
}
