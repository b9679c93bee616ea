//! Single-layer LSTM cell with an analytic adjoint.
//!
//! Every operation works on `columns` independent sequences at once: inputs are
//! `input_dim x columns` and states `hidden_dim x columns`, row-major. The
//! single-vector case is `columns == 1`.

use rand::Rng;

use super::{fingerprint, join, uniform, ParamRef, Parameterized};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{gemm, sigmoid};

/// Input-to-gate (`w_i*`, `hidden x input`) and hidden-to-gate (`w_h*`,
/// `hidden x hidden`) matrices plus their biases, for gates i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_ii: Vec<f64>,
    pub w_if: Vec<f64>,
    pub w_ig: Vec<f64>,
    pub w_io: Vec<f64>,
    pub w_hi: Vec<f64>,
    pub w_hf: Vec<f64>,
    pub w_hg: Vec<f64>,
    pub w_ho: Vec<f64>,
    pub b_ii: Vec<f64>,
    pub b_if: Vec<f64>,
    pub b_ig: Vec<f64>,
    pub b_io: Vec<f64>,
    pub b_hi: Vec<f64>,
    pub b_hf: Vec<f64>,
    pub b_hg: Vec<f64>,
    pub b_ho: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    Input,
    Forget,
    Cell,
    Output,
}

const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output];

impl LstmWeights {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wi = || vec![0.0; hidden_dim * input_dim];
        let wh = || vec![0.0; hidden_dim * hidden_dim];
        let b = || vec![0.0; hidden_dim];
        Self {
            input_dim,
            hidden_dim,
            w_ii: wi(),
            w_if: wi(),
            w_ig: wi(),
            w_io: wi(),
            w_hi: wh(),
            w_hf: wh(),
            w_hg: wh(),
            w_ho: wh(),
            b_ii: b(),
            b_if: b(),
            b_ig: b(),
            b_io: b(),
            b_hi: b(),
            b_hf: b(),
            b_hg: b(),
            b_ho: b(),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` init with forget bias `b_if = 1`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let (hi, hh) = (hidden_dim * input_dim, hidden_dim * hidden_dim);
        let mut w = Self::zeros(input_dim, hidden_dim);
        for m in [&mut w.w_ii, &mut w.w_if, &mut w.w_ig, &mut w.w_io] {
            *m = uniform(rng, hi, input_dim);
        }
        for m in [&mut w.w_hi, &mut w.w_hf, &mut w.w_hg, &mut w.w_ho] {
            *m = uniform(rng, hh, hidden_dim);
        }
        for b in [&mut w.b_ii, &mut w.b_ig, &mut w.b_io] {
            *b = uniform(rng, hidden_dim, input_dim);
        }
        for b in [&mut w.b_hi, &mut w.b_hf, &mut w.b_hg, &mut w.b_ho] {
            *b = uniform(rng, hidden_dim, hidden_dim);
        }
        w.b_if = vec![1.0; hidden_dim];
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim)
    }

    fn gate(&self, g: Gate) -> (&[f64], &[f64], &[f64], &[f64]) {
        match g {
            Gate::Input => (&self.w_ii, &self.w_hi, &self.b_ii, &self.b_hi),
            Gate::Forget => (&self.w_if, &self.w_hf, &self.b_if, &self.b_hf),
            Gate::Cell => (&self.w_ig, &self.w_hg, &self.b_ig, &self.b_hg),
            Gate::Output => (&self.w_io, &self.w_ho, &self.b_io, &self.b_ho),
        }
    }

    #[allow(clippy::type_complexity)]
    fn gate_mut(&mut self, g: Gate) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        match g {
            Gate::Input => (&mut self.w_ii, &mut self.w_hi, &mut self.b_ii, &mut self.b_hi),
            Gate::Forget => (&mut self.w_if, &mut self.w_hf, &mut self.b_if, &mut self.b_hf),
            Gate::Cell => (&mut self.w_ig, &mut self.w_hg, &mut self.b_ig, &mut self.b_hg),
            Gate::Output => (&mut self.w_io, &mut self.w_ho, &mut self.b_io, &mut self.b_ho),
        }
    }

    fn validate(&self) -> Result<()> {
        let (hi, hh, h) = (
            self.hidden_dim * self.input_dim,
            self.hidden_dim * self.hidden_dim,
            self.hidden_dim,
        );
        for g in GATES {
            let (wi, wh, bi, bh) = self.gate(g);
            if wi.len() != hi || wh.len() != hh || bi.len() != h || bh.len() != h {
                return Err(shape_err(
                    "LstmWeights",
                    format!("({}, {}) consistent dims", self.input_dim, self.hidden_dim),
                    format!("gate {g:?}: {} / {} / {} / {}", wi.len(), wh.len(), bi.len(), bh.len()),
                ));
            }
        }
        Ok(())
    }

    fn id(&self) -> u64 {
        fingerprint(self.params().into_iter().map(|p| p.data))
    }
}

impl Parameterized for LstmWeights {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let (i, h) = (self.input_dim, self.hidden_dim);
        let mats: [(&str, &'a Vec<f64>, usize); 8] = [
            ("w_ii", &self.w_ii, i),
            ("w_if", &self.w_if, i),
            ("w_ig", &self.w_ig, i),
            ("w_io", &self.w_io, i),
            ("w_hi", &self.w_hi, h),
            ("w_hf", &self.w_hf, h),
            ("w_hg", &self.w_hg, h),
            ("w_ho", &self.w_ho, h),
        ];
        for (name, data, cols) in mats {
            out.push(ParamRef {
                name: join(prefix, name),
                shape: vec![h, cols],
                data,
            });
        }
        let biases: [(&str, &'a Vec<f64>); 8] = [
            ("b_ii", &self.b_ii),
            ("b_if", &self.b_if),
            ("b_ig", &self.b_ig),
            ("b_io", &self.b_io),
            ("b_hi", &self.b_hi),
            ("b_hf", &self.b_hf),
            ("b_hg", &self.b_hg),
            ("b_ho", &self.b_ho),
        ];
        for (name, data) in biases {
            out.push(ParamRef {
                name: join(prefix, name),
                shape: vec![h],
                data,
            });
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.extend([
            &mut self.w_ii[..],
            &mut self.w_if[..],
            &mut self.w_ig[..],
            &mut self.w_io[..],
            &mut self.w_hi[..],
            &mut self.w_hf[..],
            &mut self.w_hg[..],
            &mut self.w_ho[..],
            &mut self.b_ii[..],
            &mut self.b_if[..],
            &mut self.b_ig[..],
            &mut self.b_io[..],
            &mut self.b_hi[..],
            &mut self.b_hf[..],
            &mut self.b_hg[..],
            &mut self.b_ho[..],
        ]);
    }
}

/// Hidden and cell state for `columns` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub columns: usize,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize, columns: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim * columns],
            c: vec![0.0; hidden_dim * columns],
            columns,
        }
    }

    pub fn single(h: Vec<f64>, c: Vec<f64>) -> Self {
        Self { h, c, columns: 1 }
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    weights_id: u64,
    input_dim: usize,
    hidden_dim: usize,
    columns: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients of one cell step with respect to its inputs and parameters.
#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub x: Vec<f64>,
    pub state: LstmState,
    pub weights: LstmWeights,
}

/// One LSTM step:
/// `i, f, o = sigmoid(W_i* x + b_i* + W_h* h + b_h*)`, `g = tanh(...)`,
/// `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_cell_forward(x: &[f64], state: &LstmState, wts: &LstmWeights) -> Result<(LstmState, LstmCache)> {
    wts.validate()?;
    let (nin, nh, n) = (wts.input_dim, wts.hidden_dim, state.columns);
    if x.len() != nin * n {
        return Err(shape_err("lstm input", nin * n, x.len()));
    }
    if state.h.len() != nh * n || state.c.len() != nh * n {
        return Err(shape_err(
            "lstm state",
            nh * n,
            format!("h {} / c {}", state.h.len(), state.c.len()),
        ));
    }

    let pre = |g: Gate| {
        let (wi, wh, bi, bh) = wts.gate(g);
        let mut a = vec![0.0; nh * n];
        for (r, row) in a.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = bi[r] + bh[r]);
        }
        gemm(nh, nin, n, wi, false, x, false, 1.0, &mut a);
        gemm(nh, nh, n, wh, false, &state.h, false, 1.0, &mut a);
        a
    };
    let i: Vec<f64> = pre(Gate::Input).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = pre(Gate::Forget).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = pre(Gate::Cell).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = pre(Gate::Output).into_iter().map(sigmoid).collect();

    let c: Vec<f64> = (0..nh * n).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    let next = LstmState {
        h,
        c: c.clone(),
        columns: n,
    };
    let cache = LstmCache {
        weights_id: wts.id(),
        input_dim: nin,
        hidden_dim: nh,
        columns: n,
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
    };
    Ok((next, cache))
}

/// Adjoint of [`lstm_cell_forward`] given the gradients flowing into `h'` and `c'`.
pub fn lstm_cell_backward(grad_h: &[f64], grad_c: &[f64], cache: &LstmCache, wts: &LstmWeights) -> Result<LstmGrads> {
    if cache.input_dim != wts.input_dim || cache.hidden_dim != wts.hidden_dim {
        return Err(Error::StaleCache(format!(
            "cache built for ({}, {}), weights are ({}, {})",
            cache.input_dim, cache.hidden_dim, wts.input_dim, wts.hidden_dim
        )));
    }
    if cache.weights_id != wts.id() {
        return Err(Error::StaleCache("weights changed since the forward pass".into()));
    }
    let (nin, nh, n) = (cache.input_dim, cache.hidden_dim, cache.columns);
    if grad_h.len() != nh * n || grad_c.len() != nh * n {
        return Err(shape_err(
            "lstm output gradient",
            nh * n,
            format!("{} / {}", grad_h.len(), grad_c.len()),
        ));
    }

    let len = nh * n;
    let mut da_i = vec![0.0; len];
    let mut da_f = vec![0.0; len];
    let mut da_g = vec![0.0; len];
    let mut da_o = vec![0.0; len];
    let mut dc_prev = vec![0.0; len];
    for k in 0..len {
        let (i, f, g, o, t) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
        let dc = grad_c[k] + grad_h[k] * o * (1.0 - t * t);
        da_o[k] = grad_h[k] * t * o * (1.0 - o);
        da_i[k] = dc * g * i * (1.0 - i);
        da_g[k] = dc * i * (1.0 - g * g);
        da_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
        dc_prev[k] = dc * f;
    }

    let mut dw = wts.zeros_like();
    let mut dx = vec![0.0; nin * n];
    let mut dh_prev = vec![0.0; len];
    for (gate, da) in GATES.iter().zip([&da_i, &da_f, &da_g, &da_o]) {
        let (wi, wh, _, _) = wts.gate(*gate);
        let (gwi, gwh, gbi, gbh) = dw.gate_mut(*gate);
        gemm(nh, n, nin, da, false, &cache.x, true, 1.0, gwi);
        gemm(nh, n, nh, da, false, &cache.h_prev, true, 1.0, gwh);
        for (r, row) in da.chunks(n).enumerate() {
            let s: f64 = row.iter().sum();
            gbi[r] += s;
            gbh[r] += s;
        }
        gemm(nin, nh, n, wi, true, da, false, 1.0, &mut dx);
        gemm(nh, nh, n, wh, true, da, false, 1.0, &mut dh_prev);
    }
    Ok(LstmGrads {
        x: dx,
        state: LstmState {
            h: dh_prev,
            c: dc_prev,
            columns: n,
        },
        weights: dw,
    })
}

/// Runs a sequence from `init`, returning every intermediate state and cache.
pub fn lstm_sequence_forward(
    inputs: &[&[f64]],
    init: &LstmState,
    wts: &LstmWeights,
) -> Result<(Vec<LstmState>, Vec<LstmCache>)> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    let mut state = init.clone();
    for x in inputs {
        let (next, cache) = lstm_cell_forward(x, &state, wts)?;
        states.push(next.clone());
        caches.push(cache);
        state = next;
    }
    Ok((states, caches))
}
