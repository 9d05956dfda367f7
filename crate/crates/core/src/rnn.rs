//! Single-layer LSTM with a standard and a hoisted-input-projection forward
//! pass, and step-wise and deferred backward passes.
//!
//! Gate order is `(i, f, g, o)`; `i`, `f`, `o` use the logistic sigmoid and
//! `g` uses tanh. Gate pre-activations are always formed as
//! `(x_t·W_x + b) + h_{t-1}·W_h`, which lets the hoisted variant compute the
//! first term for all steps in one matmul and still match bit for bit.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `[F_in, 4H]`
    pub w_x: Tensor,
    /// `[H, 4H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn new(w_x: Tensor, w_h: Tensor, bias: Tensor) -> Result<Self> {
        let (_, g) = w_x.dims2("LstmParams")?;
        let (h, g2) = w_h.dims2("LstmParams")?;
        if g != 4 * h || g2 != g || bias.shape() != [g] {
            return Err(Error::shape(
                "LstmParams",
                format!("W_x {:?}, W_h {:?}, bias {:?} do not describe 4H gates", w_x.shape(), w_h.shape(), bias.shape()),
            ));
        }
        Ok(Self { w_x, w_h, bias })
    }

    /// Uniform `[-scale, scale]` initialisation.
    pub fn random(input: usize, hidden: usize, scale: f32, rng: &mut impl Rng) -> Self {
        let u = Uniform::new_inclusive(-scale, scale).expect("valid range");
        let mut draw = |shape: &[usize]| Tensor::from_fn(shape, |_| u.sample(rng));
        let w_x = draw(&[input, 4 * hidden]);
        let w_h = draw(&[hidden, 4 * hidden]);
        let bias = draw(&[4 * hidden]);
        Self { w_x, w_h, bias }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input_features(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn to_bf16(&self) -> Self {
        Self { w_x: self.w_x.to_bf16(), w_h: self.w_h.to_bf16(), bias: self.bias.to_bf16() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    /// `[B, H]`
    pub h: Tensor,
    /// `[B, H]`
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self { h: Tensor::zeros(&[batch, hidden]), c: Tensor::zeros(&[batch, hidden]) }
    }
}

/// Calls and rows of the input-to-gates projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub calls: usize,
    pub rows_per_call: usize,
}

impl ProjectionStats {
    /// Matrix elements of `x` consumed per projection call.
    pub fn elements_per_call(&self, input_features: usize) -> usize {
        self.rows_per_call * input_features
    }
}

/// Activations saved by the forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    /// `[T·B, F]`
    x: Tensor,
    /// `T+1` hidden states `[B, H]`, starting with the initial one.
    h: Vec<Vec<f32>>,
    /// `T+1` cell states.
    c: Vec<Vec<f32>>,
    /// Post-activation gates per step, `[B, 4H]`.
    gates: Vec<Vec<f32>>,
    /// `tanh(c_t)` per step.
    tanh_c: Vec<Vec<f32>>,
    /// Per step and batch row: whether the step is within the row's length.
    active: Vec<Vec<bool>>,
    batch: usize,
}

#[derive(Clone, Debug)]
pub struct LstmOutput {
    /// `[T, B, H]`; zero at masked steps.
    pub h_seq: Tensor,
    pub final_state: LstmState,
    pub stats: ProjectionStats,
    pub cache: Option<LstmCache>,
}

impl LstmOutput {
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
    /// `[T, B, F]`
    pub x: Tensor,
    pub init: LstmState,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[t, b, f] => Ok((t, b, f)),
        other => Err(Error::shape("lstm", format!("input must be [T, B, F], got {other:?}"))),
    }
}

fn check(x_seq: &Tensor, params: &LstmParams, init: &LstmState, lengths: Option<&[usize]>) -> Result<(usize, usize, usize)> {
    let (t, b, f) = dims3(x_seq)?;
    if t == 0 {
        return Err(Error::invalid("lstm", "sequence must have at least one step"));
    }
    if f != params.input_features() {
        return Err(Error::shape("lstm", format!("input features {f} != W_x rows {}", params.input_features())));
    }
    let h = params.hidden();
    if init.h.shape() != [b, h] || init.c.shape() != [b, h] {
        return Err(Error::shape("lstm", format!("initial state {:?}/{:?} != [{b}, {h}]", init.h.shape(), init.c.shape())));
    }
    if let Some(l) = lengths {
        if l.len() != b || l.iter().any(|&l| l > t) {
            return Err(Error::invalid("lstm", format!("lengths {l:?} invalid for T={t}, B={b}")));
        }
    }
    Ok((t, b, f))
}

fn forward(x_seq: &Tensor, params: &LstmParams, init: &LstmState, lengths: Option<&[usize]>, hoisted: bool) -> Result<LstmOutput> {
    let (steps, b, f) = check(x_seq, params, init, lengths)?;
    let hid = params.hidden();
    let g4 = 4 * hid;
    let x2 = Tensor::from_parts(vec![steps * b, f], x_seq.data().to_vec()).with_dtype(x_seq.dtype());

    let add_bias = |mut p: Vec<f32>| {
        for row in p.chunks_exact_mut(g4) {
            for (v, &bb) in row.iter_mut().zip(params.bias.data()) {
                *v += bb;
            }
        }
        p
    };
    let (projected, stats) = if hoisted {
        let p = add_bias(matmul(&x2, &params.w_x)?.into_data());
        (Some(p), ProjectionStats { calls: 1, rows_per_call: steps * b })
    } else {
        (None, ProjectionStats { calls: steps, rows_per_call: b })
    };

    let mut h = vec![init.h.data().to_vec()];
    let mut c = vec![init.c.data().to_vec()];
    let mut gates = Vec::with_capacity(steps);
    let mut tanh_c = Vec::with_capacity(steps);
    let mut active = Vec::with_capacity(steps);
    let mut h_seq = Vec::with_capacity(steps * b * hid);
    for t in 0..steps {
        let proj = match &projected {
            Some(p) => p[t * b * g4..(t + 1) * b * g4].to_vec(),
            None => add_bias(matmul(&x2.slice_rows(t * b, (t + 1) * b)?, &params.w_x)?.into_data()),
        };
        let h_prev = Tensor::from_parts(vec![b, hid], h[t].clone());
        let rec = matmul(&h_prev, &params.w_h)?;
        let mut a: Vec<f32> = proj.iter().zip(rec.data()).map(|(p, r)| p + r).collect();
        let mut hn = vec![0.0f32; b * hid];
        let mut cn = vec![0.0f32; b * hid];
        let mut tc = vec![0.0f32; b * hid];
        let mut act = vec![true; b];
        for r in 0..b {
            let live = lengths.is_none_or(|l| t < l[r]);
            act[r] = live;
            let row = &mut a[r * g4..(r + 1) * g4];
            for j in 0..hid {
                let i = sigmoid(row[j]);
                let fg = sigmoid(row[hid + j]);
                let g = row[2 * hid + j].tanh();
                let o = sigmoid(row[3 * hid + j]);
                row[j] = i;
                row[hid + j] = fg;
                row[2 * hid + j] = g;
                row[3 * hid + j] = o;
                let k = r * hid + j;
                if live {
                    cn[k] = fg * c[t][k] + i * g;
                    tc[k] = cn[k].tanh();
                    hn[k] = o * tc[k];
                } else {
                    cn[k] = c[t][k];
                    hn[k] = h[t][k];
                }
            }
        }
        for r in 0..b {
            if act[r] {
                h_seq.extend_from_slice(&hn[r * hid..(r + 1) * hid]);
            } else {
                h_seq.extend(std::iter::repeat_n(0.0, hid));
            }
        }
        h.push(hn);
        c.push(cn);
        gates.push(a);
        tanh_c.push(tc);
        active.push(act);
    }
    let final_state = LstmState { h: Tensor::from_parts(vec![b, hid], h[steps].clone()), c: Tensor::from_parts(vec![b, hid], c[steps].clone()) };
    Ok(LstmOutput {
        h_seq: Tensor::from_parts(vec![steps, b, hid], h_seq),
        final_state,
        stats,
        cache: Some(LstmCache { x: x2, h, c, gates, tanh_c, active, batch: b }),
    })
}

/// Input projection computed inside the loop, one `[B, F]` matmul per step.
pub fn lstm_forward_standard(x_seq: &Tensor, params: &LstmParams, init: &LstmState) -> Result<LstmOutput> {
    forward(x_seq, params, init, None, false)
}

/// Input projection for all steps as one `[T·B, F]` matmul before the loop.
pub fn lstm_forward_hoisted(x_seq: &Tensor, params: &LstmParams, init: &LstmState) -> Result<LstmOutput> {
    forward(x_seq, params, init, None, true)
}

/// Variable-length batch: row `b` is real for its first `lengths[b]` steps.
/// Padded steps carry the state through unchanged and output zeros.
pub fn lstm_forward_masked(x_seq: &Tensor, lengths: &[usize], params: &LstmParams, init: &LstmState, hoisted: bool) -> Result<LstmOutput> {
    forward(x_seq, params, init, Some(lengths), hoisted)
}

/// Gate pre-activation gradients of one step, plus the carried `dh`, `dc`.
fn step_back(cache: &LstmCache, t: usize, hid: usize, dh_out: &[f32], dh_next: &mut [f32], dc_next: &mut [f32]) -> Vec<f32> {
    let b = cache.batch;
    let g4 = 4 * hid;
    let gates = &cache.gates[t];
    let mut d = vec![0.0f32; b * g4];
    for r in 0..b {
        if !cache.active[t][r] {
            // State passed through unchanged; gradients flow straight back.
            continue;
        }
        for j in 0..hid {
            let k = r * hid + j;
            let row = &gates[r * g4..(r + 1) * g4];
            let (i, f, g, o) = (row[j], row[hid + j], row[2 * hid + j], row[3 * hid + j]);
            let tc = cache.tanh_c[t][k];
            let dh = dh_out[k] + dh_next[k];
            let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
            let dr = &mut d[r * g4..(r + 1) * g4];
            dr[j] = dc * g * i * (1.0 - i);
            dr[hid + j] = dc * cache.c[t][k] * f * (1.0 - f);
            dr[2 * hid + j] = dc * i * (1.0 - g * g);
            dr[3 * hid + j] = dh * tc * o * (1.0 - o);
            dc_next[k] = dc * f;
            dh_next[k] = 0.0;
        }
    }
    d
}

fn backward(out: &LstmOutput, params: &LstmParams, d_h_seq: &Tensor, d_final: Option<&LstmState>, deferred: bool) -> Result<LstmGrads> {
    let cache = out.cache.as_ref().ok_or_else(|| Error::Cache("LSTM backward needs the forward cache".into()))?;
    let b = cache.batch;
    let steps = cache.gates.len();
    let hid = params.hidden();
    let f = params.input_features();
    let g4 = 4 * hid;
    if d_h_seq.shape() != [steps, b, hid] {
        return Err(Error::shape("lstm_backward", format!("upstream {:?} != [{steps}, {b}, {hid}]", d_h_seq.shape())));
    }
    let (mut dh, mut dc) = match d_final {
        Some(s) if s.h.shape() == [b, hid] && s.c.shape() == [b, hid] => (s.h.data().to_vec(), s.c.data().to_vec()),
        Some(s) => return Err(Error::shape("lstm_backward", format!("final-state gradient {:?}", s.h.shape()))),
        None => (vec![0.0; b * hid], vec![0.0; b * hid]),
    };
    let w_h_t = params.w_h.transpose()?;
    let w_x_t = params.w_x.transpose()?;

    let mut d_all = vec![0.0f32; steps * b * g4];
    let mut dwx = vec![0.0f32; f * g4];
    let mut dwh = vec![0.0f32; hid * g4];
    let mut db = vec![0.0f32; g4];
    let mut dx = vec![0.0f32; steps * b * f];
    for t in (0..steps).rev() {
        let dh_out = &d_h_seq.data()[t * b * hid..(t + 1) * b * hid];
        // Masked steps: upstream gradient of a zero output is dropped.
        let dh_out: Vec<f32> = (0..b * hid).map(|k| if cache.active[t][k / hid] { dh_out[k] } else { 0.0 }).collect();
        let d = step_back(cache, t, hid, &dh_out, &mut dh, &mut dc);
        let dt = Tensor::from_parts(vec![b, g4], d);
        let back_h = matmul(&dt, &w_h_t)?;
        for (acc, v) in dh.iter_mut().zip(back_h.data()) {
            *acc += v;
        }
        if deferred {
            d_all[t * b * g4..(t + 1) * b * g4].copy_from_slice(dt.data());
        } else {
            let xt = cache.x.slice_rows(t * b, (t + 1) * b)?.transpose()?;
            let ht = Tensor::from_parts(vec![b, hid], cache.h[t].clone()).transpose()?;
            for (acc, v) in dwx.iter_mut().zip(matmul(&xt, &dt)?.data()) {
                *acc += v;
            }
            for (acc, v) in dwh.iter_mut().zip(matmul(&ht, &dt)?.data()) {
                *acc += v;
            }
            for row in dt.data().chunks_exact(g4) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            dx[t * b * f..(t + 1) * b * f].copy_from_slice(matmul(&dt, &w_x_t)?.data());
        }
    }
    if deferred {
        let d = Tensor::from_parts(vec![steps * b, g4], d_all);
        let h_prev: Vec<f32> = cache.h[..steps].concat();
        let h_prev = Tensor::from_parts(vec![steps * b, hid], h_prev);
        dwx = matmul(&cache.x.transpose()?, &d)?.into_data();
        dwh = matmul(&h_prev.transpose()?, &d)?.into_data();
        for row in d.data().chunks_exact(g4) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        dx = matmul(&d, &w_x_t)?.into_data();
    }
    Ok(LstmGrads {
        w_x: Tensor::from_parts(vec![f, g4], dwx),
        w_h: Tensor::from_parts(vec![hid, g4], dwh),
        bias: Tensor::from_parts(vec![g4], db),
        x: Tensor::from_parts(vec![steps, b, f], dx),
        init: LstmState { h: Tensor::from_parts(vec![b, hid], dh), c: Tensor::from_parts(vec![b, hid], dc) },
    })
}

/// Backward pass accumulating weight gradients inside the time loop.
pub fn lstm_backward_stepwise(out: &LstmOutput, params: &LstmParams, d_h_seq: &Tensor, d_final: Option<&LstmState>) -> Result<LstmGrads> {
    backward(out, params, d_h_seq, d_final, false)
}

/// Backward pass that only stores per-step gate gradients in the loop and
/// contracts them against the saved inputs and states once afterwards.
pub fn lstm_backward_deferred(out: &LstmOutput, params: &LstmParams, d_h_seq: &Tensor, d_final: Option<&LstmState>) -> Result<LstmGrads> {
    backward(out, params, d_h_seq, d_final, true)
}
