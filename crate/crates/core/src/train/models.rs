use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::InputShape;
use crate::error::{Error, Result};
use crate::rnn::{lstm_backward_deferred, lstm_forward_hoisted, LstmParams, LstmState};
use crate::spatial::{batch_norm_apply, batch_norm_backward, batch_norm_train};
use crate::tensor::{conv2d, conv2d_backward_filter, matmul, ConvParams, Tensor};
use crate::torus::{GradientSet, WeightSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    /// conv 3×3 SAME → batch norm across all cores → ReLU → dense.
    Cnn {
        filters: usize,
        /// Round conv and dense operands to bf16.
        #[serde(default)]
        bf16: bool,
    },
    /// One LSTM layer; the final hidden state feeds a dense classifier.
    Lstm { hidden: usize },
}

/// Result of one data-parallel forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// Sum of per-example losses on each core.
    pub loss_sums: Vec<f64>,
    /// Per-core gradients, already divided by the global batch size.
    pub grads: Vec<GradientSet>,
}

pub trait Model: Send {
    fn init_weights(&self, rng: &mut ChaCha8Rng) -> WeightSet;

    /// `inputs[c]` and `labels[c]` are core `c`'s slice of the global batch.
    fn train_step(&mut self, weights: &WeightSet, inputs: &[Tensor], labels: &[&[usize]], global_batch: usize) -> Result<StepOutput>;

    /// Inference logits `[B, classes]`.
    fn logits(&self, weights: &WeightSet, inputs: &Tensor) -> Result<Tensor>;
}

pub fn build_model(spec: &ModelSpec, input: &InputShape, classes: usize) -> Result<Box<dyn Model>> {
    match (*spec, *input) {
        (ModelSpec::Cnn { filters, bf16 }, InputShape::Image { height, width, channels }) if filters > 0 => {
            Ok(Box::new(Cnn { height, width, channels, filters, classes, bf16, running: None }))
        }
        (ModelSpec::Lstm { hidden }, InputShape::Sequence { steps, features }) if hidden > 0 => {
            Ok(Box::new(LstmClassifier { steps, features, hidden, classes }))
        }
        _ => Err(Error::invalid("build_model", format!("model {spec:?} does not fit input {input:?}"))),
    }
}

/// Mean-free softmax cross-entropy in f32. Returns per-row losses and
/// `(softmax - onehot) * scale`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize], scale: f32) -> Result<(Vec<f32>, Tensor)> {
    let (b, c) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != b || labels.iter().any(|&y| y >= c) {
        return Err(Error::shape("softmax_cross_entropy", format!("{b} rows of {c} classes, labels {labels:?}")));
    }
    let mut losses = Vec::with_capacity(b);
    let mut grad = Vec::with_capacity(b * c);
    for (row, &y) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        losses.push(lse - row[y]);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            grad.push((p - if j == y { 1.0 } else { 0.0 }) * scale);
        }
    }
    Ok((losses, Tensor::new(vec![b, c], grad)?))
}

fn normal(std: f32) -> Normal<f32> {
    Normal::new(0.0, std).expect("positive std")
}

fn dense_forward(a: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = matmul(a, w)?.into_data();
    let n = b.len();
    for row in out.chunks_exact_mut(n) {
        for (v, &bb) in row.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Tensor::new(vec![a.shape()[0], n], out)
}

fn column_sums(t: &Tensor) -> Tensor {
    let n = t.shape()[1];
    let mut s = vec![0.0f32; n];
    for row in t.data().chunks_exact(n) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::vector(s)
}

fn get<'a>(w: &'a WeightSet, name: &str) -> Result<&'a Tensor> {
    w.get(name).ok_or_else(|| Error::Layout(format!("missing weight {name}")))
}

struct Cnn {
    height: usize,
    width: usize,
    channels: usize,
    filters: usize,
    classes: usize,
    bf16: bool,
    /// Running batch-norm mean and variance used at inference.
    running: Option<(Vec<f32>, Vec<f32>)>,
}

const BN_MOMENTUM: f32 = 0.9;

impl Cnn {
    fn params(&self) -> ConvParams {
        ConvParams::same(3, self.channels, self.filters)
    }

    fn flat(&self) -> usize {
        self.height * self.width * self.filters
    }

    fn maybe_bf16(&self, t: &Tensor) -> Tensor {
        if self.bf16 {
            t.to_bf16()
        } else {
            t.clone()
        }
    }

    fn conv(&self, x: &Tensor, k: &Tensor) -> Result<Tensor> {
        conv2d(&self.maybe_bf16(x), &self.maybe_bf16(k), &self.params())
    }
}

impl Model for Cnn {
    fn init_weights(&self, rng: &mut ChaCha8Rng) -> WeightSet {
        let f = self.filters;
        let kstd = (2.0 / (9 * self.channels) as f32).sqrt();
        let dstd = (1.0 / self.flat() as f32).sqrt();
        let kd = normal(kstd);
        let dd = normal(dstd);
        WeightSet::new(vec![
            ("conv/kernel".into(), Tensor::from_fn(&[3, 3, self.channels, f], |_| kd.sample(rng))),
            ("bn/gamma".into(), Tensor::full(&[f], 1.0)),
            ("bn/beta".into(), Tensor::zeros(&[f])),
            ("dense/kernel".into(), Tensor::from_fn(&[self.flat(), self.classes], |_| dd.sample(rng))),
            ("dense/bias".into(), Tensor::zeros(&[self.classes])),
        ])
        .expect("unique names")
    }

    fn train_step(&mut self, w: &WeightSet, inputs: &[Tensor], labels: &[&[usize]], global_batch: usize) -> Result<StepOutput> {
        let (k, gamma, beta, dw, db) =
            (get(w, "conv/kernel")?, get(w, "bn/gamma")?, get(w, "bn/beta")?, get(w, "dense/kernel")?, get(w, "dense/bias")?);
        let (hw, f) = (self.height * self.width, self.filters);
        let mut z = Vec::with_capacity(inputs.len());
        for x in inputs {
            let b = x.shape()[0];
            z.push(self.conv(x, k)?.reshape(&[b * hw, f])?);
        }
        let zr: Vec<&Tensor> = z.iter().collect();
        let bn = batch_norm_train(&zr, gamma.data(), beta.data())?;
        self.running = Some(match self.running.take() {
            None => (bn.mean.clone(), bn.var.clone()),
            Some((m, v)) => (
                m.iter().zip(&bn.mean).map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b).collect(),
                v.iter().zip(&bn.var).map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b).collect(),
            ),
        });
        let scale = 1.0 / global_batch as f32;
        let dw_t = self.maybe_bf16(dw).transpose()?;
        let mut loss_sums = Vec::with_capacity(inputs.len());
        let mut dys = Vec::with_capacity(inputs.len());
        let mut dense_grads = Vec::with_capacity(inputs.len());
        for ((y, lab), x) in bn.outputs.iter().zip(labels).zip(inputs) {
            let b = x.shape()[0];
            let a = y.map(|v| v.max(0.0)).reshape(&[b, self.flat()])?;
            let logits = dense_forward(&self.maybe_bf16(&a), &self.maybe_bf16(dw), db)?;
            let (losses, dl) = softmax_cross_entropy(&logits, lab, scale)?;
            loss_sums.push(losses.iter().map(|&l| l as f64).sum());
            dense_grads.push((matmul(&self.maybe_bf16(&a).transpose()?, &dl)?, column_sums(&dl)));
            let da = matmul(&dl, &dw_t)?;
            let dy: Vec<f32> = da.data().iter().zip(y.data()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
            dys.push(Tensor::new(vec![b * hw, f], dy)?);
        }
        let bnb = batch_norm_backward(&bn.cache, &dys, gamma.data())?;
        let mut grads = Vec::with_capacity(inputs.len());
        for (c, x) in inputs.iter().enumerate() {
            let b = x.shape()[0];
            let dz = bnb.dx[c].reshape(&[b, self.height, self.width, f])?;
            let dk = conv2d_backward_filter(&self.maybe_bf16(x), &dz, &self.params())?;
            let (dwd, dbd) = dense_grads[c].clone();
            grads.push(GradientSet::new(vec![
                ("conv/kernel".into(), dk),
                ("bn/gamma".into(), Tensor::vector(bnb.dgamma[c].clone())),
                ("bn/beta".into(), Tensor::vector(bnb.dbeta[c].clone())),
                ("dense/kernel".into(), dwd),
                ("dense/bias".into(), dbd),
            ])?);
        }
        Ok(StepOutput { loss_sums, grads })
    }

    fn logits(&self, w: &WeightSet, x: &Tensor) -> Result<Tensor> {
        let (k, gamma, beta, dw, db) =
            (get(w, "conv/kernel")?, get(w, "bn/gamma")?, get(w, "bn/beta")?, get(w, "dense/kernel")?, get(w, "dense/bias")?);
        let b = x.shape()[0];
        let f = self.filters;
        let z = self.conv(x, k)?.reshape(&[b * self.height * self.width, f])?;
        let (mean, var) = self.running.clone().unwrap_or((vec![0.0; f], vec![1.0; f]));
        let y = batch_norm_apply(&z, &mean, &var, gamma.data(), beta.data())?;
        let a = y.map(|v| v.max(0.0)).reshape(&[b, self.flat()])?;
        dense_forward(&self.maybe_bf16(&a), &self.maybe_bf16(dw), db)
    }
}

struct LstmClassifier {
    steps: usize,
    features: usize,
    hidden: usize,
    classes: usize,
}

/// `[B, T, F]` → `[T, B, F]`.
fn time_major(x: &Tensor) -> Result<Tensor> {
    let &[b, t, f] = x.shape() else {
        return Err(Error::shape("lstm classifier", format!("expected [B, T, F], got {:?}", x.shape())));
    };
    let mut out = vec![0.0f32; b * t * f];
    for bi in 0..b {
        for ti in 0..t {
            out[(ti * b + bi) * f..(ti * b + bi + 1) * f].copy_from_slice(&x.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f]);
        }
    }
    Tensor::new(vec![t, b, f], out)
}

impl LstmClassifier {
    fn params(&self, w: &WeightSet) -> Result<LstmParams> {
        LstmParams::new(get(w, "lstm/w_x")?.clone(), get(w, "lstm/w_h")?.clone(), get(w, "lstm/bias")?.clone())
    }
}

impl Model for LstmClassifier {
    fn init_weights(&self, rng: &mut ChaCha8Rng) -> WeightSet {
        let h = self.hidden;
        let p = LstmParams::random(self.features, h, 1.0 / (h as f32).sqrt(), rng);
        let dd = normal((1.0 / h as f32).sqrt());
        WeightSet::new(vec![
            ("lstm/w_x".into(), p.w_x),
            ("lstm/w_h".into(), p.w_h),
            ("lstm/bias".into(), p.bias),
            ("dense/kernel".into(), Tensor::from_fn(&[h, self.classes], |_| dd.sample(rng))),
            ("dense/bias".into(), Tensor::zeros(&[self.classes])),
        ])
        .expect("unique names")
    }

    fn train_step(&mut self, w: &WeightSet, inputs: &[Tensor], labels: &[&[usize]], global_batch: usize) -> Result<StepOutput> {
        let params = self.params(w)?;
        let (dw, db) = (get(w, "dense/kernel")?, get(w, "dense/bias")?);
        let dw_t = dw.transpose()?;
        let scale = 1.0 / global_batch as f32;
        let mut loss_sums = Vec::with_capacity(inputs.len());
        let mut grads = Vec::with_capacity(inputs.len());
        for (x, lab) in inputs.iter().zip(labels) {
            let b = x.shape()[0];
            let out = lstm_forward_hoisted(&time_major(x)?, &params, &LstmState::zeros(b, self.hidden))?;
            let h = &out.final_state.h;
            let logits = dense_forward(h, dw, db)?;
            let (losses, dl) = softmax_cross_entropy(&logits, lab, scale)?;
            loss_sums.push(losses.iter().map(|&l| l as f64).sum());
            let dfinal = LstmState { h: matmul(&dl, &dw_t)?, c: Tensor::zeros(&[b, self.hidden]) };
            let g = lstm_backward_deferred(&out, &params, &Tensor::zeros(&[self.steps, b, self.hidden]), Some(&dfinal))?;
            grads.push(GradientSet::new(vec![
                ("lstm/w_x".into(), g.w_x),
                ("lstm/w_h".into(), g.w_h),
                ("lstm/bias".into(), g.bias),
                ("dense/kernel".into(), matmul(&h.transpose()?, &dl)?),
                ("dense/bias".into(), column_sums(&dl)),
            ])?);
        }
        Ok(StepOutput { loss_sums, grads })
    }

    fn logits(&self, w: &WeightSet, x: &Tensor) -> Result<Tensor> {
        let params = self.params(w)?;
        let b = x.shape()[0];
        let out = lstm_forward_hoisted(&time_major(x)?, &params, &LstmState::zeros(b, self.hidden))?.without_cache();
        dense_forward(&out.final_state.h, get(w, "dense/kernel")?, get(w, "dense/bias")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn loss_of(model: &mut dyn Model, w: &WeightSet, xs: &[Tensor], ys: &[&[usize]], global: usize) -> f64 {
        model.train_step(w, xs, ys, global).unwrap().loss_sums.iter().sum::<f64>() / global as f64
    }

    /// Central differences on a sample of coordinates of every weight tensor.
    fn check_gradients(spec: ModelSpec, input: InputShape, per_core: &[usize]) {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut model = build_model(&spec, &input, 3).unwrap();
        let w = model.init_weights(&mut rng);
        // Non-zero biases so every path is exercised.
        let w = w.map_tensors(|_, t| t.map(|v| if v == 0.0 { 0.1 } else { v }));
        let dims = input.dims();
        let xs: Vec<Tensor> = per_core
            .iter()
            .map(|&b| {
                let mut shape = vec![b];
                shape.extend(&dims);
                Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
            })
            .collect();
        let ys: Vec<Vec<usize>> = per_core.iter().map(|&b| (0..b).map(|i| i % 3).collect()).collect();
        let yr: Vec<&[usize]> = ys.iter().map(Vec::as_slice).collect();
        let global: usize = per_core.iter().sum();
        let out = model.train_step(&w, &xs, &yr, global).unwrap();
        let mut total = out.grads[0].clone();
        for g in &out.grads[1..] {
            total = total
                .map_tensors(|i, t| Tensor::new(t.shape().to_vec(), t.data().iter().zip(g.tensor(i).data()).map(|(a, b)| a + b).collect()).unwrap());
        }
        // Small enough that ReLU kinks are rarely straddled.
        let h = 3e-4f32;
        for (ti, (name, t)) in w.entries().iter().enumerate() {
            for idx in (0..t.len()).step_by((t.len() / 5).max(1)) {
                let bump = |d: f32| {
                    w.map_tensors(|i, u| {
                        let mut v = u.data().to_vec();
                        if i == ti {
                            v[idx] += d;
                        }
                        Tensor::new(u.shape().to_vec(), v).unwrap()
                    })
                };
                let fd =
                    (loss_of(model.as_mut(), &bump(h), &xs, &yr, global) - loss_of(model.as_mut(), &bump(-h), &xs, &yr, global)) / (2.0 * h as f64);
                let an = total.tensor(ti).data()[idx] as f64;
                assert!((fd - an).abs() < 1e-3 + 2e-2 * fd.abs(), "{name}[{idx}]: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn cnn_gradients_match_finite_differences() {
        check_gradients(ModelSpec::Cnn { filters: 2, bf16: false }, InputShape::Image { height: 4, width: 4, channels: 2 }, &[3, 2]);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        check_gradients(ModelSpec::Lstm { hidden: 3 }, InputShape::Sequence { steps: 4, features: 2 }, &[2, 3]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (l, g) = softmax_cross_entropy(&Tensor::zeros(&[1, 4]), &[2], 1.0).unwrap();
        assert!((l[0] - 4f32.ln()).abs() < 1e-6);
        assert!((g.data()[2] + 0.75).abs() < 1e-6);
        assert!(softmax_cross_entropy(&Tensor::zeros(&[1, 4]), &[4], 1.0).is_err());
    }

    #[test]
    fn mismatched_model_and_input() {
        assert!(build_model(&ModelSpec::Lstm { hidden: 4 }, &InputShape::Image { height: 2, width: 2, channels: 1 }, 2).is_err());
    }
}
