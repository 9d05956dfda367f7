use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::torus::CoreId;

pub const BN_EPSILON: f64 = 1e-5;

/// Per-core `(sum, sum of squares, count)` accumulated in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct BnPartials {
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
    pub count: usize,
}

impl BnPartials {
    pub fn of(x: &Tensor) -> Result<Self> {
        let (n, f) = x.dims2("batch_norm")?;
        if n == 0 {
            return Err(Error::EmptyBatch { op: "batch_norm" });
        }
        let mut sum = vec![0.0f64; f];
        let mut sumsq = vec![0.0f64; f];
        for row in x.data().chunks_exact(f) {
            for ((s, q), &v) in sum.iter_mut().zip(&mut sumsq).zip(row) {
                let v = v as f64;
                *s += v;
                *q += v * v;
            }
        }
        Ok(Self { sum, sumsq, count: n })
    }

    /// Element-wise sum in slice order.
    pub fn merge(parts: &[BnPartials]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("batch_norm", "empty group"))?;
        let mut acc = Self { sum: vec![0.0; first.sum.len()], sumsq: vec![0.0; first.sum.len()], count: 0 };
        for p in parts {
            if p.sum.len() != acc.sum.len() {
                return Err(Error::shape("batch_norm", format!("feature count {} != {}", p.sum.len(), acc.sum.len())));
            }
            for i in 0..acc.sum.len() {
                acc.sum[i] += p.sum[i];
                acc.sumsq[i] += p.sumsq[i];
            }
            acc.count += p.count;
        }
        Ok(acc)
    }

    /// Mean and biased variance (clamped at zero).
    pub fn mean_var(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let var = self.sumsq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0)).collect();
        (mean, var)
    }
}

/// Saved activations for [`batch_norm_backward`].
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<Tensor>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BnForward {
    pub outputs: Vec<Tensor>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub cache: BnCache,
}

fn check_affine(f: usize, gamma: &[f32], beta: &[f32]) -> Result<()> {
    if gamma.len() != f || beta.len() != f {
        return Err(Error::shape("batch_norm", format!("gamma/beta lengths {}/{} for {f} features", gamma.len(), beta.len())));
    }
    Ok(())
}

/// Training-mode batch norm over a group: statistics of the combined batch,
/// normalisation and affine transform applied locally on every shard.
/// `shards` are given in group order.
pub fn batch_norm_train(shards: &[&Tensor], gamma: &[f32], beta: &[f32]) -> Result<BnForward> {
    let partials = shards.iter().map(|s| BnPartials::of(s)).collect::<Result<Vec<_>>>()?;
    let total = BnPartials::merge(&partials)?;
    let f = total.sum.len();
    check_affine(f, gamma, beta)?;
    let (mean, var) = total.mean_var();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut outputs = Vec::with_capacity(shards.len());
    let mut xhat = Vec::with_capacity(shards.len());
    for s in shards {
        let mut xh = Vec::with_capacity(s.len());
        let mut y = Vec::with_capacity(s.len());
        for row in s.data().chunks_exact(f) {
            for j in 0..f {
                let v = ((row[j] as f64 - mean[j]) * inv_std[j]) as f32;
                xh.push(v);
                y.push(gamma[j] * v + beta[j]);
            }
        }
        xhat.push(Tensor::new(s.shape().to_vec(), xh)?);
        outputs.push(Tensor::new(s.shape().to_vec(), y)?);
    }
    Ok(BnForward {
        outputs,
        mean: mean.iter().map(|&m| m as f32).collect(),
        var: var.iter().map(|&v| v as f32).collect(),
        cache: BnCache { xhat, inv_std, count: total.count },
    })
}

/// Inference-mode normalisation with fixed statistics.
pub fn batch_norm_apply(x: &Tensor, mean: &[f32], var: &[f32], gamma: &[f32], beta: &[f32]) -> Result<Tensor> {
    let (_, f) = x.dims2("batch_norm")?;
    check_affine(f, gamma, beta)?;
    check_affine(f, mean, var)?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(f) {
        for j in 0..f {
            let inv = 1.0 / (var[j] as f64 + BN_EPSILON).sqrt();
            out.push(gamma[j] * ((row[j] as f64 - mean[j] as f64) * inv) as f32 + beta[j]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[derive(Clone, Debug)]
pub struct BnBackward {
    pub dx: Vec<Tensor>,
    /// Per-shard partial parameter gradients; summing them over the group
    /// gives the full gradient.
    pub dgamma: Vec<Vec<f32>>,
    pub dbeta: Vec<Vec<f32>>,
}

/// Backward pass of [`batch_norm_train`]. The two per-feature reductions the
/// input gradient needs (`Σ dy` and `Σ dy·x̂`) are summed over the whole group.
pub fn batch_norm_backward(cache: &BnCache, dys: &[Tensor], gamma: &[f32]) -> Result<BnBackward> {
    if dys.len() != cache.xhat.len() {
        return Err(Error::shape("batch_norm_backward", format!("{} gradients for {} shards", dys.len(), cache.xhat.len())));
    }
    let f = gamma.len();
    let mut dgamma = Vec::with_capacity(dys.len());
    let mut dbeta = Vec::with_capacity(dys.len());
    let mut sum_dy = vec![0.0f64; f];
    let mut sum_dy_xhat = vec![0.0f64; f];
    for (dy, xh) in dys.iter().zip(&cache.xhat) {
        if dy.shape() != xh.shape() || xh.shape().get(1) != Some(&f) {
            return Err(Error::shape("batch_norm_backward", format!("gradient {:?} vs activation {:?}", dy.shape(), xh.shape())));
        }
        let mut dg = vec![0.0f64; f];
        let mut db = vec![0.0f64; f];
        for (drow, xrow) in dy.data().chunks_exact(f).zip(xh.data().chunks_exact(f)) {
            for j in 0..f {
                db[j] += drow[j] as f64;
                dg[j] += drow[j] as f64 * xrow[j] as f64;
            }
        }
        for j in 0..f {
            sum_dy[j] += db[j];
            sum_dy_xhat[j] += dg[j];
        }
        dgamma.push(dg.iter().map(|&v| v as f32).collect());
        dbeta.push(db.iter().map(|&v| v as f32).collect());
    }
    let n = cache.count as f64;
    let mut dx = Vec::with_capacity(dys.len());
    for (dy, xh) in dys.iter().zip(&cache.xhat) {
        let mut out = Vec::with_capacity(dy.len());
        for (drow, xrow) in dy.data().chunks_exact(f).zip(xh.data().chunks_exact(f)) {
            for j in 0..f {
                let g = gamma[j] as f64;
                let v = g * cache.inv_std[j] / n * (n * drow[j] as f64 - sum_dy[j] - xrow[j] as f64 * sum_dy_xhat[j]);
                out.push(v as f32);
            }
        }
        dx.push(Tensor::new(dy.shape().to_vec(), out)?);
    }
    Ok(BnBackward { dx, dgamma, dbeta })
}

/// Normalises each core's `[N, F]` shard with the statistics of the whole
/// group's batch. `shards` is indexed by core id; `group` lists the
/// participating cores and fixes the reduction order. Returns one output
/// per group member, in group order.
pub fn distributed_batch_norm(shards: &[Tensor], group: &[CoreId]) -> Result<Vec<Tensor>> {
    if group.is_empty() {
        return Err(Error::invalid("distributed_batch_norm", "empty group"));
    }
    let members = group
        .iter()
        .map(|&c| shards.get(c).ok_or_else(|| Error::invalid("distributed_batch_norm", format!("core {c} has no shard"))))
        .collect::<Result<Vec<_>>>()?;
    let f = members[0].shape().get(1).copied().unwrap_or(0);
    Ok(batch_norm_train(&members, &vec![1.0; f], &vec![0.0; f])?.outputs)
}
