//! Dense row-major tensors and the numeric kernels the rest of the crate
//! builds on.
//!
//! Every reduction in this module walks its operands in a fixed, documented
//! order so that sharded and replicated computations can be compared bit for
//! bit.

mod bf16;
mod conv;
mod fixture;

pub use bf16::bf16_round;
pub use conv::{conv2d, conv2d_backward_filter, conv2d_valid, pad_spatial, ConvParams, Padding};
pub use fixture::{decode_fixture, encode_fixture, read_fixture, write_fixture};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type tag. BF16 tensors keep their values in `f32` storage, already
/// rounded to the nearest bf16-representable value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    BF16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = checked_numel(&shape).ok_or_else(|| Error::shape("Tensor::new", format!("extent product of {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::shape("Tensor::new", format!("shape {shape:?} needs {expected} elements, got {}", data.len())));
        }
        Ok(Self { shape, dtype: DType::F32, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), dtype: DType::F32, data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), dtype: DType::F32, data: vec![value; n] }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self { shape: vec![data.len()], dtype: DType::F32, data }
    }

    /// Builds a tensor by evaluating `f` on every flat (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), dtype: DType::F32, data: (0..n).map(&mut f).collect() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rounds every element to bf16 and tags the result BF16.
    pub fn to_bf16(&self) -> Self {
        Self { shape: self.shape.clone(), dtype: DType::BF16, data: self.data.iter().map(|&x| bf16_round(x)).collect() }
    }

    /// Relabels as F32 without touching values.
    pub fn to_f32(&self) -> Self {
        Self { shape: self.shape.clone(), dtype: DType::F32, data: self.data.clone() }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if checked_numel(shape) != Some(self.data.len()) {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", self.shape)));
        }
        Ok(Self { shape: shape.to_vec(), dtype: self.dtype, data: self.data.clone() })
    }

    /// Elementwise map. The result is tagged F32.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_data_like(self, self.data.iter().map(|&x| f(x)).collect())
    }

    /// Bitwise comparison; distinguishes `0.0` from `-0.0` and compares NaN payloads.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest elementwise absolute difference. Infinite if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        if self.shape != other.shape {
            return f32::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows `[start, end)` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let rows = *self.shape.first().ok_or_else(|| Error::shape("slice_rows", "rank-0 tensor"))?;
        if start > end || end > rows {
            return Err(Error::shape("slice_rows", format!("range {start}..{end} outside 0..{rows}")));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self { shape, dtype: self.dtype, data: self.data[start * stride..end * stride].to_vec() })
    }

    /// Concatenates along axis 0. All parts must share trailing extents and dtype.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_rows", "no parts"))?;
        if first.rank() == 0 {
            return Err(Error::shape("concat_rows", "rank-0 tensor"));
        }
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        for (i, p) in parts.iter().enumerate() {
            if p.rank() != first.rank() || &p.shape[1..] != tail {
                return Err(Error::shape("concat_rows", format!("part {i} has shape {:?}, expected [_, {tail:?}]", p.shape)));
            }
            if p.dtype != first.dtype {
                return Err(Error::shape("concat_rows", format!("part {i} dtype {:?} != {:?}", p.dtype, first.dtype)));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Self { shape, dtype: first.dtype, data })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self { shape: vec![n, m], dtype: self.dtype, data })
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::shape(op, format!("expected rank 2, got {other:?}"))),
        }
    }

    pub(crate) fn with_dtype(mut self, dtype: DType) -> Self {
        debug_assert!(dtype == DType::F32 || self.data.iter().all(|&x| bf16_round(x).to_bits() == x.to_bits() || x.is_nan()));
        self.dtype = dtype;
        self
    }

    pub(crate) fn from_data_like(like: &Tensor, data: Vec<f32>) -> Self {
        debug_assert_eq!(like.data.len(), data.len());
        Self { shape: like.shape.clone(), dtype: DType::F32, data }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, dtype: DType::F32, data }
    }
}

fn checked_numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Operand values as seen by a mixed-precision kernel: when either side is
/// BF16 both are rounded to bf16; accumulation stays in f32.
fn kernel_operands<'a>(a: &'a Tensor, b: &'a Tensor) -> (std::borrow::Cow<'a, [f32]>, std::borrow::Cow<'a, [f32]>) {
    use std::borrow::Cow;
    if a.dtype == DType::BF16 || b.dtype == DType::BF16 {
        let round = |t: &'a Tensor| -> Cow<'a, [f32]> {
            match t.dtype {
                DType::BF16 => Cow::Borrowed(&t.data),
                DType::F32 => Cow::Owned(t.data.iter().map(|&x| bf16_round(x)).collect()),
            }
        };
        (round(a), round(b))
    } else {
        (Cow::Borrowed(&a.data), Cow::Borrowed(&b.data))
    }
}

/// `a[M,K] · b[K,N]` with f32 accumulation.
///
/// Each output element is `((0 + a[i,0]b[0,j]) + a[i,1]b[1,j]) + ...` in
/// ascending `k`. Rows of `a` are independent, so computing a stacked matrix
/// in one call gives the same bits as computing its row blocks separately.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner extents differ: [{m},{k}] x [{k2},{n}]")));
    }
    let (av, bv) = kernel_operands(a, b);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = av[i * k + kk];
            let brow = &bv[kk * n..(kk + 1) * n];
            for (o, &bkj) in row.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Per-feature statistics of a `[N, F]` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Biased (population) variance.
    pub var: Tensor,
    pub count: usize,
}

/// Mean and biased variance over axis 0, two-pass, accumulated in f64 in row order.
pub fn batch_stats(x: &Tensor) -> Result<BatchStats> {
    let (n, f) = x.dims2("batch_stats")?;
    if n == 0 {
        return Err(Error::EmptyBatch { op: "batch_stats" });
    }
    let mut sum = vec![0.0f64; f];
    for row in x.data.chunks_exact(f) {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0f64; f];
    for row in x.data.chunks_exact(f) {
        for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    Ok(BatchStats {
        mean: Tensor::vector(mean.iter().map(|&m| m as f32).collect()),
        var: Tensor::vector(sq.iter().map(|&s| (s / n as f64) as f32).collect()),
        count: n,
    })
}
