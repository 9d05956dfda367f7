use serde::{Deserialize, Serialize};

use super::{kernel_operands, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Padding {
    Same,
    Valid,
}

/// Square-kernel 2-D convolution over NHWC inputs with `[K, K, Cin, Cout]` kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    pub fn same(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        Self { kernel_size, stride: 1, padding: Padding::Same, in_channels, out_channels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("conv2d", format!("kernel size {} must be positive and odd", self.kernel_size)));
        }
        if self.stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv2d", "channel counts must be positive"));
        }
        Ok(())
    }

    /// Zero padding `(before, after)` applied to a spatial extent.
    ///
    /// SAME follows the usual convention: `out = ceil(extent / stride)` and
    /// the odd leftover pixel of padding goes after.
    pub fn padding_for(&self, extent: usize) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let out = extent.div_ceil(self.stride);
                let needed = (out.saturating_sub(1) * self.stride + self.kernel_size).saturating_sub(extent);
                (needed / 2, needed - needed / 2)
            }
        }
    }

    pub fn output_extent(&self, extent: usize) -> Option<usize> {
        let (b, a) = self.padding_for(extent);
        let padded = extent + b + a;
        (padded >= self.kernel_size).then(|| (padded - self.kernel_size) / self.stride + 1)
    }
}

fn dims4(t: &Tensor, op: &'static str, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(Error::shape(op, format!("{what} must be rank 4, got {other:?}"))),
    }
}

/// Zero-pads the H and W axes of an NHWC tensor.
pub fn pad_spatial(input: &Tensor, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor> {
    let [n, h, w, c] = dims4(input, "pad_spatial", "input")?;
    if top + bottom + left + right == 0 {
        return Ok(input.clone());
    }
    let (ph, pw) = (h + top + bottom, w + left + right);
    let mut out = vec![0.0f32; n * ph * pw * c];
    let src = input.data();
    for b in 0..n {
        for y in 0..h {
            let s = ((b * h + y) * w) * c;
            let d = ((b * ph + y + top) * pw + left) * c;
            out[d..d + w * c].copy_from_slice(&src[s..s + w * c]);
        }
    }
    Ok(Tensor::from_parts(vec![n, ph, pw, c], out).with_dtype(input.dtype()))
}

/// Convolution over an already padded input with no implicit padding.
///
/// For every output pixel, each output channel accumulates
/// `input * weight` over `(ky, kx, ci)` in ascending lexicographic order,
/// starting from zero. This function is the one kernel behind both
/// [`conv2d`] and the spatially partitioned convolution, so the two agree bit
/// for bit whenever they see the same padded window.
pub fn conv2d_valid(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let [n, h, w, cin] = dims4(input, "conv2d", "input")?;
    let [k, k2, kcin, cout] = dims4(kernel, "conv2d", "kernel")?;
    if k != k2 {
        return Err(Error::shape("conv2d", format!("kernel must be square, got {k}x{k2}")));
    }
    if kcin != cin {
        return Err(Error::shape("conv2d", format!("input channels {cin} != kernel input channels {kcin}")));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    if h < k || w < k {
        return Err(Error::shape("conv2d", format!("spatial extent {h}x{w} smaller than kernel {k}")));
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let (x, wt) = kernel_operands(input, kernel);
    let mut out = vec![0.0f32; n * oh * ow * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * cout;
                let acc = &mut out[o..o + cout];
                for ky in 0..k {
                    let iy = oy * stride + ky;
                    for kx in 0..k {
                        let ix = ox * stride + kx;
                        let xi = ((b * h + iy) * w + ix) * cin;
                        for ci in 0..cin {
                            let xv = x[xi + ci];
                            let wrow = &wt[((ky * k + kx) * cin + ci) * cout..][..cout];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oh, ow, cout], out))
}

fn check_params(input: &Tensor, kernel: &Tensor, params: &ConvParams) -> Result<()> {
    params.validate()?;
    let [_, _, _, cin] = dims4(input, "conv2d", "input")?;
    let expected = [params.kernel_size, params.kernel_size, params.in_channels, params.out_channels];
    if kernel.shape() != expected {
        return Err(Error::shape("conv2d", format!("kernel shape {:?} != {expected:?}", kernel.shape())));
    }
    if cin != params.in_channels {
        return Err(Error::shape("conv2d", format!("input channel dim (axis 3) is {cin}, params say {}", params.in_channels)));
    }
    Ok(())
}

/// Cross-correlation `input[N,H,W,Cin] ⋆ kernel[K,K,Cin,Cout]`.
///
/// If either operand is BF16 both are rounded to bf16 first; the accumulator
/// and the result are f32.
pub fn conv2d(input: &Tensor, kernel: &Tensor, params: &ConvParams) -> Result<Tensor> {
    check_params(input, kernel, params)?;
    let [_, h, w, _] = dims4(input, "conv2d", "input")?;
    let (top, bottom) = params.padding_for(h);
    let (left, right) = params.padding_for(w);
    let padded = pad_spatial(input, top, bottom, left, right)?;
    conv2d_valid(&padded, kernel, params.stride)
}

/// Gradient of [`conv2d`] with respect to the kernel.
///
/// Each kernel element sums over `(n, oy, ox)` in ascending order.
pub fn conv2d_backward_filter(input: &Tensor, grad_out: &Tensor, params: &ConvParams) -> Result<Tensor> {
    params.validate()?;
    let [n, h, w, cin] = dims4(input, "conv2d_backward_filter", "input")?;
    if cin != params.in_channels {
        return Err(Error::shape("conv2d_backward_filter", format!("input has {cin} channels, params say {}", params.in_channels)));
    }
    let (top, bottom) = params.padding_for(h);
    let (left, right) = params.padding_for(w);
    let padded = pad_spatial(input, top, bottom, left, right)?;
    let [_, ph, pw, _] = dims4(&padded, "conv2d_backward_filter", "input")?;
    let (k, s, cout) = (params.kernel_size, params.stride, params.out_channels);
    let (oh, ow) = match (params.output_extent(h), params.output_extent(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape("conv2d_backward_filter", "input smaller than kernel")),
    };
    if grad_out.shape() != [n, oh, ow, cout] {
        return Err(Error::shape("conv2d_backward_filter", format!("grad_out shape {:?} != {:?}", grad_out.shape(), [n, oh, ow, cout])));
    }
    let x = padded.data();
    let g = grad_out.data();
    let mut dk = vec![0.0f32; k * k * cin * cout];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let grow = &g[((b * oh + oy) * ow + ox) * cout..][..cout];
                for ky in 0..k {
                    for kx in 0..k {
                        let xi = ((b * ph + oy * s + ky) * pw + ox * s + kx) * cin;
                        for ci in 0..cin {
                            let xv = x[xi + ci];
                            let drow = &mut dk[((ky * k + kx) * cin + ci) * cout..][..cout];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![k, k, cin, cout], dk))
}
