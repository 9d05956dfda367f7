use std::ops::Range;

use super::plan::PartitionPlan;
use crate::error::{Error, Result};
use crate::tensor::{conv2d_valid, ConvParams, Tensor};

fn dims(t: &Tensor) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(t.shape()).map_err(|_| Error::shape("halo_exchange", format!("expected NHWC tensor, got {:?}", t.shape())))
}

/// Sub-block `[batch, rows, cols, :]` of an NHWC tensor.
pub fn crop(t: &Tensor, batch: Range<usize>, rows: Range<usize>, cols: Range<usize>) -> Result<Tensor> {
    let [n, h, w, c] = dims(t)?;
    if batch.end > n || rows.end > h || cols.end > w {
        return Err(Error::shape("crop", format!("block {batch:?}x{rows:?}x{cols:?} outside {:?}", t.shape())));
    }
    let (bn, rh, cw) = (batch.len(), rows.len(), cols.len());
    let mut out = Vec::with_capacity(bn * rh * cw * c);
    for b in batch {
        for y in rows.clone() {
            let start = ((b * h + y) * w + cols.start) * c;
            out.extend_from_slice(&t.data()[start..start + cw * c]);
        }
    }
    Tensor::new(vec![bn, rh, cw, c], out)
}

/// Concatenation along axis 1 (H) or 2 (W); `None` parts are zero blocks of the given extent.
fn concat(parts: &[(Option<&Tensor>, usize)], axis: usize, like: [usize; 4]) -> Tensor {
    let [n, h, w, c] = like;
    let total: usize = parts.iter().map(|(_, e)| e).sum();
    let shape = if axis == 1 { [n, total, w, c] } else { [n, h, total, c] };
    let mut out = vec![0.0f32; shape.iter().product()];
    let mut offset = 0;
    for &(part, extent) in parts {
        if let Some(p) = part {
            let src = p.data();
            for b in 0..n {
                if axis == 1 {
                    let row = w * c;
                    let d = (b * total + offset) * row;
                    let s = b * extent * row;
                    out[d..d + extent * row].copy_from_slice(&src[s..s + extent * row]);
                } else {
                    for y in 0..h {
                        let d = ((b * h + y) * total + offset) * c;
                        let s = ((b * h + y) * extent) * c;
                        out[d..d + extent * c].copy_from_slice(&src[s..s + extent * c]);
                    }
                }
            }
        }
        offset += extent;
    }
    Tensor::new(shape.to_vec(), out).expect("concat shape")
}

/// Slices the input into the per-core tiles described by `plan`, indexed by core id.
pub fn scatter_input(input: &Tensor, plan: &PartitionPlan) -> Result<Vec<Tensor>> {
    if dims(input)? != plan.input_shape {
        return Err(Error::shape("scatter_input", format!("input {:?} != planned {:?}", input.shape(), plan.input_shape)));
    }
    plan.cores.iter().map(|p| crop(input, p.batch.clone(), p.rows.clone(), p.cols.clone())).collect()
}

/// Extends every core's tile with its neighbours' edge rows and columns.
///
/// Runs as two phases: columns are exchanged first, then rows of the
/// column-extended tiles, so corner blocks arrive from diagonal neighbours
/// via the intermediate hop. Global edges get zero padding where the plan
/// asks for it (SAME) and nothing otherwise (VALID).
pub fn halo_exchange(shards: &[Tensor], plan: &PartitionPlan) -> Result<Vec<Tensor>> {
    if shards.len() != plan.cores.len() {
        return Err(Error::shape("halo_exchange", format!("{} shards for a {}-core plan", shards.len(), plan.cores.len())));
    }
    let channels = shards.first().map(|s| s.shape().get(3).copied().unwrap_or(0)).unwrap_or(0);
    for (s, p) in shards.iter().zip(&plan.cores) {
        let want = [p.batch.len(), p.rows.len(), p.cols.len(), channels];
        if dims(s)? != want {
            return Err(Error::shape("halo_exchange", format!("core {} shard {:?} != planned {want:?}", p.core, s.shape())));
        }
    }
    let spec = plan.spec;

    // Phase 1: columns.
    let mut wide = Vec::with_capacity(shards.len());
    for (s, p) in shards.iter().zip(&plan.cores) {
        let (b, gr, gc) = p.cell;
        let [_, h, w, _] = dims(s)?;
        let left = if p.halo.left > 0 {
            let src = &shards[spec.core_of(b, gr, gc - 1)];
            let sw = src.shape()[2];
            Some(crop(src, 0..p.batch.len(), 0..h, sw - p.halo.left..sw)?)
        } else {
            None
        };
        let right = if p.halo.right > 0 {
            let src = &shards[spec.core_of(b, gr, gc + 1)];
            Some(crop(src, 0..p.batch.len(), 0..h, 0..p.halo.right)?)
        } else {
            None
        };
        let like = [p.batch.len(), h, w, channels];
        wide.push(concat(
            &[(None, p.pad.left), (left.as_ref(), p.halo.left), (Some(s), w), (right.as_ref(), p.halo.right), (None, p.pad.right)],
            2,
            like,
        ));
    }

    // Phase 2: rows of the column-extended tiles.
    let mut out = Vec::with_capacity(shards.len());
    for (s, p) in wide.iter().zip(&plan.cores) {
        let (b, gr, gc) = p.cell;
        let [nb, h, w, _] = dims(s)?;
        let top = if p.halo.top > 0 {
            let src = &wide[spec.core_of(b, gr - 1, gc)];
            let sh = src.shape()[1];
            Some(crop(src, 0..nb, sh - p.halo.top..sh, 0..w)?)
        } else {
            None
        };
        let bottom = if p.halo.bottom > 0 {
            let src = &wide[spec.core_of(b, gr + 1, gc)];
            Some(crop(src, 0..nb, 0..p.halo.bottom, 0..w)?)
        } else {
            None
        };
        out.push(concat(
            &[(None, p.pad.top), (top.as_ref(), p.halo.top), (Some(s), h), (bottom.as_ref(), p.halo.bottom), (None, p.pad.bottom)],
            1,
            [nb, h, w, channels],
        ));
    }
    Ok(out)
}

/// Convolution of spatially partitioned input: halo exchange, then the same
/// VALID kernel the monolithic [`crate::tensor::conv2d`] uses, on every core.
pub fn sharded_conv2d(shards: &[Tensor], kernel: &Tensor, params: &ConvParams, plan: &PartitionPlan) -> Result<Vec<Tensor>> {
    if *params != plan.params {
        return Err(Error::invalid("sharded_conv2d", "conv params differ from the plan's"));
    }
    let ks = [params.kernel_size, params.kernel_size, params.in_channels, params.out_channels];
    if kernel.shape() != ks {
        return Err(Error::shape("sharded_conv2d", format!("kernel {:?} != {ks:?}", kernel.shape())));
    }
    let extended = halo_exchange(shards, plan)?;
    let mut outs = Vec::with_capacity(extended.len());
    for (e, p) in extended.iter().zip(&plan.cores) {
        let y = conv2d_valid(e, kernel, params.stride)?;
        let want = [p.batch.len(), p.out_rows.len(), p.out_cols.len(), params.out_channels];
        if y.shape() != want {
            return Err(Error::shape("sharded_conv2d", format!("core {} produced {:?}, plan expects {want:?}", p.core, y.shape())));
        }
        outs.push(y);
    }
    Ok(outs)
}

/// Stitches per-core output tiles into the full output. Replicated cores
/// that do not own their tile are skipped.
pub fn assemble_output(outputs: &[Tensor], plan: &PartitionPlan) -> Result<Tensor> {
    if outputs.len() != plan.cores.len() {
        return Err(Error::shape("assemble_output", format!("{} outputs for a {}-core plan", outputs.len(), plan.cores.len())));
    }
    let [n, oh, ow, oc] = plan.output_shape;
    let mut full = vec![0.0f32; n * oh * ow * oc];
    for (t, p) in outputs.iter().zip(&plan.cores).filter(|(_, p)| p.owns_output) {
        let (rh, cw) = (p.out_rows.len(), p.out_cols.len());
        if t.shape() != [p.batch.len(), rh, cw, oc] {
            return Err(Error::shape("assemble_output", format!("core {} tile {:?}", p.core, t.shape())));
        }
        for (bi, b) in p.batch.clone().enumerate() {
            for (yi, y) in p.out_rows.clone().enumerate() {
                let d = ((b * oh + y) * ow + p.out_cols.start) * oc;
                let s = ((bi * rh + yi) * cw) * oc;
                full[d..d + cw * oc].copy_from_slice(&t.data()[s..s + cw * oc]);
            }
        }
    }
    Tensor::new(plan.output_shape.to_vec(), full)
}
