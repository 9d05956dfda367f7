//! Value-level ring and 2-D torus collectives.
//!
//! Per-core inputs are slices indexed by [`CoreId`]; a ring is the ordered
//! list of participating cores. Each collective is executed step by step as
//! the ring algorithm would, so the summation order of every element is the
//! one a real ring produces and is fixed by the ring order.

use std::ops::Range;

use super::{CoreId, GradientSet, TorusTopology};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Balanced split of `len` elements into `parts` contiguous ranges; the first
/// `len % parts` ranges get one extra element.
pub fn shard_ranges(len: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts > 0, "shard_ranges needs at least one part");
    let (base, extra) = (len / parts, len % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let n = base + usize::from(i < extra);
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

fn check_ring(ring: &[CoreId], available: usize, op: &'static str) -> Result<()> {
    if ring.is_empty() {
        return Err(Error::invalid(op, "empty ring"));
    }
    let mut seen = vec![false; available];
    for &c in ring {
        if c >= available {
            return Err(Error::invalid(op, format!("ring names core {c} but only {available} values were given")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid(op, format!("core {c} appears twice in the ring")));
        }
    }
    Ok(())
}

/// Ring reduce-scatter over flat buffers in ring-position order.
///
/// Position `i` ends with the sum of chunk `i`. Chunk `c` starts at position
/// `c + 1` and travels once around the ring, so its value is
/// `((v[c+1] + v[c+2]) + ...) + v[c]` (indices mod ring length).
fn reduce_scatter_flat(bufs: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let p = bufs.len();
    let len = bufs[0].len();
    let ranges = shard_ranges(len, p);
    let mut work: Vec<Vec<f32>> = bufs.to_vec();
    for step in 0..p.saturating_sub(1) {
        // All sends of a step happen "simultaneously": snapshot first.
        let sends: Vec<(usize, usize, Vec<f32>)> = (0..p)
            .map(|i| {
                let chunk = (i + 2 * p - step - 1) % p;
                (i, chunk, work[i][ranges[chunk].clone()].to_vec())
            })
            .collect();
        for (i, chunk, payload) in sends {
            let dst = (i + 1) % p;
            let r = ranges[chunk].clone();
            for (acc, v) in work[dst][r].iter_mut().zip(payload) {
                *acc += v;
            }
        }
    }
    (0..p).map(|i| work[i][ranges[i].clone()].to_vec()).collect()
}

/// Ring all-gather: position `i` contributes shard `i`; every position ends
/// with the concatenation in ring order.
fn all_gather_flat(shards: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let p = shards.len();
    let total: usize = shards.iter().map(Vec::len).sum();
    let mut offsets = Vec::with_capacity(p);
    let mut acc = 0;
    for s in shards {
        offsets.push(acc);
        acc += s.len();
    }
    let mut work: Vec<Vec<f32>> = (0..p)
        .map(|i| {
            let mut full = vec![0.0; total];
            full[offsets[i]..offsets[i] + shards[i].len()].copy_from_slice(&shards[i]);
            full
        })
        .collect();
    for step in 0..p.saturating_sub(1) {
        // Position i forwards the shard it received `step` steps ago.
        let sends: Vec<(usize, usize)> = (0..p).map(|i| (i, (i + p - step) % p)).collect();
        let payloads: Vec<Vec<f32>> = sends.iter().map(|&(i, s)| work[i][offsets[s]..offsets[s] + shards[s].len()].to_vec()).collect();
        for ((i, s), payload) in sends.into_iter().zip(payloads) {
            let dst = (i + 1) % p;
            work[dst][offsets[s]..offsets[s] + shards[s].len()].copy_from_slice(&payload);
        }
    }
    work
}

/// Ring reduce-scatter. `values` is indexed by core id; the result is in ring
/// order, `result[i]` being the 1-D shard held by `ring[i]`.
pub fn ring_reduce_scatter(values: &[Tensor], ring: &[CoreId]) -> Result<Vec<Tensor>> {
    check_ring(ring, values.len(), "ring_reduce_scatter")?;
    let shape = values[ring[0]].shape();
    for &c in ring {
        if values[c].shape() != shape {
            return Err(Error::shape("ring_reduce_scatter", format!("core {c} holds {:?}, core {} holds {shape:?}", values[c].shape(), ring[0])));
        }
    }
    let bufs: Vec<Vec<f32>> = ring.iter().map(|&c| values[c].data().to_vec()).collect();
    Ok(reduce_scatter_flat(&bufs).into_iter().map(Tensor::vector).collect())
}

/// Ring all-gather of per-core shards along axis 0. `shards` is indexed by
/// core id; every member of `ring` ends with the same concatenation (in ring
/// order), returned in ring order.
pub fn ring_all_gather(shards: &[Tensor], ring: &[CoreId]) -> Result<Vec<Tensor>> {
    check_ring(ring, shards.len(), "ring_all_gather")?;
    let first = &shards[ring[0]];
    if first.rank() == 0 {
        return Err(Error::shape("ring_all_gather", "shards must have rank >= 1"));
    }
    let tail = &first.shape()[1..];
    let mut rows = 0;
    for &c in ring {
        let s = &shards[c];
        if s.rank() != first.rank() || &s.shape()[1..] != tail || s.dtype() != first.dtype() {
            return Err(Error::shape(
                "ring_all_gather",
                format!("core {c} shard {:?}/{:?} inconsistent with {:?}/{:?}", s.shape(), s.dtype(), first.shape(), first.dtype()),
            ));
        }
        rows += s.shape()[0];
    }
    let flat: Vec<Vec<f32>> = ring.iter().map(|&c| shards[c].data().to_vec()).collect();
    let mut shape = first.shape().to_vec();
    shape[0] = rows;
    Ok(all_gather_flat(&flat).into_iter().map(|d| Tensor::from_parts(shape.clone(), d).with_dtype(first.dtype())).collect())
}

/// Ring all-reduce (reduce-scatter then all-gather) of same-shaped tensors.
/// Results are in ring order and bitwise identical.
pub fn ring_all_reduce(values: &[Tensor], ring: &[CoreId]) -> Result<Vec<Tensor>> {
    let shape = values.get(ring.first().copied().unwrap_or(0)).map(|t| t.shape().to_vec()).unwrap_or_default();
    let shards = ring_reduce_scatter(values, ring)?;
    let mut by_core = vec![Tensor::zeros(&[0]); values.len()];
    for (&c, s) in ring.iter().zip(shards) {
        by_core[c] = s;
    }
    ring_all_gather(&by_core, ring)?.into_iter().map(|t| t.reshape(&shape)).collect()
}

/// 2-D gradient summation over a torus.
///
/// Each core first gathers its (possibly many, non-contiguous) gradient
/// tensors into one contiguous buffer. Then:
/// 1. reduce-scatter along each row, leaving core `(r, c)` with the row sum of shard `c`;
/// 2. all-reduce each column on those shards (reduce-scatter, then all-gather);
/// 3. all-gather along each row.
///
/// The summed buffer is scattered back into the gradient structure. All cores
/// end bitwise identical; the result is deterministic for a fixed topology.
pub fn all_reduce_2d(values: &[GradientSet], topo: &TorusTopology) -> Result<Vec<GradientSet>> {
    let n = topo.num_cores();
    if values.len() != n {
        return Err(Error::invalid("all_reduce_2d", format!("{} per-core sets for {n} cores", values.len())));
    }
    let template = &values[0];
    for (c, v) in values.iter().enumerate() {
        if !v.same_structure(template) {
            return Err(Error::shape("all_reduce_2d", format!("core {c} gradient structure differs from core 0")));
        }
    }
    let mut bufs: Vec<Vec<f32>> = values.iter().map(GradientSet::flatten).collect();
    let cols = topo.cols();

    // Phase 1: row reduce-scatter. row_shards[core] = shard index `col` of the row sum.
    let mut row_shards: Vec<Vec<f32>> = vec![Vec::new(); n];
    for r in 0..topo.rows() {
        let ring = topo.row_ring(r);
        let inputs: Vec<Vec<f32>> = ring.iter().map(|&c| std::mem::take(&mut bufs[c])).collect();
        for (&c, s) in ring.iter().zip(reduce_scatter_flat(&inputs)) {
            row_shards[c] = s;
        }
    }

    // Phase 2: column all-reduce of each column's shard.
    for c in 0..cols {
        let ring = topo.col_ring(c);
        let inputs: Vec<Vec<f32>> = ring.iter().map(|&core| std::mem::take(&mut row_shards[core])).collect();
        let reduced = all_gather_flat(&reduce_scatter_flat(&inputs));
        for (&core, s) in ring.iter().zip(reduced) {
            row_shards[core] = s;
        }
    }

    // Phase 3: row all-gather.
    let mut out = Vec::with_capacity(n);
    let mut full: Vec<Vec<f32>> = vec![Vec::new(); n];
    for r in 0..topo.rows() {
        let ring = topo.row_ring(r);
        let inputs: Vec<Vec<f32>> = ring.iter().map(|&c| std::mem::take(&mut row_shards[c])).collect();
        for (&c, f) in ring.iter().zip(all_gather_flat(&inputs)) {
            full[c] = f;
        }
    }
    for f in &full {
        out.push(template.unflatten_like(f)?);
    }
    Ok(out)
}
