use std::ops::Range;

use super::{Optimizer, OptimizerState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::torus::{ring_all_gather, CoreId, GradientSet, TorusTopology, WeightSet};

/// Assignment of whole weight tensors to cores.
///
/// The flat parameter vector is laid out core by core: core 0's tensors in
/// set order, then core 1's, and so on, so each core's shard is one
/// contiguous range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightShardLayout {
    owners: Vec<CoreId>,
    sizes: Vec<usize>,
    order: Vec<usize>,
    ranges: Vec<Range<usize>>,
}

impl WeightShardLayout {
    /// Greedy size-balanced assignment: tensors are taken largest first (ties
    /// by index) and given to the least-loaded core (ties by lowest id).
    pub fn balanced(weights: &WeightSet, cores: usize) -> Result<Self> {
        if cores == 0 {
            return Err(Error::Layout("layout needs at least one core".into()));
        }
        let sizes: Vec<usize> = weights.tensors().map(Tensor::len).collect();
        let mut by_size: Vec<usize> = (0..sizes.len()).collect();
        by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let mut load = vec![0usize; cores];
        let mut owners = vec![0; sizes.len()];
        for i in by_size {
            let core = (0..cores).min_by_key(|&c| (load[c], c)).expect("cores > 0");
            owners[i] = core;
            load[core] += sizes[i];
        }
        Ok(Self::from_owners(owners, sizes, cores))
    }

    fn from_owners(owners: Vec<CoreId>, sizes: Vec<usize>, cores: usize) -> Self {
        let mut order = Vec::with_capacity(owners.len());
        let mut ranges = Vec::with_capacity(cores);
        let mut offset = 0;
        for core in 0..cores {
            let start = offset;
            for (i, &o) in owners.iter().enumerate() {
                if o == core {
                    order.push(i);
                    offset += sizes[i];
                }
            }
            ranges.push(start..offset);
        }
        Self { owners, sizes, order, ranges }
    }

    pub fn num_cores(&self) -> usize {
        self.ranges.len()
    }

    pub fn owner(&self, tensor: usize) -> CoreId {
        self.owners[tensor]
    }

    /// Tensor indices in flattening order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Range of `core`'s shard in the flat vector.
    pub fn range(&self, core: CoreId) -> Range<usize> {
        self.ranges[core].clone()
    }

    pub fn owned(&self, core: CoreId) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied().filter(move |&i| self.owners[i] == core)
    }

    fn check(&self, weights: &WeightSet) -> Result<()> {
        let sizes: Vec<usize> = weights.tensors().map(Tensor::len).collect();
        if sizes != self.sizes {
            return Err(Error::Layout(format!("layout built for tensor sizes {:?}, got {sizes:?}", self.sizes)));
        }
        Ok(())
    }
}

/// Weight-update sharding: every core updates only the tensors it owns,
/// then a ring all-gather over all cores (row-major order) broadcasts the
/// updated shards.
///
/// `grads`, `weights` and `states` are indexed by core id. Gradients must
/// already be summed (identical on all cores). States are updated in place;
/// each core's state only needs slots for its own tensors.
pub fn sharded_weight_update(
    grads: &[GradientSet],
    weights: &[WeightSet],
    states: &mut [OptimizerState],
    layout: &WeightShardLayout,
    opt: &Optimizer,
    eta: f64,
    topo: &TorusTopology,
) -> Result<Vec<WeightSet>> {
    let n = topo.num_cores();
    if grads.len() != n || weights.len() != n || states.len() != n || layout.num_cores() != n {
        return Err(Error::Layout(format!(
            "{n} cores but {} gradient sets, {} weight sets, {} states, layout for {}",
            grads.len(),
            weights.len(),
            states.len(),
            layout.num_cores()
        )));
    }
    let mut shards = Vec::with_capacity(n);
    for core in 0..n {
        let (w, g, state) = (&weights[core], &grads[core], &mut states[core]);
        layout.check(w)?;
        if !w.same_structure(g) || state.slots.len() != w.len() {
            return Err(Error::Layout(format!("core {core}: weights, gradients and state disagree")));
        }
        let t = state.step + 1;
        let mut buf = Vec::with_capacity(layout.range(core).len());
        for i in layout.owned(core) {
            let slot = state.slots[i].as_ref().ok_or_else(|| Error::Layout(format!("core {core} owns tensor {i} but has no slot for it")))?;
            let (w2, s2) = opt.step_tensor(w.tensor(i), g.tensor(i), slot, eta, t)?;
            buf.extend_from_slice(w2.data());
            state.slots[i] = Some(s2);
        }
        state.step = t;
        shards.push(Tensor::vector(buf));
    }
    let gathered = ring_all_gather(&shards, &topo.all_cores())?;
    gathered
        .iter()
        .zip(weights)
        .map(|(flat, template)| {
            let mut entries: Vec<(String, Tensor)> = template.entries().to_vec();
            let mut offset = 0;
            for &i in layout.order() {
                let len = entries[i].1.len();
                let shape = entries[i].1.shape().to_vec();
                entries[i].1 = Tensor::new(shape, flat.data()[offset..offset + len].to_vec())?;
                offset += len;
            }
            WeightSet::new(entries)
        })
        .collect()
}
