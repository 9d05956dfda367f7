use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{masked_top1, Dataset, EvalDataset};
use super::models::Model;
use crate::error::{Error, Result};
use crate::optim::{sharded_weight_update, Optimizer, OptimizerState, WeightShardLayout};
use crate::torus::{all_reduce_2d, TorusTopology, WeightSet};

fn default_eval_every() -> u32 {
    4
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub global_batch: usize,
    pub max_epochs: u32,
    #[serde(default = "default_eval_every")]
    pub eval_every_epochs: u32,
    /// Stop at the first evaluation reaching this top-1 fraction.
    #[serde(default)]
    pub target_metric: Option<f64>,
    pub per_core_eval_batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, cores: usize, train_len: usize) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("TrainConfig", d));
        if self.eval_every_epochs == 0 || self.max_epochs == 0 || self.per_core_eval_batch == 0 {
            return bad("epochs, eval cadence and eval batch must be positive".into());
        }
        if self.global_batch == 0 || !self.global_batch.is_multiple_of(cores) {
            return bad(format!("global batch {} not divisible across {cores} cores", self.global_batch));
        }
        if self.global_batch > train_len {
            return bad(format!("global batch {} larger than the {train_len}-example training set", self.global_batch));
        }
        if let Some(t) = self.target_metric {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target {t} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u32,
    /// Mean training loss over the steps since the previous record.
    pub train_loss: f32,
    /// Top-1 fraction on the real eval examples.
    pub eval_metric: f64,
    /// Optimizer steps taken so far.
    pub wall_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub step_losses: Vec<f32>,
    /// First evaluated epoch that reached the target.
    pub epochs_to_target: Option<u32>,
    pub weights: WeightSet,
}

/// Distributed evaluation: each eval step hands every core its slice of the
/// padded eval set; padded rows are masked out of the counts.
pub fn evaluate(model: &dyn Model, weights: &[WeightSet], eval: &EvalDataset) -> Result<(usize, usize)> {
    if weights.len() != eval.cores {
        return Err(Error::invalid("evaluate", format!("{} weight copies for {} cores", weights.len(), eval.cores)));
    }
    let per = eval.per_core_batch;
    let global = eval.cores * per;
    let (mut correct, mut real) = (0, 0);
    for start in (0..eval.padded_count()).step_by(global) {
        let mut logits = Vec::with_capacity(eval.cores);
        let mut labels = Vec::with_capacity(eval.cores);
        let mut masks = Vec::with_capacity(eval.cores);
        for (c, w) in weights.iter().enumerate() {
            let idx: Vec<usize> = (start + c * per..start + (c + 1) * per).collect();
            let (x, y) = eval.data.gather(&idx);
            logits.push(model.logits(w, &x)?);
            labels.push(y);
            masks.push(&eval.mask[idx[0]..idx[0] + per]);
        }
        let lr: Vec<&[usize]> = labels.iter().map(Vec::as_slice).collect();
        let (c, r) = masked_top1(&logits, &lr, &masks)?;
        correct += c;
        real += r;
    }
    Ok((correct, real))
}

/// Data-parallel training with periodic distributed evaluation.
///
/// Every step splits a global batch evenly across the torus cores, sums the
/// per-core gradients with the 2-D all-reduce, and applies the optimizer with
/// weight-update sharding. Evaluation runs after every `eval_every_epochs`-th
/// epoch and after the last one; training stops early once the target is met.
pub fn run_train_and_eval(
    model: &mut dyn Model,
    train: &Dataset,
    eval: &EvalDataset,
    optimizer: &Optimizer,
    cfg: &TrainConfig,
    topo: &TorusTopology,
) -> Result<TrainReport> {
    let cores = topo.num_cores();
    cfg.validate(cores, train.len())?;
    optimizer.validate()?;
    if eval.cores != cores {
        return Err(Error::invalid("run_train_and_eval", format!("eval set padded for {} cores, topology has {cores}", eval.cores)));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let w0 = model.init_weights(&mut init_rng);
    let layout = WeightShardLayout::balanced(&w0, cores)?;
    let mut states: Vec<OptimizerState> = (0..cores).map(|c| OptimizerState::for_core(optimizer, &w0, &layout, c)).collect();
    let mut weights = vec![w0; cores];

    let per_core = cfg.global_batch / cores;
    let steps_per_epoch = train.len() / cfg.global_batch;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    let mut records = Vec::new();
    let mut step_losses = Vec::new();
    let mut since_record = Vec::new();
    let mut epochs_to_target = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for s in 0..steps_per_epoch {
            let batch = &order[s * cfg.global_batch..(s + 1) * cfg.global_batch];
            let (inputs, labels): (Vec<_>, Vec<_>) = batch.chunks(per_core).map(|idx| train.gather(idx)).unzip();
            let lr: Vec<&[usize]> = labels.iter().map(Vec::as_slice).collect();
            let out = model.train_step(&weights[0], &inputs, &lr, cfg.global_batch)?;
            let loss = (out.loss_sums.iter().sum::<f64>() / cfg.global_batch as f64) as f32;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            let summed = all_reduce_2d(&out.grads, topo)?;
            let epoch_frac = (epoch - 1) as f64 + s as f64 / steps_per_epoch as f64;
            let eta = optimizer.rate(epoch_frac);
            weights = sharded_weight_update(&summed, &weights, &mut states, &layout, optimizer, eta, topo)?;
            if !weights[0].all_finite() {
                return Err(Error::Divergence { step, loss });
            }
            step += 1;
            step_losses.push(loss);
            since_record.push(loss);
        }
        if epoch % cfg.eval_every_epochs == 0 || epoch == cfg.max_epochs {
            let (correct, real) = evaluate(model, &weights, eval)?;
            let metric = correct as f64 / real as f64;
            let train_loss = (since_record.iter().map(|&l| l as f64).sum::<f64>() / since_record.len().max(1) as f64) as f32;
            since_record.clear();
            records.push(MetricsRecord { epoch, train_loss, eval_metric: metric, wall_steps: step });
            if cfg.target_metric.is_some_and(|t| metric >= t) {
                epochs_to_target = Some(epoch);
                break;
            }
        }
    }
    Ok(TrainReport { records, step_losses, epochs_to_target, weights: weights.swap_remove(0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;
    use crate::train::{build_model, generate_task, pad_eval_dataset, InputShape, ModelSpec, TaskSpec};

    fn task() -> TaskSpec {
        TaskSpec { classes: 3, train_examples: 64, eval_examples: 20, noise: 0.8, input: InputShape::Image { height: 4, width: 4, channels: 1 } }
    }

    fn cfg() -> TrainConfig {
        TrainConfig { global_batch: 16, max_epochs: 8, eval_every_epochs: 4, target_metric: None, per_core_eval_batch: 4, seed: 3 }
    }

    fn adam() -> Optimizer {
        Optimizer::Adam { config: AdamConfig { lr: 1e-2, ..AdamConfig::default() } }
    }

    fn run(topo: &TorusTopology, cfg: &TrainConfig, opt: &Optimizer) -> Result<TrainReport> {
        let t = task();
        let (train, eval) = generate_task(&t, 11).unwrap();
        let eval = pad_eval_dataset(&eval, topo.num_cores(), cfg.per_core_eval_batch).unwrap();
        let mut model = build_model(&ModelSpec::Cnn { filters: 2, bf16: false }, &t.input, t.classes).unwrap();
        run_train_and_eval(model.as_mut(), &train, &eval, opt, cfg, topo)
    }

    #[test]
    fn eval_cadence() {
        let r = run(&TorusTopology::single(), &cfg(), &adam()).unwrap();
        assert_eq!(r.records.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![4, 8]);
        assert_eq!(r.records[1].wall_steps, 8 * 4);
        let r = run(&TorusTopology::single(), &TrainConfig { max_epochs: 6, ..cfg() }, &adam()).unwrap();
        assert_eq!(r.records.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![4, 6]);
        assert!(r.records.iter().all(|m| (0.0..=1.0).contains(&m.eval_metric)));
    }

    #[test]
    fn target_met_at_first_eval() {
        let r = run(&TorusTopology::single(), &TrainConfig { target_metric: Some(0.0), ..cfg() }, &adam()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.epochs_to_target, Some(4));
    }

    #[test]
    fn single_core_matches_monolithic_loop() {
        let c = cfg();
        let opt = adam();
        let r = run(&TorusTopology::single(), &c, &opt).unwrap();

        let t = task();
        let (train, _) = generate_task(&t, 11).unwrap();
        let mut model = build_model(&ModelSpec::Cnn { filters: 2, bf16: false }, &t.input, t.classes).unwrap();
        let mut init_rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(c.seed);
        shuffle_rng.set_stream(1);
        let mut w = model.init_weights(&mut init_rng);
        let mut state = OptimizerState::new(&opt, &w);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut losses = Vec::new();
        for epoch in 0..c.max_epochs {
            order.shuffle(&mut shuffle_rng);
            for s in 0..4 {
                let (x, y) = train.gather(&order[s * 16..(s + 1) * 16]);
                let out = model.train_step(&w, &[x], &[&y], 16).unwrap();
                losses.push((out.loss_sums[0] / 16.0) as f32);
                let eta = opt.rate(epoch as f64 + s as f64 / 4.0);
                (w, state) = opt.step(&w, &out.grads[0], &state, eta).unwrap();
            }
        }
        assert_eq!(r.step_losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(), losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>());
        assert!(r.weights.bitwise_eq(&w));
    }

    #[test]
    fn core_count_invariance() {
        let opt = Optimizer::preset("unscaled-31.2").unwrap();
        let one = run(&TorusTopology::single(), &cfg(), &opt).unwrap();
        let four = run(&TorusTopology::new(2, 2).unwrap(), &cfg(), &opt).unwrap();
        assert_eq!(one.step_losses.len(), four.step_losses.len());
        for (i, (a, b)) in one.step_losses.iter().zip(&four.step_losses).enumerate() {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-6), "step {i}: {a} vs {b}");
        }
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let topo = TorusTopology::new(1, 2).unwrap();
        let a = run(&topo, &cfg(), &adam()).unwrap();
        let b = run(&topo, &cfg(), &adam()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_step() {
        let opt = Optimizer::Adam { config: AdamConfig { lr: 1e30, ..AdamConfig::default() } };
        match run(&TorusTopology::single(), &cfg(), &opt) {
            Err(Error::Divergence { step, .. }) => assert!(step < 32),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let topo = TorusTopology::new(1, 3).unwrap();
        assert!(run(&topo, &cfg(), &adam()).is_err());
        assert!(run(&TorusTopology::single(), &TrainConfig { eval_every_epochs: 0, ..cfg() }, &adam()).is_err());
    }
}
