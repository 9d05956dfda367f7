use std::collections::BTreeMap;

use serde::Serialize;

use super::{epochs_key, train_once, RunOptions};
use crate::config::TrainExperiment;
use crate::error::{CliError, Result};
use crate::parallel::map_ordered;
use crate::report::ReportDir;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub global_batch: usize,
    pub epoch: u32,
    pub train_loss: f32,
    pub eval_metric: f64,
    pub wall_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BatchResult {
    pub seed: u64,
    pub global_batch: usize,
    pub epochs_to_target: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CurveRow {
    pub seed: u64,
    pub global_batch: usize,
    pub epochs_to_target: Option<u32>,
    /// Whether this seed's epochs never decrease as the batch grows.
    pub seed_nondecreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchCurve {
    pub rows: Vec<CurveRow>,
    pub seeds: usize,
    pub nondecreasing_seeds: usize,
    pub violating_seeds: Vec<u64>,
}

impl BatchCurve {
    pub fn nondecreasing_fraction(&self) -> f64 {
        self.nondecreasing_seeds as f64 / self.seeds as f64
    }
}

/// Batch size vs epochs-to-target, per seed, sorted by batch size. A run
/// that never reached the target counts as slower than any run that did.
/// Decreases are flagged, not treated as errors.
pub fn report_batch_epoch_curve(results: &[BatchResult]) -> Result<BatchCurve> {
    if results.is_empty() {
        return Err(CliError::Invariant { detail: "batch/epoch curve needs at least one run".into(), max_deviation: None, location: None });
    }
    let mut by_seed: BTreeMap<u64, Vec<BatchResult>> = BTreeMap::new();
    for r in results {
        by_seed.entry(r.seed).or_default().push(*r);
    }
    let mut rows = Vec::with_capacity(results.len());
    let mut violating = Vec::new();
    for (seed, mut runs) in by_seed.iter_mut().map(|(s, r)| (*s, std::mem::take(r))) {
        runs.sort_by_key(|r| r.global_batch);
        let ok = runs.windows(2).all(|w| epochs_key(w[0].epochs_to_target) <= epochs_key(w[1].epochs_to_target));
        if !ok {
            violating.push(seed);
        }
        rows.extend(runs.iter().map(|r| CurveRow {
            seed,
            global_batch: r.global_batch,
            epochs_to_target: r.epochs_to_target,
            seed_nondecreasing: ok,
        }));
    }
    Ok(BatchCurve { rows, seeds: by_seed.len(), nondecreasing_seeds: by_seed.len() - violating.len(), violating_seeds: violating })
}

pub(super) fn run(e: &TrainExperiment, seed: u64, opts: &RunOptions, dir: &mut ReportDir) -> Result<Vec<String>> {
    let optimizer = e.optimizer.resolve()?;
    let items: Vec<(u64, usize)> = (0..e.seeds as u64).flat_map(|i| e.batches.iter().map(move |b| (seed + i, b.global))).collect();
    let reports = map_ordered(&items, opts.jobs, |&(s, global)| train_once(&e.task, &e.model, &optimizer, &e.train_config(global, s), &e.topology))?;

    let mut metrics = Vec::new();
    let mut results = Vec::new();
    for (&(s, global_batch), r) in items.iter().zip(&reports) {
        metrics.extend(r.records.iter().map(|m| MetricsRow {
            seed: s,
            global_batch,
            epoch: m.epoch,
            train_loss: m.train_loss,
            eval_metric: m.eval_metric,
            wall_steps: m.wall_steps,
        }));
        results.push(BatchResult { seed: s, global_batch, epochs_to_target: r.epochs_to_target });
    }
    dir.write_jsonl("metrics.jsonl", &metrics)?;
    if dir.csv_metrics() {
        dir.write_csv("metrics.csv", &metrics)?;
    }

    let mut lines = Vec::new();
    for (&(s, global_batch), r) in items.iter().zip(&reports) {
        let last = r.records.last().expect("at least one eval");
        let reached = match (e.target_metric, r.epochs_to_target) {
            (None, _) => String::new(),
            (Some(_), Some(ep)) => format!("target at epoch {ep}, "),
            (Some(_), None) => "target not reached, ".into(),
        };
        lines.push(format!("seed {s} batch {global_batch}: {reached}final eval {:.4} after {} steps", last.eval_metric, last.wall_steps));
    }
    if e.target_metric.is_some() {
        let curve = report_batch_epoch_curve(&results)?;
        dir.write_csv("batch_epochs.csv", &curve.rows)?;
        dir.write_json("batch_epochs.json", &curve)?;
        lines.push(format!(
            "epochs-to-target nondecreasing in batch size for {}/{} seeds ({:.1}%)",
            curve.nondecreasing_seeds,
            curve.seeds,
            100.0 * curve.nondecreasing_fraction()
        ));
        if !curve.violating_seeds.is_empty() {
            lines.push(format!("flagged seeds: {:?}", curve.violating_seeds));
        }
    }
    Ok(lines)
}
