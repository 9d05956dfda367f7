use serde::Serialize;

use super::{epochs_key, train_once, RunOptions};
use crate::config::OptimizerCompareExperiment;
use crate::error::Result;
use crate::parallel::map_ordered;
use crate::report::ReportDir;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub optimizer: String,
    pub seed: u64,
    pub epoch: u32,
    pub train_loss: f32,
    pub eval_metric: f64,
    pub wall_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub seed: u64,
    pub optimizer: String,
    pub epochs_to_target: Option<u32>,
    pub final_eval_metric: f64,
}

/// How often `second` reached the target in no more epochs than `first`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingSummary {
    pub first: String,
    pub second: String,
    pub second_no_slower: usize,
    pub seeds: usize,
    pub fraction: f64,
}

pub(super) fn run(e: &OptimizerCompareExperiment, seed: u64, opts: &RunOptions, dir: &mut ReportDir) -> Result<Vec<String>> {
    let opts_resolved = e.optimizers.iter().map(|n| n.optimizer.resolve()).collect::<Result<Vec<_>>>()?;
    let k = e.optimizers.len();
    let items: Vec<(u64, usize)> = (0..e.seeds as u64).flat_map(|i| (0..k).map(move |j| (seed + i, j))).collect();
    let reports = map_ordered(&items, opts.jobs, |&(s, j)| train_once(&e.task, &e.model, &opts_resolved[j], &e.train_config(s), &e.topology))?;

    let mut traj = Vec::new();
    let mut rows = Vec::new();
    for (&(s, j), r) in items.iter().zip(&reports) {
        let label = &e.optimizers[j].label;
        traj.extend(r.records.iter().map(|m| TrajectoryRow {
            optimizer: label.clone(),
            seed: s,
            epoch: m.epoch,
            train_loss: m.train_loss,
            eval_metric: m.eval_metric,
            wall_steps: m.wall_steps,
        }));
        rows.push(CompareRow {
            seed: s,
            optimizer: label.clone(),
            epochs_to_target: r.epochs_to_target,
            final_eval_metric: r.records.last().expect("at least one eval").eval_metric,
        });
    }
    dir.write_jsonl("trajectories.jsonl", &traj)?;
    if dir.csv_metrics() {
        dir.write_csv("trajectories.csv", &traj)?;
    }
    dir.write_csv("epochs_to_target.csv", &rows)?;

    // rows are seed-major, k per seed.
    let per_seed: Vec<&[CompareRow]> = rows.chunks(k).collect();
    let mut orderings = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let n = per_seed.iter().filter(|s| epochs_key(s[b].epochs_to_target) <= epochs_key(s[a].epochs_to_target)).count();
            orderings.push(OrderingSummary {
                first: e.optimizers[a].label.clone(),
                second: e.optimizers[b].label.clone(),
                second_no_slower: n,
                seeds: per_seed.len(),
                fraction: n as f64 / per_seed.len() as f64,
            });
        }
    }
    let listed = per_seed.iter().filter(|s| s.windows(2).all(|w| epochs_key(w[1].epochs_to_target) <= epochs_key(w[0].epochs_to_target))).count();
    dir.write_json("orderings.json", &serde_json::json!({ "pairs": orderings, "listed_order_nonincreasing": listed, "seeds": per_seed.len() }))?;

    let mut lines = Vec::new();
    for (j, n) in e.optimizers.iter().enumerate() {
        let eps: Vec<u32> = per_seed.iter().filter_map(|s| s[j].epochs_to_target).collect();
        let mean = if eps.is_empty() { f64::NAN } else { eps.iter().map(|&v| v as f64).sum::<f64>() / eps.len() as f64 };
        lines.push(format!("{}: reached target in {}/{} seeds, mean epochs {:.2}", n.label, eps.len(), per_seed.len(), mean));
    }
    for o in &orderings {
        lines.push(format!("{} no slower than {} in {}/{} seeds", o.second, o.first, o.second_no_slower, o.seeds));
    }
    lines.push(format!("listed order has nonincreasing epochs in {listed}/{} seeds", per_seed.len()));
    Ok(lines)
}
