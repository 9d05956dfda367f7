//! Experiment drivers, one per config `kind`.

mod collective;
mod compare;
mod pipeline;
mod shard;
mod train;

use std::path::{Path, PathBuf};

use podscale::optim::Optimizer;
use podscale::torus::TorusTopology;
use podscale::train::{build_model, generate_task, pad_eval_dataset, run_train_and_eval, ModelSpec, TaskSpec, TrainConfig, TrainReport};

pub use collective::{EstimateRow, SweepRow, VerifyRow};
pub use compare::{CompareRow, OrderingSummary};
pub use pipeline::StudyRow;
pub use shard::EquivRow;
pub use train::{report_batch_epoch_curve, BatchCurve, BatchResult, CurveRow};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::ReportDir;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Worker threads for independent seeds.
    pub jobs: usize,
    /// Also write per-eval metrics as CSV.
    pub csv: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, csv: false }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub kind: &'static str,
    /// Human-readable summary, also written to `summary.txt`.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Runs `cfg`, writing reports to `out`. `config_dir` anchors relative paths
/// inside the config.
pub fn run_experiment(cfg: &ExperimentConfig, config_dir: &Path, out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut dir = ReportDir::create(out, opts.csv)?;
    let mut cfg_text = cfg.to_json();
    cfg_text.push('\n');
    dir.write_text("config.json", &cfg_text)?;
    let lines = match &cfg.experiment {
        Experiment::Train(e) => train::run(e, cfg.seed, opts, &mut dir)?,
        Experiment::OptimizerCompare(e) => compare::run(e, cfg.seed, opts, &mut dir)?,
        Experiment::ShardEquiv(e) => shard::run(e, cfg.seed, &mut dir)?,
        Experiment::CollectiveSweep(e) => collective::run(e, cfg.seed, &mut dir)?,
        Experiment::PipelineStudy(e) => pipeline::run(e, cfg.seed, config_dir, opts, &mut dir)?,
    };
    let mut text = lines.join("\n");
    text.push('\n');
    dir.write_text("summary.txt", &text)?;
    Ok(RunOutcome { kind: cfg.experiment.kind(), lines, files: dir.written().to_vec() })
}

/// One seeded training run: data, eval padding and weights all derive from `seed`.
pub(crate) fn train_once(task: &TaskSpec, model: &ModelSpec, optimizer: &Optimizer, cfg: &TrainConfig, topo: &TorusTopology) -> Result<TrainReport> {
    let seed = cfg.seed;
    let (train, eval) = generate_task(task, seed).map_err(|e| CliError::core("generate_task", seed, e))?;
    let eval = pad_eval_dataset(&eval, topo.num_cores(), cfg.per_core_eval_batch).map_err(|e| CliError::core("pad_eval_dataset", seed, e))?;
    let mut m = build_model(model, &task.input, task.classes).map_err(|e| CliError::core("build_model", seed, e))?;
    run_train_and_eval(m.as_mut(), &train, &eval, optimizer, cfg, topo).map_err(|e| CliError::core("run_train_and_eval", seed, e))
}

/// Epoch count for ordering comparisons; runs that miss the target sort last.
pub(crate) fn epochs_key(e: Option<u32>) -> u64 {
    e.map_or(u64::MAX, u64::from)
}
