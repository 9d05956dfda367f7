//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use podscale::input::LoadBalanceStudy;
use podscale::optim::Optimizer;
use podscale::spatial::{plan_partition, ShardSpec};
use podscale::tensor::{ConvParams, Padding};
use podscale::torus::{LinkCostParams, TorusTopology};
use podscale::train::{InputShape, ModelSpec, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Base seed; multi-seed experiments use `seed, seed + 1, ...`.
    pub seed: u64,
    /// Report directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Train(TrainExperiment),
    ShardEquiv(ShardEquivExperiment),
    CollectiveSweep(CollectiveSweepExperiment),
    OptimizerCompare(OptimizerCompareExperiment),
    PipelineStudy(PipelineStudyExperiment),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Train(_) => "train",
            Self::ShardEquiv(_) => "shard_equiv",
            Self::CollectiveSweep(_) => "collective_sweep",
            Self::OptimizerCompare(_) => "optimizer_compare",
            Self::PipelineStudy(_) => "pipeline_study",
        }
    }
}

/// Either a named preset or a full optimizer definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerChoice {
    Preset(String),
    Config(Optimizer),
}

impl OptimizerChoice {
    pub fn resolve(&self) -> Result<Optimizer> {
        match self {
            Self::Preset(name) => Optimizer::preset(name).ok_or_else(|| {
                CliError::config("optimizer.preset", format!("unknown preset {name:?}; known: {}", podscale::optim::PRESET_NAMES.join(", ")))
            }),
            Self::Config(opt) => {
                opt.validate().map_err(|e| CliError::config("optimizer.config", e.to_string()))?;
                Ok(*opt)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub global: usize,
    pub per_core: usize,
}

fn default_eval_every() -> u32 {
    4
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperiment {
    pub topology: TorusTopology,
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerChoice,
    /// Swept in the listed order; each must satisfy `global == per_core × cores`.
    pub batches: Vec<BatchConfig>,
    pub max_epochs: u32,
    #[serde(default = "default_eval_every")]
    pub eval_every_epochs: u32,
    #[serde(default)]
    pub target_metric: Option<f64>,
    pub per_core_eval_batch: usize,
    #[serde(default = "one")]
    pub seeds: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedOptimizer {
    pub label: String,
    pub optimizer: OptimizerChoice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCompareExperiment {
    pub topology: TorusTopology,
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub optimizers: Vec<NamedOptimizer>,
    pub batch: BatchConfig,
    pub max_epochs: u32,
    #[serde(default = "default_eval_every")]
    pub eval_every_epochs: u32,
    pub target_metric: f64,
    pub per_core_eval_batch: usize,
    #[serde(default = "one")]
    pub seeds: u32,
}

fn default_stride() -> usize {
    1
}

fn default_padding() -> Padding {
    Padding::Same
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShardEquivExperiment {
    /// NHWC.
    pub input: [usize; 4],
    pub out_channels: usize,
    pub kernel_sizes: Vec<usize>,
    pub grids: Vec<ShardSpec>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_padding")]
    pub padding: Padding,
    pub trials: u32,
}

impl ShardEquivExperiment {
    pub fn params(&self, kernel_size: usize) -> ConvParams {
        ConvParams { kernel_size, stride: self.stride, padding: self.padding, in_channels: self.input[3], out_channels: self.out_channels }
    }
}

fn default_verify() -> u32 {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectiveSweepExperiment {
    pub topologies: Vec<TorusTopology>,
    pub bytes: Vec<u64>,
    pub chunks: Vec<usize>,
    #[serde(default)]
    pub cost: LinkCostParams,
    /// Random tensors summed per topology to check the simulated all-reduce.
    #[serde(default = "default_verify")]
    pub verify_trials: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineStudyExperiment {
    #[serde(default)]
    pub study: LoadBalanceStudy,
    #[serde(default = "one")]
    pub seeds: u32,
    /// Optional corpus file bucketized and distributed as a worked example.
    /// Relative paths resolve against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default = "one")]
    pub hosts: u32,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::config("<document>", e.to_string()))?;
    match value.get("version") {
        None => return Err(CliError::config("version", "missing required field")),
        Some(v) if v.as_u64() != Some(CONFIG_VERSION as u64) => {
            return Err(CliError::config("version", format!("unsupported version {v}; expected {CONFIG_VERSION}")))
        }
        Some(_) => {}
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::config("experiment", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text)
}

fn require(ok: bool, field: &str, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(field, detail()))
    }
}

fn check_batch(field: &str, b: &BatchConfig, topo: &TorusTopology) -> Result<()> {
    require(b.per_core > 0 && b.global == b.per_core * topo.num_cores(), field, || {
        format!("global batch {} must equal per-core batch {} × {} cores", b.global, b.per_core, topo.num_cores())
    })
}

fn check_training(field: &str, task: &TaskSpec, model: &ModelSpec, cfg: &TrainConfig, topo: &TorusTopology) -> Result<()> {
    task.validate().map_err(|e| CliError::config(format!("{field}.task"), e.to_string()))?;
    cfg.validate(topo.num_cores(), task.train_examples).map_err(|e| CliError::config(field, e.to_string()))?;
    podscale::train::build_model(model, &task.input, task.classes).map_err(|e| CliError::config(format!("{field}.model"), e.to_string()))?;
    if let (ModelSpec::Lstm { .. }, InputShape::Image { .. }) | (ModelSpec::Cnn { .. }, InputShape::Sequence { .. }) = (model, task.input) {
        return Err(CliError::config(format!("{field}.model"), "model does not match task input"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        require(self.version == CONFIG_VERSION, "version", || format!("expected {CONFIG_VERSION}"))?;
        match &self.experiment {
            Experiment::Train(t) => {
                require(!t.batches.is_empty(), "experiment.batches", || "at least one batch size".into())?;
                require(t.seeds > 0, "experiment.seeds", || "must be positive".into())?;
                t.optimizer.resolve()?;
                for (i, b) in t.batches.iter().enumerate() {
                    let field = format!("experiment.batches[{i}]");
                    check_batch(&field, b, &t.topology)?;
                    check_training(&field, &t.task, &t.model, &t.train_config(b.global, self.seed), &t.topology)?;
                }
            }
            Experiment::OptimizerCompare(o) => {
                require(!o.optimizers.is_empty(), "experiment.optimizers", || "at least one optimizer".into())?;
                require(o.seeds > 0, "experiment.seeds", || "must be positive".into())?;
                for (i, n) in o.optimizers.iter().enumerate() {
                    n.optimizer.resolve().map_err(|e| CliError::config(format!("experiment.optimizers[{i}]"), e.to_string()))?;
                    require(!o.optimizers[..i].iter().any(|p| p.label == n.label), &format!("experiment.optimizers[{i}].label"), || {
                        format!("duplicate label {:?}", n.label)
                    })?;
                }
                check_batch("experiment.batch", &o.batch, &o.topology)?;
                check_training("experiment", &o.task, &o.model, &o.train_config(self.seed), &o.topology)?;
            }
            Experiment::ShardEquiv(s) => {
                require(s.trials > 0, "experiment.trials", || "must be positive".into())?;
                require(!s.kernel_sizes.is_empty() && !s.grids.is_empty(), "experiment", || "kernel_sizes and grids must be non-empty".into())?;
                for &k in &s.kernel_sizes {
                    for (i, g) in s.grids.iter().enumerate() {
                        plan_partition(s.input, &s.params(k), g)
                            .map_err(|e| CliError::config(format!("experiment.grids[{i}]"), format!("kernel {k}: {e}")))?;
                    }
                }
            }
            Experiment::CollectiveSweep(c) => {
                require(!c.topologies.is_empty() && !c.bytes.is_empty() && !c.chunks.is_empty(), "experiment", || {
                    "topologies, bytes and chunks must be non-empty".into()
                })?;
                require(c.chunks.iter().all(|&n| n > 0), "experiment.chunks", || "chunk counts must be positive".into())?;
                c.cost.validate().map_err(|e| CliError::config("experiment.cost", e.to_string()))?;
            }
            Experiment::PipelineStudy(p) => {
                let s = &p.study;
                require(
                    s.examples > 0 && s.max_length > 0 && s.window_width > 0 && s.workers > 0 && s.per_worker_batch > 0,
                    "experiment.study",
                    || "all study parameters must be positive".into(),
                )?;
                require(p.seeds > 0 && p.hosts > 0, "experiment", || "seeds and hosts must be positive".into())?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl TrainExperiment {
    pub fn train_config(&self, global_batch: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            global_batch,
            max_epochs: self.max_epochs,
            eval_every_epochs: self.eval_every_epochs,
            target_metric: self.target_metric,
            per_core_eval_batch: self.per_core_eval_batch,
            seed,
        }
    }
}

impl OptimizerCompareExperiment {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            global_batch: self.batch.global,
            max_epochs: self.max_epochs,
            eval_every_epochs: self.eval_every_epochs,
            target_metric: Some(self.target_metric),
            per_core_eval_batch: self.per_core_eval_batch,
            seed,
        }
    }
}
