//! Data-parallel train-and-eval loop over a simulated torus.

mod data;
mod models;
mod run;

pub use data::{argmax, generate_task, masked_top1, pad_eval_dataset, Dataset, EvalDataset, InputShape, TaskSpec};
pub use models::{build_model, softmax_cross_entropy, Model, ModelSpec, StepOutput};
pub use run::{evaluate, run_train_and_eval, MetricsRecord, TrainConfig, TrainReport};
