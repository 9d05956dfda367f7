use podscale::spatial::{assemble_output, plan_partition, scatter_input, sharded_conv2d};
use podscale::tensor::{conv2d, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ShardEquivExperiment;
use crate::error::{CliError, Result};
use crate::report::ReportDir;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivRow {
    pub kernel_size: usize,
    pub grid: String,
    pub trials: u32,
    pub max_deviation: f32,
    pub bitwise_equal: bool,
    /// Plan chose replication on some axis.
    pub replicated: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

/// First differing element as `(flat index, oracle, sharded)`.
fn first_mismatch(a: &Tensor, b: &Tensor) -> Option<(usize, f32, f32)> {
    a.data().iter().zip(b.data()).enumerate().find(|(_, (x, y))| x.to_bits() != y.to_bits()).map(|(i, (x, y))| (i, *x, *y))
}

pub(super) fn run(e: &ShardEquivExperiment, seed: u64, dir: &mut ReportDir) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut worst: Option<(f32, String)> = None;
    for &k in &e.kernel_sizes {
        let params = e.params(k);
        for g in &e.grids {
            let grid = format!("{}x{}x{}", g.grid_h, g.grid_w, g.batch_splits);
            let plan = plan_partition(e.input, &params, g).map_err(|err| CliError::core("plan_partition", seed, err))?;
            let mut max_dev = 0.0f32;
            let mut bitwise = true;
            for trial in 0..e.trials {
                let x = random(&e.input, &mut rng);
                let w = random(&[k, k, params.in_channels, params.out_channels], &mut rng);
                let oracle = conv2d(&x, &w, &params).map_err(|err| CliError::core("conv2d", seed, err))?;
                let shards = scatter_input(&x, &plan).map_err(|err| CliError::core("scatter_input", seed, err))?;
                let outs = sharded_conv2d(&shards, &w, &params, &plan).map_err(|err| CliError::core("sharded_conv2d", seed, err))?;
                let got = assemble_output(&outs, &plan).map_err(|err| CliError::core("assemble_output", seed, err))?;
                let dev = oracle.max_abs_diff(&got);
                max_dev = max_dev.max(dev);
                if let Some((i, a, b)) = first_mismatch(&oracle, &got) {
                    bitwise = false;
                    if worst.as_ref().is_none_or(|(d, _)| dev > *d) {
                        worst = Some((dev, format!("kernel {k}, grid {grid}, trial {trial}, output element {i}: oracle {a} vs sharded {b}")));
                    }
                }
            }
            lines.push(format!("K={k} grid={grid} trials={}: max deviation {max_dev}", e.trials));
            rows.push(EquivRow {
                kernel_size: k,
                grid,
                trials: e.trials,
                max_deviation: max_dev,
                bitwise_equal: bitwise,
                replicated: plan.is_replicated(),
            });
        }
    }
    dir.write_csv("equivalence.csv", &rows)?;
    let overall = rows.iter().map(|r| r.max_deviation).fold(0.0f32, f32::max);
    lines.push(format!("max deviation {overall}"));
    if let Some((dev, location)) = worst {
        dir.write_text("summary.txt", &(lines.join("\n") + "\n"))?;
        return Err(CliError::Invariant {
            detail: format!("sharded conv differs from the monolithic oracle (max deviation {dev})"),
            max_deviation: Some(dev as f64),
            location: Some(location),
        });
    }
    Ok(lines)
}
