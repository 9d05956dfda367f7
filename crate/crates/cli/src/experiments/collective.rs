use podscale::tensor::Tensor;
use podscale::torus::{all_reduce_2d, estimate_for_bytes, GradientSet, TorusTopology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::CollectiveSweepExperiment;
use crate::error::{CliError, Result};
use crate::report::ReportDir;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub rows: usize,
    pub cols: usize,
    pub bytes: u64,
    pub chunks: usize,
    pub unpipelined_s: f64,
    pub pipelined_s: f64,
    pub speedup: f64,
}

/// Long-format estimate: one row per (scenario, bytes, chunks, pipelined).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRow {
    pub scenario: String,
    pub bytes: u64,
    pub chunks: usize,
    pub pipelined: bool,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerifyRow {
    pub rows: usize,
    pub cols: usize,
    pub trials: u32,
    pub integer_exact: bool,
    /// Worst `|sum - oracle| / sum |x|` over the f32 trials.
    pub f32_max_rel_error: f64,
}

const F32_TOLERANCE: f64 = 1e-5;

/// Per-core gradient sets with two tensors whose sizes do not divide evenly
/// into shards.
fn random_sets(cores: usize, integer: bool, rng: &mut ChaCha8Rng) -> Vec<GradientSet> {
    (0..cores)
        .map(|_| {
            let mut draw = |n: usize| -> Tensor {
                Tensor::from_fn(&[n], |_| if integer { rng.random_range(-1000i32..=1000) as f32 } else { rng.random_range(-1.0f32..1.0) })
            };
            GradientSet::new(vec![("a".into(), draw(37)), ("b".into(), draw(100))]).expect("distinct names")
        })
        .collect()
}

/// `(exact, worst relative error)` of one all-reduce against the f64 oracle.
fn check(values: &[GradientSet], topo: &TorusTopology, seed: u64) -> Result<(bool, f64)> {
    let flat: Vec<Vec<f32>> = values.iter().map(GradientSet::flatten).collect();
    let len = flat[0].len();
    let sum: Vec<f64> = (0..len).map(|i| flat.iter().map(|f| f[i] as f64).sum()).collect();
    let abs: Vec<f64> = (0..len).map(|i| flat.iter().map(|f| (f[i] as f64).abs()).sum()).collect();
    let out = all_reduce_2d(values, topo).map_err(|e| CliError::core("all_reduce_2d", seed, e))?;
    let mut exact = true;
    let mut worst = 0.0f64;
    for o in &out {
        for (i, v) in o.flatten().iter().enumerate() {
            exact &= *v as f64 == sum[i];
            if abs[i] > 0.0 {
                worst = worst.max((*v as f64 - sum[i]).abs() / abs[i]);
            }
        }
    }
    Ok((exact, worst))
}

pub(super) fn run(e: &CollectiveSweepExperiment, seed: u64, dir: &mut ReportDir) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    for t in &e.topologies {
        for &bytes in &e.bytes {
            let base = estimate_for_bytes(bytes, t, &e.cost, 1, false);
            for &chunks in &e.chunks {
                let piped = estimate_for_bytes(bytes, t, &e.cost, chunks, true);
                rows.push(SweepRow { rows: t.rows(), cols: t.cols(), bytes, chunks, unpipelined_s: base, pipelined_s: piped, speedup: base / piped });
            }
        }
    }
    dir.write_csv("sweep.csv", &rows)?;
    let estimates: Vec<EstimateRow> = rows
        .iter()
        .flat_map(|r| {
            let scenario = format!("{}x{}", r.rows, r.cols);
            [
                EstimateRow { scenario: scenario.clone(), bytes: r.bytes, chunks: r.chunks, pipelined: false, seconds: r.unpipelined_s },
                EstimateRow { scenario, bytes: r.bytes, chunks: r.chunks, pipelined: true, seconds: r.pipelined_s },
            ]
        })
        .collect();
    dir.write_csv("estimates.csv", &estimates)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut verify = Vec::new();
    let mut failures = Vec::new();
    if e.verify_trials > 0 {
        for t in &e.topologies {
            let mut integer_exact = true;
            let mut rel = 0.0f64;
            for _ in 0..e.verify_trials {
                let (exact, _) = check(&random_sets(t.num_cores(), true, &mut rng), t, seed)?;
                integer_exact &= exact;
                rel = rel.max(check(&random_sets(t.num_cores(), false, &mut rng), t, seed)?.1);
            }
            if !integer_exact || rel > F32_TOLERANCE {
                failures.push(format!("{}x{} (integer exact: {integer_exact}, f32 relative error {rel:e})", t.rows(), t.cols()));
            }
            verify.push(VerifyRow { rows: t.rows(), cols: t.cols(), trials: e.verify_trials, integer_exact, f32_max_rel_error: rel });
        }
        dir.write_csv("all_reduce_check.csv", &verify)?;
    }

    let best = rows.iter().copied().max_by(|a, b| a.speedup.total_cmp(&b.speedup)).expect("non-empty sweep");
    let mut lines = vec![
        format!("{} sweep points, {} with pipelined speedup >= 1.5", rows.len(), rows.iter().filter(|r| r.speedup >= 1.5).count()),
        format!("best speedup {:.4} at {}x{} torus, {} bytes, {} chunks", best.speedup, best.rows, best.cols, best.bytes, best.chunks),
    ];
    for v in &verify {
        lines.push(format!(
            "all_reduce_2d {}x{}: integer exact {}, f32 max relative error {:e}",
            v.rows, v.cols, v.integer_exact, v.f32_max_rel_error
        ));
    }
    if !failures.is_empty() {
        dir.write_text("summary.txt", &(lines.join("\n") + "\n"))?;
        return Err(CliError::Invariant {
            detail: "all_reduce_2d disagrees with the summation oracle".into(),
            max_deviation: Some(verify.iter().map(|v| v.f32_max_rel_error).fold(0.0, f64::max)),
            location: Some(failures.join("; ")),
        });
    }
    Ok(lines)
}
