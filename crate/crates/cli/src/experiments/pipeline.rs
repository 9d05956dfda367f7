use std::path::Path;

use podscale::input::{
    compare_batching, pad_sequences, parse_corpus, round_robin_distribute, trim_eval_to_max_real_length, window_bucketize, BucketizerConfig,
};
use serde::Serialize;

use super::RunOptions;
use crate::config::PipelineStudyExperiment;
use crate::error::{CliError, Result};
use crate::parallel::map_ordered;
use crate::report::ReportDir;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub seed: u64,
    pub bucketed: f64,
    pub random: f64,
    pub bucketed_no_worse: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
struct CorpusBatchRow {
    batch: usize,
    host: usize,
    bucket: usize,
    size: usize,
    min_len: usize,
    max_len: usize,
    partial: bool,
}

pub(super) fn run(e: &PipelineStudyExperiment, seed: u64, config_dir: &Path, opts: &RunOptions, dir: &mut ReportDir) -> Result<Vec<String>> {
    let seeds: Vec<u64> = (0..e.seeds as u64).map(|i| seed + i).collect();
    let rows = map_ordered(&seeds, opts.jobs, |&s| {
        let (bucketed, random) = compare_batching(s, &e.study).map_err(|err| CliError::core("compare_batching", s, err))?;
        Ok(StudyRow { seed: s, bucketed, random, bucketed_no_worse: bucketed <= random })
    })?;
    dir.write_csv("load_balance.csv", &rows)?;
    let wins = rows.iter().filter(|r| r.bucketed_no_worse).count();
    let mean = |f: fn(&StudyRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let mut lines = vec![
        format!("bucketed load-balance metric <= random in {wins}/{} seeds ({:.1}%)", rows.len(), 100.0 * wins as f64 / rows.len() as f64),
        format!("mean metric: bucketed {:.4}, random {:.4}", mean(|r| r.bucketed), mean(|r| r.random)),
    ];

    if let Some(rel) = &e.corpus {
        let path = config_dir.join(rel);
        let text = std::fs::read_to_string(&path).map_err(|err| CliError::io(&path, err))?;
        let corpus = parse_corpus(&text).map_err(|err| CliError::config("experiment.corpus", format!("{}: {err}", path.display())))?;
        let cfg = BucketizerConfig { window_width: e.study.window_width, batch_size: e.study.per_worker_batch };
        let batches = window_bucketize(&corpus, &cfg).map_err(|err| CliError::core("window_bucketize", seed, err))?;
        let indexed: Vec<(usize, _)> = batches.into_iter().enumerate().collect();
        let per_host = round_robin_distribute(indexed, e.hosts as usize).map_err(|err| CliError::core("round_robin_distribute", seed, err))?;
        let mut table: Vec<CorpusBatchRow> = per_host
            .iter()
            .enumerate()
            .flat_map(|(host, bs)| {
                bs.iter().map(move |(i, b)| CorpusBatchRow {
                    batch: *i,
                    host,
                    bucket: b.bucket,
                    size: b.examples.len(),
                    min_len: b.min_len(),
                    max_len: b.max_len(),
                    partial: b.partial,
                })
            })
            .collect();
        table.sort_by_key(|r| r.batch);
        dir.write_csv("corpus_batches.csv", &table)?;

        let longest = corpus.iter().map(|x| x.len()).max().unwrap_or(0);
        let width = e.study.max_length.max(longest);
        let padded = pad_sequences(&corpus, width).map_err(|err| CliError::core("pad_sequences", seed, err))?;
        let trimmed = trim_eval_to_max_real_length(&padded, width).map_err(|err| CliError::core("trim_eval_to_max_real_length", seed, err))?;
        let counts: Vec<usize> = per_host.iter().map(Vec::len).collect();
        lines.push(format!("corpus: {} examples in {} batches, per-host batch counts {counts:?}", corpus.len(), table.len()));
        lines.push(format!("corpus eval width trimmed from {width} to {}", trimmed.first().map_or(0, |t| t.tokens.len())));
    }
    Ok(lines)
}
