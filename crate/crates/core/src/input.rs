//! Sequence input pipeline: windowed length bucketization, round-robin
//! distribution of batches to hosts, eval-set trimming and a synchronous-step
//! load-balance metric.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceExample {
    tokens: Vec<u32>,
}

impl SequenceExample {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("SequenceExample", "sequence must have at least one token"));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketizerConfig {
    pub window_width: usize,
    pub batch_size: usize,
}

impl BucketizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_width == 0 || self.batch_size == 0 {
            return Err(Error::invalid("BucketizerConfig", format!("{self:?}: width and batch size must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub bucket: usize,
    pub examples: Vec<SequenceExample>,
    /// Fewer than `batch_size` examples: the bucket's leftovers.
    pub partial: bool,
}

impl Batch {
    pub fn max_len(&self) -> usize {
        self.examples.iter().map(SequenceExample::len).max().unwrap_or(0)
    }

    pub fn min_len(&self) -> usize {
        self.examples.iter().map(SequenceExample::len).min().unwrap_or(0)
    }
}

pub fn bucket_index(length: usize, window_width: usize) -> usize {
    (length.max(1) - 1) / window_width
}

/// Groups examples into batches of similar length.
///
/// An example of length `L` joins bucket `(L-1) / w`. Each bucket fills in
/// arrival order; a batch is emitted as soon as it is full. Leftovers are
/// emitted afterwards as partial batches, in ascending bucket order.
pub fn window_bucketize(examples: &[SequenceExample], cfg: &BucketizerConfig) -> Result<Vec<Batch>> {
    cfg.validate()?;
    let mut open: std::collections::BTreeMap<usize, Vec<SequenceExample>> = Default::default();
    let mut out = Vec::new();
    for ex in examples {
        let bucket = bucket_index(ex.len(), cfg.window_width);
        let pending = open.entry(bucket).or_default();
        pending.push(ex.clone());
        if pending.len() == cfg.batch_size {
            out.push(Batch { bucket, examples: std::mem::take(pending), partial: false });
        }
    }
    for (bucket, rest) in open {
        if !rest.is_empty() {
            out.push(Batch { bucket, examples: rest, partial: true });
        }
    }
    Ok(out)
}

/// Item `i` goes to host `i % hosts`, keeping order within each host.
pub fn round_robin_distribute<T>(items: Vec<T>, hosts: usize) -> Result<Vec<Vec<T>>> {
    if hosts == 0 {
        return Err(Error::invalid("round_robin_distribute", "need at least one host"));
    }
    let mut out: Vec<Vec<T>> = (0..hosts).map(|_| Vec::new()).collect();
    for (i, item) in items.into_iter().enumerate() {
        out[i % hosts].push(item);
    }
    Ok(out)
}

/// Eval sequence padded to a fixed width with token 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedSequence {
    pub tokens: Vec<u32>,
    pub length: usize,
}

pub fn pad_sequences(examples: &[SequenceExample], padded_len: usize) -> Result<Vec<PaddedSequence>> {
    examples
        .iter()
        .map(|e| {
            if e.len() > padded_len {
                return Err(Error::invalid("pad_sequences", format!("length {} exceeds padded length {padded_len}", e.len())));
            }
            let mut tokens = e.tokens().to_vec();
            tokens.resize(padded_len, 0);
            Ok(PaddedSequence { tokens, length: e.len() })
        })
        .collect()
}

/// Re-pads an eval set from `padded_len` down to its longest real example.
pub fn trim_eval_to_max_real_length(examples: &[PaddedSequence], padded_len: usize) -> Result<Vec<PaddedSequence>> {
    let max_real = examples.iter().map(|e| e.length).max().unwrap_or(0);
    for (i, e) in examples.iter().enumerate() {
        if e.tokens.len() != padded_len || e.length > padded_len {
            return Err(Error::invalid(
                "trim_eval_to_max_real_length",
                format!("example {i} has width {} and length {}, expected width {padded_len}", e.tokens.len(), e.length),
            ));
        }
    }
    Ok(examples.iter().map(|e| PaddedSequence { tokens: e.tokens[..max_real].to_vec(), length: e.length }).collect())
}

/// Cost of a synchronous step: every worker waits for the longest sequence.
///
/// `step_costs[s][w]` is worker `w`'s cost in step `s` (its batch's longest
/// length). Returns `Σ_s max_w / Σ_s mean_w`, which is 1 when every step is
/// perfectly balanced.
pub fn load_balance_metric(step_costs: &[Vec<usize>]) -> Result<f64> {
    let (mut max_sum, mut mean_sum) = (0.0f64, 0.0f64);
    for (s, costs) in step_costs.iter().enumerate() {
        if costs.is_empty() {
            return Err(Error::invalid("load_balance_metric", format!("step {s} has no workers")));
        }
        max_sum += *costs.iter().max().expect("non-empty") as f64;
        mean_sum += costs.iter().sum::<usize>() as f64 / costs.len() as f64;
    }
    if step_costs.is_empty() || mean_sum == 0.0 {
        return Err(Error::invalid("load_balance_metric", "no work assigned"));
    }
    Ok(max_sum / mean_sum)
}

/// Splits each global batch into `workers` equal per-worker batches and
/// returns the per-step, per-worker costs. Partial global batches are dropped.
pub fn split_step_costs(global_batches: &[Batch], workers: usize, per_worker: usize) -> Vec<Vec<usize>> {
    global_batches
        .iter()
        .filter(|b| b.examples.len() == workers * per_worker)
        .map(|b| b.examples.chunks(per_worker).map(|chunk| chunk.iter().map(SequenceExample::len).max().unwrap_or(0)).collect())
        .collect()
}

/// Parameters of the bucketed-vs-random batching comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadBalanceStudy {
    pub examples: usize,
    pub max_length: usize,
    pub window_width: usize,
    pub workers: usize,
    pub per_worker_batch: usize,
}

impl Default for LoadBalanceStudy {
    fn default() -> Self {
        Self { examples: 2048, max_length: 100, window_width: 8, workers: 4, per_worker_batch: 8 }
    }
}

/// Random corpus with lengths uniform in `1..=max_length`.
pub fn random_corpus(n: usize, max_length: usize, rng: &mut impl Rng) -> Vec<SequenceExample> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_length.max(1));
            SequenceExample { tokens: (0..len).map(|_| rng.random_range(1..32_000)).collect() }
        })
        .collect()
}

/// `(bucketed, random)` load-balance metrics for one seed. Both schemes form
/// global batches of `workers × per_worker_batch` from the same corpus; the
/// random scheme shuffles it first and ignores lengths.
pub fn compare_batching(seed: u64, study: &LoadBalanceStudy) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = random_corpus(study.examples, study.max_length, &mut rng);
    let global = study.workers * study.per_worker_batch;
    let bucketed = window_bucketize(&corpus, &BucketizerConfig { window_width: study.window_width, batch_size: global })?;
    let mut shuffled = corpus;
    shuffled.shuffle(&mut rng);
    let random: Vec<Batch> = shuffled.chunks(global).map(|c| Batch { bucket: 0, examples: c.to_vec(), partial: c.len() < global }).collect();
    Ok((
        load_balance_metric(&split_step_costs(&bucketed, study.workers, study.per_worker_batch))?,
        load_balance_metric(&split_step_costs(&random, study.workers, study.per_worker_batch))?,
    ))
}

/// One example per line, whitespace-separated non-negative token ids.
/// Blank lines are rejected since examples must be non-empty.
pub fn parse_corpus(text: &str) -> Result<Vec<SequenceExample>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let location = || format!("line {}", i + 1);
            let tokens = line
                .split_whitespace()
                .map(|tok| tok.parse::<u32>().map_err(|e| Error::Parse { location: location(), detail: format!("bad token {tok:?}: {e}") }))
                .collect::<Result<Vec<_>>>()?;
            if tokens.is_empty() {
                return Err(Error::Parse { location: location(), detail: "empty example".into() });
            }
            Ok(SequenceExample { tokens })
        })
        .collect()
}

pub fn read_corpus(path: &Path) -> std::result::Result<Vec<SequenceExample>, Box<dyn std::error::Error + Send + Sync>> {
    Ok(parse_corpus(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(len: usize) -> SequenceExample {
        SequenceExample::new((1..=len as u32).collect()).unwrap()
    }

    fn lens(b: &Batch) -> Vec<usize> {
        b.examples.iter().map(SequenceExample::len).collect()
    }

    #[test]
    fn enumerated_bucket_example() {
        let corpus: Vec<_> = [3, 4, 8, 9, 4, 8].into_iter().map(ex).collect();
        let batches = window_bucketize(&corpus, &BucketizerConfig { window_width: 2, batch_size: 2 }).unwrap();
        let got: Vec<(Vec<usize>, bool)> = batches.iter().map(|b| (lens(b), b.partial)).collect();
        assert_eq!(got, vec![(vec![3, 4], false), (vec![8, 8], false), (vec![4], true), (vec![9], true)]);
    }

    #[test]
    fn unit_window_gives_uniform_batches() {
        let corpus: Vec<_> = [5, 2, 5, 2, 3, 5].into_iter().map(ex).collect();
        let batches = window_bucketize(&corpus, &BucketizerConfig { window_width: 1, batch_size: 2 }).unwrap();
        assert!(batches.iter().all(|b| b.max_len() == b.min_len()));
    }

    #[test]
    fn single_example_is_one_partial_batch() {
        let batches = window_bucketize(&[ex(7)], &BucketizerConfig { window_width: 4, batch_size: 3 }).unwrap();
        assert_eq!(batches.len(), 1);
        assert!(batches[0].partial);
    }

    #[test]
    fn round_robin_counts() {
        let hosts = round_robin_distribute((0..10).collect::<Vec<_>>(), 4).unwrap();
        assert_eq!(hosts.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert_eq!(hosts[1], vec![1, 5, 9]);
        assert_eq!(round_robin_distribute(vec![1, 2], 1).unwrap(), vec![vec![1, 2]]);
        assert!(round_robin_distribute(vec![1], 0).is_err());
    }

    #[test]
    fn trimming_to_longest_real_example() {
        let corpus: Vec<_> = [12, 97, 40].into_iter().map(ex).collect();
        let padded = pad_sequences(&corpus, 256).unwrap();
        let trimmed = trim_eval_to_max_real_length(&padded, 256).unwrap();
        assert!(trimmed.iter().all(|e| e.tokens.len() == 97));
        for (t, c) in trimmed.iter().zip(&corpus) {
            assert_eq!(&t.tokens[..t.length], c.tokens());
        }
        assert_eq!(trim_eval_to_max_real_length(&trimmed, 97).unwrap(), trimmed);
        assert!(trim_eval_to_max_real_length(&padded, 100).is_err());
    }

    #[test]
    fn load_balance_examples() {
        assert_eq!(load_balance_metric(&[vec![7, 7, 7]]).unwrap(), 1.0);
        assert!((load_balance_metric(&[vec![10, 5]]).unwrap() - 10.0 / 7.5).abs() < 1e-15);
        assert!(load_balance_metric(&[]).is_err());
        assert!(load_balance_metric(&[vec![]]).is_err());
    }

    #[test]
    fn bucketing_beats_random_on_one_seed() {
        let (b, r) = compare_batching(1, &LoadBalanceStudy::default()).unwrap();
        assert!(b < r, "{b} vs {r}");
    }

    #[test]
    fn corpus_parsing() {
        let c = parse_corpus("1 2 3\n  40\t5 \n7\n").unwrap();
        assert_eq!(c.iter().map(SequenceExample::len).collect::<Vec<_>>(), vec![3, 2, 1]);
        assert_eq!(c[1].tokens(), &[40, 5]);
        let err = parse_corpus("1 2\n\n3").unwrap_err();
        assert_eq!(err, Error::Parse { location: "line 2".into(), detail: "empty example".into() });
        assert!(matches!(parse_corpus("1 x"), Err(Error::Parse { .. })));
        assert!(matches!(parse_corpus("-1"), Err(Error::Parse { .. })));
        assert!(parse_corpus("").unwrap().is_empty());
    }
}
