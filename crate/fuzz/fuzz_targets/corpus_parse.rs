#![no_main]

use libfuzzer_sys::fuzz_target;
use podscale::input::{parse_corpus, window_bucketize, BucketizerConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = parse_corpus(text) {
        assert!(corpus.iter().all(|e| !e.is_empty()));
        let batches = window_bucketize(&corpus, &BucketizerConfig { window_width: 4, batch_size: 3 }).unwrap();
        assert_eq!(batches.iter().map(|b| b.examples.len()).sum::<usize>(), corpus.len());
    }
});
