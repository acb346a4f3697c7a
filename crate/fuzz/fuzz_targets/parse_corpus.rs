#![no_main]

use libfuzzer_sys::fuzz_target;

// Accepted corpora must round-trip byte-for-byte through the writer and
// satisfy the subgraph invariants the trainer relies on.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = subgnd::sampler::parse_corpus(text) {
        for item in &corpus.items {
            for sub in &item.samples {
                assert_eq!(sub.ego_local, 0);
                assert_eq!(sub.features.cols, corpus.feature_dim);
            }
        }
        let rendered = subgnd::sampler::write_corpus_string(&corpus);
        assert_eq!(subgnd::sampler::parse_corpus(&rendered).unwrap(), corpus);
    }
});
