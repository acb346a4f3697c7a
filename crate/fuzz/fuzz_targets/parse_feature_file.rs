#![no_main]

use libfuzzer_sys::fuzz_target;

// Accepted matrices must be rectangular with finite entries; everything
// else must fail with an error rather than a panic.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = subgnd::graph::parse_feature_file(text) {
        assert_eq!(m.data.len(), m.rows * m.cols);
        assert!(m.data.iter().all(|v| v.is_finite()));
    }
});
