#![no_main]

use libfuzzer_sys::fuzz_target;

// The parser must return a clean error on any text, never panic. On
// success, every reported pair must have come from a non-comment line.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(edges) = subgnd::graph::parse_edge_file(text) {
        let payload =
            text.lines().filter(|l| !l.trim().is_empty() && !l.trim().starts_with('#')).count();
        assert_eq!(edges.len(), payload);
    }
});
