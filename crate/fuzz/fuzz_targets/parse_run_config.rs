#![no_main]

use libfuzzer_sys::fuzz_target;

// Any accepted config must survive the manifest round trip: rendering
// the resolved config and parsing it back reproduces the same manifest.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = subgnd::config::parse_run_config(text) {
        let manifest = cfg.manifest_string();
        let reparsed = subgnd::config::parse_run_config(&manifest)
            .expect("manifest of an accepted config must parse");
        assert_eq!(reparsed.manifest_string(), manifest);
    }
});
