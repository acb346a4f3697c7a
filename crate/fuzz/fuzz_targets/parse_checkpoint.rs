#![no_main]

use libfuzzer_sys::fuzz_target;

// Accepted checkpoints must re-serialize to the exact input bytes (the
// format has a single canonical encoding) and echo a valid config.
fuzz_target!(|data: &[u8]| {
    if let Ok((config, params)) = subgnd::model::parse_checkpoint(data) {
        assert!(config.validate().is_ok());
        assert_eq!(subgnd::model::write_checkpoint_bytes(&config, &params), data);
    }
});
