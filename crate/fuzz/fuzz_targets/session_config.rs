#![no_main]

use dibqc::protocol::{PatternRef, SessionConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = SessionConfig::parse(text) {
        // File references would touch the filesystem.
        if !matches!(config.pattern, PatternRef::File(_)) {
            let _ = config.resolve_pattern();
        }
    }
});
