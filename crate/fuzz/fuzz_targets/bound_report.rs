#![no_main]

use dibqc::selftest::BoundReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(report) = serde_json::from_slice::<BoundReport>(data) {
        let _ = report.is_consistent();
    }
});
