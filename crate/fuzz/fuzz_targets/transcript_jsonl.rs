#![no_main]

use dibqc::transcript::Transcript;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = Transcript::from_jsonl(text) {
        let again = Transcript::from_jsonl(&t.to_jsonl()).expect("serialized transcripts reparse");
        assert_eq!(again.hash(), t.hash());
    }
});
