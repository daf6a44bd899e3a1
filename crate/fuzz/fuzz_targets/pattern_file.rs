#![no_main]

use dibqc::mbqc::PatternFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = PatternFile::parse(text) {
        let graph = file.graph().expect("validated files build a graph");
        assert_eq!(file.phi_octants().unwrap().len(), graph.num_vertices());
        let back = serde_json::to_string(&file).unwrap();
        assert_eq!(PatternFile::parse(&back).unwrap(), file);
    }
});
