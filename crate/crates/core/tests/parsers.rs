use dibqc::mbqc::{PatternFile, TapeSpec, PATTERN_SCHEMA};
use dibqc::protocol::{PatternRef, SessionConfig, StrategySpec, SESSION_SCHEMA};
use dibqc::selftest::{BoundReport, ConfidenceFormula, SecurityParams};
use dibqc::transcript::Transcript;
use proptest::prelude::*;

fn pattern_strategy() -> impl Strategy<Value = PatternFile> {
    (1usize..=3, 1usize..=6, any::<bool>(), any::<u64>(), prop::option::of((0usize..6, 1usize..3, 0u8..2)))
        .prop_flat_map(|(half_rows, cols, cylindrical, seed, tape)| {
            let rows = 2 * half_rows;
            prop::collection::vec(0u8..8, rows * cols).prop_map(move |phi| PatternFile {
                schema: PATTERN_SCHEMA,
                rows,
                cols,
                cylindrical,
                phi,
                tape: tape.map(|(start_row, len, colour)| TapeSpec { start_row: start_row % rows, len, colour }),
                delta_frac: None,
                seed,
            })
        })
}

fn mutate(text: &str, at: usize, byte: u8) -> String {
    let mut bytes = text.as_bytes().to_vec();
    if !bytes.is_empty() {
        let i = at % bytes.len();
        bytes[i] = byte;
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

proptest! {
    #[test]
    fn pattern_files_round_trip(p in pattern_strategy()) {
        let text = serde_json::to_string(&p).unwrap();
        match PatternFile::parse(&text) {
            Ok(back) => prop_assert_eq!(back, p),
            Err(_) => prop_assert!(p.validate().is_err()),
        }
    }

    #[test]
    fn mutated_pattern_files_never_panic(p in pattern_strategy(), at in any::<usize>(), byte in any::<u8>()) {
        let text = mutate(&serde_json::to_string(&p).unwrap(), at, byte);
        let _ = PatternFile::parse(&text);
    }

    #[test]
    fn session_configs_never_panic(s in "\\PC{0,400}") {
        let _ = SessionConfig::parse(&s);
    }

    #[test]
    fn mutated_session_configs_never_panic(at in any::<usize>(), byte in any::<u8>()) {
        let config = SessionConfig {
            schema: SESSION_SCHEMA,
            params: SecurityParams { p: 0.9, epsilon: 0.5, delta_frac: 0.125, c: 2, m: 36, n_tilde: 150, confidence_formula: ConfidenceFormula::PerSession },
            pattern: PatternRef::Identity { rows: 4, cols: 9 },
            alice_device: StrategySpec::Honest,
            bob: StrategySpec::SingleVertexDeviate { vertex: Some(3) },
            seed: 1,
            expected_output: Some(vec![0]),
        };
        let text = serde_json::to_string(&config).unwrap();
        prop_assert_eq!(SessionConfig::parse(&text).unwrap(), config);
        let _ = SessionConfig::parse(&mutate(&text, at, byte));
    }

    #[test]
    fn transcripts_never_panic(s in "(\\{\"round\":[0-9]{1,3},\"direction\":\"(to_bob|from_bob|to_device|from_device)\",\"payload\":\\{\"type\":\"[a-z_]{3,20}\"\\}\\}\n){0,8}") {
        let _ = Transcript::from_jsonl(&s);
    }

    #[test]
    fn bound_reports_never_panic(s in "\\PC{0,200}") {
        let _ = serde_json::from_str::<BoundReport>(&s);
    }
}

#[test]
fn bound_report_round_trips() {
    let params = SecurityParams { p: 0.9, epsilon: 0.1, delta_frac: 0.25, c: 1, m: 4, n_tilde: 1000, confidence_formula: ConfidenceFormula::PerSession };
    let report = BoundReport::compute(&params);
    let back: BoundReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
    assert!(serde_json::from_str::<BoundReport>(r#"{"chi":0}"#).is_err());
}

/// Fuzz corpus seeds are valid inputs for their targets.
#[test]
fn corpus_seeds_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let read = |dir: &str| -> Vec<(String, String)> {
        let mut out: Vec<_> = std::fs::read_dir(root.join(dir))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.display().to_string(), std::fs::read_to_string(&p).unwrap())
            })
            .collect();
        out.sort();
        assert!(!out.is_empty(), "{dir} has no seeds");
        out
    };
    for (name, text) in read("pattern_file") {
        PatternFile::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, text) in read("session_config") {
        SessionConfig::parse(&text).and_then(|c| c.resolve_pattern()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, text) in read("transcript_jsonl") {
        Transcript::from_jsonl(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    for (name, text) in read("bound_report") {
        serde_json::from_str::<BoundReport>(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["honest.json", "single_vertex.json", "flip_all.json"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        SessionConfig::parse(&text).and_then(|c| c.resolve_pattern()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    PatternFile::parse(&std::fs::read_to_string(dir.join("pattern_2x3.json")).unwrap()).unwrap();
}
