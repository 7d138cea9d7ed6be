//! Replays the checked-in fuzz corpora through the parsers.

use std::fs;
use std::path::{Path, PathBuf};

use projopt::model::{parse_model, serialize_model};
use projopt::transcription::parse_task;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(PathBuf, String)> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = String::from_utf8_lossy(&fs::read(&p).unwrap()).into_owned();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn model_seeds_round_trip_or_fail_cleanly() {
    let mut parsed = 0;
    for (path, src) in seeds("parse_model") {
        if let Ok(m) = parse_model(&src) {
            let again = parse_model(&serialize_model(&m)).unwrap();
            assert_eq!(again, m, "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 4);
}

#[test]
fn task_seeds_parse_or_fail_cleanly() {
    let hyq = parse_model(include_str!("../../../assets/models/hyq_approx.model")).unwrap();
    let pendulum = parse_model(include_str!("../../../assets/models/pendulum.model")).unwrap();
    let mut parsed = 0;
    for (_, src) in seeds("parse_task") {
        for m in [&hyq, &pendulum] {
            if let Ok(t) = parse_task(&src, m) {
                t.validate(m).unwrap();
                parsed += 1;
            }
        }
    }
    assert!(parsed >= 4);
}
