//! Replays the checked-in fuzz corpora through the CSV and bundle readers.

use std::fs;
use std::path::Path;

use projopt::model::parse_model;
use projopt_cli::csvio::{read_gains, read_rollout, read_trajectory, Table};
use projopt_cli::PlanBundle;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn csv_seeds() {
    let m = parse_model(include_str!("../../../assets/models/pendulum.model")).unwrap();
    for (name, data) in seeds("csv_table") {
        let table = Table::read(&data[..]);
        match name.as_str() {
            "trajectory" => assert_eq!(read_trajectory(&data[..], &m).unwrap().states.len(), 4),
            "rollout" => assert!(read_rollout(&data[..], &m).is_ok()),
            "gains" => assert!(read_gains(&data[..], &m).unwrap().gains.iter().all(|k| k.shape() == (1, 2))),
            "bad_row" => assert!(read_gains(&data[..], &m).is_err()),
            _ => assert!(table.is_err(), "{name}"),
        }
    }
}

#[test]
fn bundle_seeds() {
    for (name, data) in seeds("plan_bundle") {
        let parsed = serde_json::from_slice::<PlanBundle>(&data);
        assert_eq!(parsed.is_ok(), name == "pendulum", "{name}");
    }
}
