#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use projopt::model::parse_model;
use projopt::RobotModel;
use projopt_cli::csvio::{read_gains, read_rollout, read_trajectory, Table};

fn model() -> &'static RobotModel {
    static M: OnceLock<RobotModel> = OnceLock::new();
    M.get_or_init(|| parse_model(include_str!("../../assets/models/pendulum.model")).unwrap())
}

fuzz_target!(|data: &[u8]| {
    let _ = Table::read(data);
    let _ = read_trajectory(data, model());
    let _ = read_rollout(data, model());
    let _ = read_gains(data, model());
});
