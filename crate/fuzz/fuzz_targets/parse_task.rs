#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use projopt::model::parse_model;
use projopt::transcription::parse_task;
use projopt::RobotModel;

fn models() -> &'static [RobotModel; 2] {
    static M: OnceLock<[RobotModel; 2]> = OnceLock::new();
    M.get_or_init(|| {
        [
            parse_model(include_str!("../../assets/models/hyq_approx.model")).unwrap(),
            parse_model(include_str!("../../assets/models/pendulum.model")).unwrap(),
        ]
    })
}

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else {
        return;
    };
    for model in models() {
        if let Ok(task) = parse_task(src, model) {
            let _ = task.validate(model);
        }
    }
});
