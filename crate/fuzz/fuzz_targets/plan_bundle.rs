#![no_main]

use libfuzzer_sys::fuzz_target;
use projopt_cli::PlanBundle;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<PlanBundle>(data);
});
