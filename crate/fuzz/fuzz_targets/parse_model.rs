#![no_main]

use libfuzzer_sys::fuzz_target;
use projopt::model::{parse_model, serialize_model};

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else {
        return;
    };
    // Anything that parses must survive a write/read round trip unchanged.
    if let Ok(model) = parse_model(src) {
        let again = parse_model(&serialize_model(&model)).expect("serialized model parses");
        assert_eq!(again, model);
    }
});
