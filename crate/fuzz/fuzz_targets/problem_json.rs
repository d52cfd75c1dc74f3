#![no_main]

use libfuzzer_sys::fuzz_target;
use specsurg::problem::ProblemSpec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(spec) = ProblemSpec::from_json_str(text) {
            // Whatever parses must evaluate and serialize without panicking.
            let _ = spec.potential.eval(0.5);
            let _ = spec.to_json(&[0.0, 1.0]);
        }
    }
});
