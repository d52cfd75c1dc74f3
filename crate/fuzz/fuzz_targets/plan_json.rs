#![no_main]

use libfuzzer_sys::fuzz_target;
use specsurg::surgery::parse_plans;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(plans) = parse_plans(text) {
            for p in &plans {
                let _ = p.to_json();
            }
        }
    }
});
