#![no_main]

use libfuzzer_sys::fuzz_target;
use zrplab::RateFunction;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rate) = RateFunction::parse_label(text) {
        let _ = RateFunction::parse_label(&rate.label());
    }
});
