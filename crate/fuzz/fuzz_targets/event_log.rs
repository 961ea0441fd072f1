#![no_main]

use libfuzzer_sys::fuzz_target;
use zrplab::io::{parse_event_log, write_event_log};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, events)) = parse_event_log(text) {
        let again = parse_event_log(&write_event_log(&header, &events)).unwrap();
        assert_eq!(again.1.len(), events.len());
    }
});
