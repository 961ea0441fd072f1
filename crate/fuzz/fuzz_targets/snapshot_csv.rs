#![no_main]

use libfuzzer_sys::fuzz_target;
use zrplab::io::{parse_snapshot, write_snapshot};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((header, occupancy)) = parse_snapshot(text) {
        let again = parse_snapshot(&write_snapshot(&header, &occupancy)).unwrap();
        assert_eq!(again.1, occupancy);
    }
});
