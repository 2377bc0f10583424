#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::bundle::parse_coordinate_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((grid, rows)) = parse_coordinate_csv(text) {
        assert!(rows.iter().all(|r| r.len() == grid.len()));
    }
});
