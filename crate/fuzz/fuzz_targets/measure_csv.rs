#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::measure::{w1_distance, EmpiricalMeasure};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mu) = EmpiricalMeasure::from_csv(text) {
        // round trip through the writer must parse to the same cloud
        let back = EmpiricalMeasure::from_csv(&mu.to_csv()).expect("written CSV parses");
        assert_eq!(back, mu);
        if mu.len() <= 64 {
            let d = w1_distance(&mu, &mu).expect("self distance");
            assert!(d.abs() < 1e-9 || !d.is_finite());
        }
    }
});
