#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::coeff::CoefficientFn;
use mkvlab::config::parse_json;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(f) = parse_json::<CoefficientFn>(text) else { return };
    let _ = f.values_at(0.5);
    let _ = f.integral(0.0, 2.0);
    let text = serde_json::to_string(&f).expect("coefficient serializes");
    let back: CoefficientFn = parse_json(&text).expect("serialized coefficient reparses");
    assert_eq!(back, f);
});
