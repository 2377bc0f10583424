#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let again = ExperimentConfig::from_value(cfg.to_value()).expect("serialized config reparses");
        assert_eq!(again.hash(), cfg.hash());
    }
});
