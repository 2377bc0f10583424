#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::bundle::EnsembleManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = EnsembleManifest::from_json(text) {
        assert!(m.files.iter().all(|f| !f.contains('/') && !f.contains("..")));
    }
});
