#![no_main]

use libfuzzer_sys::fuzz_target;
use mkvlab::config::parse_json;
use mkvlab::modulus::Modulus;
use mkvlab::osgood::{in_domain, phi_rho_endpoints};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rho) = parse_json::<Modulus>(text) else { return };
    for v in [0.0, 1e-6, 0.5, 1.0, 3.0, 1e6] {
        let _ = rho.eval(v);
    }
    let _ = phi_rho_endpoints(&rho);
    let _ = in_domain(&rho, 1.0, 1.0);
});
