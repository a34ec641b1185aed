#![no_main]
use ipds_core::geometry::{Geometry, ProxFn};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(g) = serde_json::from_slice::<Geometry>(data) {
        let u = g.anchor();
        let _ = g.dgf_value(&u);
        let _ = g.diameter();
        let v = vec![1.0; g.dim()];
        let _ = g.prox_step(&ProxFn::Zero, &v, 1.0);
    }
});
