#![no_main]
use ipds_core::constrained::{build_lagrangian, compute_constants, ConstrainedProgram};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cp) = serde_json::from_slice::<ConstrainedProgram>(data) {
        let _ = compute_constants(&cp);
        let _ = build_lagrangian(&cp);
    }
});
