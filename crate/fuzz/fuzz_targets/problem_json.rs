#![no_main]
use ipds_core::problem::SaddleProblem;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(p) = SaddleProblem::from_json(s) {
        let x = p.primal_geom.anchor();
        let l = p.dual_geom.anchor();
        let _ = p.saddle_value(&x, &l);
        let _ = p.l_d();
    }
});
