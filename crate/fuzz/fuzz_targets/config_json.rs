#![no_main]
use ipds_core::cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_json(s) {
        let _ = c.seed_list();
    }
});
