//! Experiment config overlays. The first byte picks the experiment id, the
//! rest is the JSON text; validation must never panic and accepted configs
//! must re-load from their own serialisation.

#![no_main]

use adp_core::experiments::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&id, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let experiment = 1 + id % 3;
    let Ok(cfg) = ExperimentConfig::from_json_overlay(experiment, text) else {
        return;
    };
    let _ = cfg.validate();
    let _ = cfg.dims();
    let json = serde_json::to_string(&cfg).expect("config serialises");
    let back = ExperimentConfig::from_json_overlay(experiment, &json).expect("own output loads");
    assert_eq!(back, cfg);
});
