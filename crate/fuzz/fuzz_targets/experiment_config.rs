#![no_main]

use libfuzzer_sys::fuzz_target;
use zrplab::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ExperimentConfig::from_toml(text) {
        let _ = config.validate();
        let _ = config.hash();
        if let Ok(again) = ExperimentConfig::from_toml(&config.to_toml()) {
            assert_eq!(again, config);
        }
    }
});
