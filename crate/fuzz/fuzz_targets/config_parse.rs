#![no_main]

use hedgelab::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ExperimentConfig::from_toml(text) {
            let resolved = config.to_toml().expect("valid config serializes");
            let back = ExperimentConfig::from_toml(&resolved).expect("resolved config parses");
            assert_eq!(back, config);
        }
    }
});
