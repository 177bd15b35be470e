#![no_main]

use absdl_harness::config::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml(text) {
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).expect("a valid configuration re-parses");
        assert_eq!(again, cfg);
    }
});
