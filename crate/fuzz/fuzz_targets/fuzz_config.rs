#![no_main]

use deloc_cli::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = Config::from_toml_with(text, &[]) {
            // Whatever parses must re-serialize and parse to the same config.
            let again = toml::to_string(&cfg).expect("serialize config");
            assert_eq!(Config::from_toml_with(&again, &[]).expect("reparse config"), cfg);
        }
    }
});
