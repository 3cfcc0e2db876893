#![no_main]

use deloc_cli::config::{apply_override, Config};
use libfuzzer_sys::fuzz_target;

// One `section.key=value` assignment per line.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let lines: Vec<String> = text.lines().map(String::from).collect();
        let mut table = toml::Table::new();
        for line in &lines {
            let _ = apply_override(&mut table, line);
        }
        let _ = Config::from_toml_with("", &lines);
    }
});
