#![no_main]

use deloc_core::calibration::CalibrationConstants;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(c) = CalibrationConstants::from_toml_str(text) {
            let again = c.to_toml_string().expect("serialize constants");
            assert_eq!(CalibrationConstants::from_toml_str(&again).expect("reparse constants"), c);
        }
    }
});
