#![no_main]

use deloc_cli::output::{csv_string, parse_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rows) = parse_csv(text) {
            if rows.iter().all(|r| !r.statistic.is_nan() && !r.bound.is_nan()) {
                assert_eq!(parse_csv(&csv_string(&rows)).expect("reparse csv"), rows);
            }
        }
    }
});
