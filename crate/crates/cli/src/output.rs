//! Report files: per-trial CSV, pretty JSON and the run manifest.

use std::io::Write;
use std::path::Path;

use deloc_core::calibration::CalibrationConstants;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::CliError;

/// Header shared by every per-trial CSV.
pub const CSV_HEADER: &str = "trial,n,statistic,bound,violated";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub trial: usize,
    pub n: usize,
    pub statistic: f64,
    pub bound: f64,
    pub violated: bool,
}

/// 17 significant digits, enough to round-trip any double.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_string(rows: &[CsvRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.trial, r.n, fmt_f64(r.statistic), fmt_f64(r.bound), r.violated));
    }
    s
}

/// Parses a CSV written by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(CliError::Config("missing CSV header".into())),
    }
    let bad = |line: &str| CliError::Config(format!("malformed CSV row `{line}`"));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(CsvRow {
                trial: f[0].parse().map_err(|_| bad(line))?,
                n: f[1].parse().map_err(|_| bad(line))?,
                statistic: f[2].parse().map_err(|_| bad(line))?,
                bound: f[3].parse().map_err(|_| bad(line))?,
                violated: f[4].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Collects report files for one run.
pub struct OutputSet<'a> {
    dir: &'a Path,
    pub files: Vec<String>,
}

impl<'a> OutputSet<'a> {
    pub fn new(dir: &'a Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutputSet { dir, files: Vec::new() })
    }

    pub fn csv(&mut self, name: &str, rows: &[CsvRow]) -> Result<(), CliError> {
        self.text(&format!("{name}.csv"), &csv_string(rows))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.text(&format!("{name}.json"), &s)
    }

    pub fn text(&mut self, file: &str, contents: &str) -> Result<(), CliError> {
        write_file(&self.dir.join(file), contents)?;
        self.files.push(file.to_string());
        Ok(())
    }
}

/// Everything needed to regenerate a run's report files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Config,
    pub constants: Option<CalibrationConstants>,
    /// Report files, relative to the output directory.
    pub outputs: Vec<String>,
    /// Command-specific summary (resolved sizes, flags, pass/fail).
    pub summary: serde_json::Value,
    pub passed: bool,
    /// Informational; outputs do not depend on it.
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ExperimentManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        write_file(&dir.join(MANIFEST_FILE), &s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_doubles_exactly() {
        let rows = vec![
            CsvRow { trial: 0, n: 64, statistic: std::f64::consts::PI, bound: 1e-300, violated: false },
            CsvRow { trial: 1, n: 64, statistic: 0.1 + 0.2, bound: f64::MAX, violated: true },
        ];
        let text = csv_string(&rows);
        assert!(text.starts_with("trial,n,statistic,bound,violated\n"));
        assert_eq!(parse_csv(&text).unwrap(), rows);
    }

    #[test]
    fn csv_uses_seventeen_digits() {
        let text = csv_string(&[CsvRow { trial: 3, n: 8, statistic: 1.0, bound: 2.5, violated: false }]);
        assert_eq!(text.lines().nth(1).unwrap(), "3,8,1.0000000000000000e0,2.5000000000000000e0,false");
    }

    #[test]
    fn manifest_json_round_trips_doubles_exactly() {
        // Constants travel through the manifest; an ulp of drift changes reruns.
        let mut x = 0x9e37_79b9_7f4a_7c15u64;
        for _ in 0..10_000 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let v = f64::from_bits(x >> 2 | 0x3f00_0000_0000_0000);
            let back: f64 = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_csv("a,b\n").is_err());
        assert!(parse_csv("trial,n,statistic,bound,violated\n1,2,x,4,true\n").is_err());
    }
}
