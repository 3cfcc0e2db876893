//! `deloc`: run the delocalization experiments from a config file and write
//! CSV/JSON reports plus a manifest that reproduces them.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors, 2 when a
//! run completes but its acceptance check fails.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use deloc_core::calibration::{CalibrationConstants, CONSTANTS_FILE};
use thiserror::Error;

use config::Config;
use output::{ExperimentManifest, OutputSet, MANIFEST_FILE};

/// Environment variable naming the default calibration directory.
pub const CALIBRATION_ENV: &str = "DELOC_CALIBRATION_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] deloc_core::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run the pilot experiments and write the constants file.
    Calibrate,
    /// Sup-norm statistic of all eigenvectors across matrix sizes.
    DelocScan,
    /// Check the test-projection contract on sampled matrices.
    TestProjection,
    /// Anisotropic distance tail frequencies.
    Distances,
    /// Singular-value probes.
    SvProbe,
    /// Frequency of the balancing event.
    Balancing,
    /// Adversarial search for localized approximate eigenvectors.
    Localize,
    /// Deloc scan, net and localization search end to end.
    Pipeline,
    /// Re-run the experiment recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::DelocScan => "deloc-scan",
            Command::TestProjection => "test-projection",
            Command::Distances => "distances",
            Command::SvProbe => "sv-probe",
            Command::Balancing => "balancing",
            Command::Localize => "localize",
            Command::Pipeline => "pipeline",
            Command::Rerun { .. } => "rerun",
        }
    }

    fn from_name(name: &str) -> Option<Command> {
        Some(match name {
            "calibrate" => Command::Calibrate,
            "deloc-scan" => Command::DelocScan,
            "test-projection" => Command::TestProjection,
            "distances" => Command::Distances,
            "sv-probe" => Command::SvProbe,
            "balancing" => Command::Balancing,
            "localize" => Command::Localize,
            "pipeline" => Command::Pipeline,
            _ => return None,
        })
    }

    /// Config section the shorthand flags write into.
    fn section(&self) -> Option<&'static str> {
        Some(match self {
            Command::Calibrate => "calibrate",
            Command::DelocScan => "deloc_scan",
            Command::TestProjection => "test_projection",
            Command::Distances => "distances",
            Command::SvProbe => "sv_probe",
            Command::Balancing => "balancing",
            Command::Localize => "localize",
            Command::Pipeline => "pipeline",
            Command::Rerun { .. } => return None,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "deloc", version, about = "Delocalization experiments for non-Hermitian random matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for reports and the manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Matrix size; a comma-separated list for deloc-scan.
    #[arg(long, global = true)]
    pub n: Option<String>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Designated columns: `auto` or an integer.
    #[arg(long, global = true)]
    pub l: Option<String>,
    /// Entry distribution, e.g. `gaussian` or `stretched-exponential(0.5)`.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// `section.key=value` config override; repeatable.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Directory holding the calibration constants file.
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
}

impl Cli {
    /// Translates shorthand flags into overrides on the command's section.
    fn shorthand_overrides(&self) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        if let Some(seed) = self.seed {
            out.push(format!("seed={seed}"));
        }
        let Some(section) = self.command.section() else {
            return Ok(out);
        };
        let calibrating = self.command == Command::Calibrate;
        if let Some(n) = &self.n {
            let key = if calibrating { "pilot_n" } else { "n" };
            if self.command == Command::DelocScan {
                out.push(format!("{section}.{key}=[{n}]"));
            } else {
                out.push(format!("{section}.{key}={n}"));
            }
        }
        if let Some(t) = self.trials {
            let key = if calibrating { "pilot_trials" } else { "trials" };
            out.push(format!("{section}.{key}={t}"));
        }
        if let Some(l) = &self.l {
            if !matches!(self.command, Command::TestProjection | Command::Balancing) {
                return Err(CliError::Config(format!("--l does not apply to `{}`", self.command.name())));
            }
            let value = if l == "auto" { "\"auto\"".to_string() } else { l.clone() };
            out.push(format!("{section}.l={value}"));
        }
        if let Some(f) = &self.family {
            if calibrating {
                out.push(format!("{section}.families=[\"{f}\"]"));
            } else {
                out.push(format!("{section}.family=\"{f}\""));
            }
        }
        out.extend(self.overrides.iter().cloned());
        Ok(out)
    }

    fn calibration_dir(&self) -> PathBuf {
        self.calibration
            .clone()
            .or_else(|| std::env::var_os(CALIBRATION_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("calibration"))
    }
}

fn load_constants(dir: &Path) -> Result<Option<CalibrationConstants>, CliError> {
    let path = dir.join(CONSTANTS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(CalibrationConstants::load(&path)?))
}

/// Runs `command` against a fully resolved config and constants, writing
/// reports and the manifest into `out_dir`.
fn execute(
    command: Command,
    cfg: &Config,
    constants: Option<CalibrationConstants>,
    out_dir: &Path,
    threads: usize,
    calibration_target: Option<&Path>,
) -> Result<ExperimentManifest, CliError> {
    let start = Instant::now();
    let mut out = OutputSet::new(out_dir)?;
    let (outcome, constants) = match command {
        Command::Calibrate => {
            let (o, c) = commands::calibrate_cmd(cfg, &mut out)?;
            if let Some(dir) = calibration_target {
                std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
                c.save(&dir.join(CONSTANTS_FILE))?;
            }
            (o, None)
        }
        Command::DelocScan => (commands::deloc_scan(cfg, constants.as_ref(), &mut out)?, constants),
        Command::TestProjection => (commands::test_projection(cfg, constants.as_ref(), &mut out)?, constants),
        Command::Distances => (commands::distances(cfg, constants.as_ref(), &mut out)?, constants),
        Command::SvProbe => (commands::sv_probe(cfg, constants.as_ref(), &mut out)?, constants),
        Command::Balancing => (commands::balancing(cfg, constants.as_ref(), &mut out)?, constants),
        Command::Localize => (commands::localize(cfg, constants.as_ref(), &mut out)?, constants),
        Command::Pipeline => (commands::pipeline(cfg, constants.as_ref(), &mut out)?, constants),
        Command::Rerun { .. } => unreachable!("rerun is resolved before execution"),
    };
    let manifest = ExperimentManifest {
        command: command.name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        constants,
        outputs: out.files.clone(),
        summary: outcome.summary,
        passed: outcome.passed,
        threads,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

fn run_cli(cli: &Cli) -> Result<ExperimentManifest, CliError> {
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Config(e.to_string()))?;

    if let Command::Rerun { manifest } = &cli.command {
        let m = ExperimentManifest::load(manifest)?;
        let command = Command::from_name(&m.command)
            .ok_or_else(|| CliError::Config(format!("manifest names unknown command `{}`", m.command)))?;
        if m.outputs.iter().any(|f| f == MANIFEST_FILE) {
            return Err(CliError::Config("manifest lists itself as an output".into()));
        }
        return pool.install(|| execute(command, &m.config, m.constants.clone(), &cli.out, threads, None));
    }

    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let cfg = Config::from_toml_with(&text, &cli.shorthand_overrides()?)?;
    let dir = cli.calibration_dir();
    let constants = if cli.command == Command::Calibrate { None } else { load_constants(&dir)? };
    pool.install(|| execute(cli.command.clone(), &cfg, constants, &cli.out, threads, Some(&dir)))
}

/// Parses `args` (including the program name) and runs; returns the exit
/// code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(&cli) {
        Ok(m) if m.passed => 0,
        Ok(m) => {
            eprintln!("{}: acceptance check failed; see {}", m.command, cli.out.join(MANIFEST_FILE).display());
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
