//! Experiment configuration: one TOML file with a section per command.
//! Every section rejects unknown keys, and every key has a default, so an
//! empty file is a valid configuration.

use std::fmt;

use deloc_core::calibration::{DISTANCE_SHAPE, PRODUCT_SHAPE};
use deloc_core::deloc_experiments::SearchParams;
use deloc_core::ensembles::{DistributionSpec, EntryKind, Field};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Number of designated columns: `auto` means `ceil(ln^2 n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LRepr", into = "LRepr")]
pub enum LChoice {
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LRepr {
    Num(usize),
    Word(String),
}

impl TryFrom<LRepr> for LChoice {
    type Error = String;
    fn try_from(r: LRepr) -> Result<Self, String> {
        match r {
            LRepr::Num(k) => Ok(LChoice::Fixed(k)),
            LRepr::Word(w) if w == "auto" => Ok(LChoice::Auto),
            LRepr::Word(w) => {
                w.parse().map(LChoice::Fixed).map_err(|_| format!("l must be `auto` or an integer, got `{w}`"))
            }
        }
    }
}

impl From<LChoice> for LRepr {
    fn from(l: LChoice) -> LRepr {
        match l {
            LChoice::Auto => LRepr::Word("auto".into()),
            LChoice::Fixed(k) => LRepr::Num(k),
        }
    }
}

impl fmt::Display for LChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LChoice::Auto => f.write_str("auto"),
            LChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl LChoice {
    pub fn resolve(&self, n: usize) -> usize {
        match *self {
            LChoice::Auto => deloc_core::deloc_experiments::auto_l(n),
            LChoice::Fixed(k) => k,
        }
    }
}

fn gaussian() -> EntryKind {
    EntryKind::Gaussian
}

fn dist_of(family: EntryKind, field: Field) -> Result<DistributionSpec, CliError> {
    DistributionSpec::new(family, 1.0, field).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DelocScanConfig {
    pub n: Vec<usize>,
    pub trials: usize,
    pub t: f64,
    pub family: EntryKind,
    pub field: Field,
}

impl Default for DelocScanConfig {
    fn default() -> Self {
        DelocScanConfig { n: vec![64, 128], trials: 20, t: 2.0, family: gaussian(), field: Field::Real }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestProjectionConfig {
    pub n: usize,
    pub l: LChoice,
    pub trials: usize,
    pub z_re: f64,
    pub z_im: f64,
    pub family: EntryKind,
    pub field: Field,
}

impl Default for TestProjectionConfig {
    fn default() -> Self {
        TestProjectionConfig {
            n: 256,
            l: LChoice::Auto,
            trials: 20,
            z_re: 0.0,
            z_im: 0.0,
            family: gaussian(),
            field: Field::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistancesConfig {
    pub n: usize,
    pub k: usize,
    pub k0: usize,
    pub k1: usize,
    pub trials: usize,
    /// Labels of the fixed matrices to run, from the calibrated set.
    pub d: Vec<String>,
    pub family: EntryKind,
    pub field: Field,
}

impl Default for DistancesConfig {
    fn default() -> Self {
        let (n, k, k0, k1) = DISTANCE_SHAPE;
        DistancesConfig {
            n,
            k,
            k0,
            k1,
            trials: 200,
            d: deloc_core::calibration::D_FAMILIES.iter().map(|d| d.label().to_string()).collect(),
            family: gaussian(),
            field: Field::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    /// `s_n` of a tall `N x n` matrix.
    Smallest,
    /// `s_j` of an `N x M` matrix against its first `j` columns.
    Intermediate,
    /// `s_m(PG)` for a coisometry `P`.
    Product,
    Fat,
    Tall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvProbeConfig {
    pub probe: ProbeKind,
    /// Columns `n` (or `j` for the intermediate probe).
    pub n: usize,
    /// Rows `N`.
    pub rows: usize,
    /// Columns `M` of the intermediate probe.
    pub cols: usize,
    /// Rows of the coisometry.
    pub m: usize,
    /// Columns of the random factor in product probes.
    pub k: usize,
    pub trials: usize,
    pub family: EntryKind,
    pub field: Field,
}

impl Default for SvProbeConfig {
    fn default() -> Self {
        SvProbeConfig {
            probe: ProbeKind::Smallest,
            n: 100,
            rows: 200,
            cols: 150,
            m: PRODUCT_SHAPE.0,
            k: PRODUCT_SHAPE.1,
            trials: 100,
            family: gaussian(),
            field: Field::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalancingConfig {
    pub n: usize,
    pub l: LChoice,
    pub z_re: f64,
    pub z_im: f64,
    pub trials: usize,
    pub family: EntryKind,
    pub field: Field,
}

impl Default for BalancingConfig {
    fn default() -> Self {
        BalancingConfig {
            n: 256,
            l: LChoice::Auto,
            z_re: 0.0,
            z_im: 0.0,
            trials: 100,
            family: gaussian(),
            field: Field::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub n: usize,
    pub t: f64,
    pub s: usize,
    pub trials: usize,
    /// Replaces the calibrated sup-norm threshold `W sqrt(l/n)`.
    pub sup_threshold: Option<f64>,
    pub family: EntryKind,
    pub field: Field,
    pub search: SearchParams,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            n: 256,
            t: 1.0,
            s: 0,
            trials: 10,
            sup_threshold: None,
            family: gaussian(),
            field: Field::Real,
            search: SearchParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub n: usize,
    pub t: f64,
    pub s: usize,
    pub trials: usize,
    pub family: EntryKind,
    pub field: Field,
    pub search: SearchParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n: 256,
            t: 2.0,
            s: 0,
            trials: 10,
            family: gaussian(),
            field: Field::Real,
            search: SearchParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub families: Vec<EntryKind>,
    pub field: Field,
    pub pilot_n: usize,
    pub pilot_trials: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        let g = deloc_core::calibration::GlobalConstants::default();
        CalibrateConfig {
            families: vec![EntryKind::Gaussian, EntryKind::Rademacher],
            field: Field::Real,
            pilot_n: g.pilot_n,
            pilot_trials: g.pilot_trials,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub deloc_scan: DelocScanConfig,
    pub test_projection: TestProjectionConfig,
    pub distances: DistancesConfig,
    pub sv_probe: SvProbeConfig,
    pub balancing: BalancingConfig,
    pub localize: LocalizeConfig,
    pub pipeline: PipelineConfig,
    pub calibrate: CalibrateConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            deloc_scan: DelocScanConfig::default(),
            test_projection: TestProjectionConfig::default(),
            distances: DistancesConfig::default(),
            sv_probe: SvProbeConfig::default(),
            balancing: BalancingConfig::default(),
            localize: LocalizeConfig::default(),
            pipeline: PipelineConfig::default(),
            calibrate: CalibrateConfig::default(),
        }
    }
}

macro_rules! dist_accessor {
    ($($t:ty),*) => {$(
        impl $t {
            pub fn dist(&self) -> Result<DistributionSpec, CliError> {
                dist_of(self.family, self.field)
            }
        }
    )*};
}

dist_accessor!(
    DelocScanConfig,
    TestProjectionConfig,
    DistancesConfig,
    SvProbeConfig,
    BalancingConfig,
    LocalizeConfig,
    PipelineConfig
);

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a raw table, creating sections as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{path}`")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Parses `text` after applying `overrides`; unknown keys are errors.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Config, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(Config::from_toml_with("", &[]).unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml_with("[balancing]\nnn = 3\n", &[]).is_err());
        assert!(Config::from_toml_with("bogus = 1\n", &[]).is_err());
        assert!(Config::from_toml_with("", &["distances.zz=1".into()]).is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = Config::from_toml_with(
            "[balancing]\nn = 64\n",
            &["balancing.l=auto".into(), "balancing.trials=7".into(), "deloc_scan.n=[16, 32]".into(), "seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.balancing.n, 64);
        assert_eq!(c.balancing.l, LChoice::Auto);
        assert_eq!(c.balancing.trials, 7);
        assert_eq!(c.deloc_scan.n, vec![16, 32]);
        assert_eq!(c.seed, 9);
        let c = Config::from_toml_with("", &["balancing.l=12".into(), "balancing.family=rademacher".into()]).unwrap();
        assert_eq!(c.balancing.l, LChoice::Fixed(12));
        assert_eq!(c.balancing.family, EntryKind::Rademacher);
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = Config::default();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Config>(&j).unwrap(), c);
    }

    #[test]
    fn auto_l_resolves() {
        assert_eq!(LChoice::Auto.resolve(256), 31);
        assert_eq!(LChoice::Fixed(5).resolve(256), 5);
    }
}
