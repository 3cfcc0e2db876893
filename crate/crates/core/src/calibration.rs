//! Calibrated constants and the pilot runs that produce them.
//!
//! Bounds in this crate are stated up to unspecified constants. Each
//! constant is fixed once per entry family by a pilot run at a seed that no
//! evaluation uses, written to a TOML file, and read back frozen afterwards.
//! Lower-type constants are half the smallest pilot statistic, upper-type
//! constants twice the largest.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deloc_experiments::{auto_l, balancing_alpha, eigenvector_deloc_scan, DelocScanSpec, Envelope};
use crate::distances::{isotropic_distance_stats, tail_probability_estimate, DFamily, DistanceExperimentSpec};
use crate::ensembles::{sample_matrix_with, DistributionSpec};
use crate::rng::{derive_seed, label_tag, trial_rng};
use crate::sv_probes::{
    build_coisometry, fat_matrix_probe, intermediate_sv_probe, product_norm_probe, product_sv_probe, smallest_sv_probe,
    tall_matrix_probe, CoisometryKind, RectProbeSpec, Shift,
};
use crate::test_projection::{balancing_event_check, build_test_projection, column_norm_ratio, TestProjectionInput};
use crate::{CMatrix, Error, Result};

/// File name of the constants file inside a calibration directory.
pub const CONSTANTS_FILE: &str = "constants.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConstants {
    /// `delta = c_window / ln R` in window selection.
    pub c_window: f64,
    /// Spectral parameters range over `|z| <= k1 sqrt(n)`.
    pub k1: f64,
    /// `l = ceil(l_const t (s+1) ln^2 n)` in the pipeline.
    pub l_const: f64,
    /// Exponent of `t (s+1)` in the main bound.
    pub t_exponent: f64,
    /// Exponent of `ln n` in the main bound.
    pub log_exponent: f64,
    /// `K = (trunc_const t ln n)^{1/alpha}` for truncation.
    pub trunc_const: f64,
    pub pilot_n: usize,
    pub pilot_trials: usize,
    pub calibration_seed: u64,
}

impl Default for GlobalConstants {
    fn default() -> Self {
        GlobalConstants {
            c_window: crate::spectral_window::DEFAULT_C_WINDOW,
            k1: 1.0,
            l_const: 1.0,
            t_exponent: 1.5,
            log_exponent: 4.5,
            trunc_const: 1.0,
            pilot_n: 100,
            pilot_trials: 500,
            calibration_seed: 0x5EED_CA11_B8A7_E000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConstants {
    /// `c` in the lower bound `c S_{k1}`.
    pub c_lower: f64,
    /// `C` in `M = C k sqrt(k0) / (k - k0)` and in the upper bound.
    pub c_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConstants {
    /// Main bound: statistic `<= c_main t^a (s+1)^a ln^b n`.
    pub c_main: f64,
    /// `alpha = alpha_const / (l ln^{3/2} n)` in the balancing event.
    pub alpha_const: f64,
    pub kappa: f64,
    /// Column ratio `||P e_i|| / ||P e_j|| <= ratio_const sqrt(l) ln^{3/2} n`.
    pub ratio_const: f64,
    /// RMS isotropic distance `<= iso_k_hat sqrt(n - k)`.
    pub iso_k_hat: f64,
    /// `s_n(A) sqrt(n / (N - n)) >= smallest_sv_c`.
    pub smallest_sv_c: f64,
    pub intermediate_sv_c: f64,
    /// `s_m(PG) >= product_sv_c (k - m) / k`.
    pub product_sv_c: f64,
    /// `s_{m0}(T_0) >= fat_c sqrt((m - m0) / m0)`.
    pub fat_c: f64,
    /// `s_m(PG) >= tall_c sqrt(k)` once `k >= tall_ratio m`.
    pub tall_c: f64,
    pub tall_ratio: f64,
    /// `||BG|| <= product_norm_c (s ||B||_HS + t sqrt(n) ||B||)`.
    pub product_norm_c: f64,
    /// Keyed by [`crate::distances::DFamily::label`].
    pub distances: BTreeMap<String, DistanceConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConstants {
    pub global: GlobalConstants,
    /// Keyed by [`crate::ensembles::DistributionSpec::family_key`].
    pub families: BTreeMap<String, FamilyConstants>,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Calibration(format!("{name} must be positive and finite, got {x}")))
    }
}

impl CalibrationConstants {
    pub fn validate(&self) -> Result<()> {
        let g = &self.global;
        for (name, v) in [
            ("c_window", g.c_window),
            ("k1", g.k1),
            ("l_const", g.l_const),
            ("t_exponent", g.t_exponent),
            ("log_exponent", g.log_exponent),
            ("trunc_const", g.trunc_const),
        ] {
            check_positive(&format!("global.{name}"), v)?;
        }
        for (key, f) in &self.families {
            for (name, v) in [
                ("c_main", f.c_main),
                ("alpha_const", f.alpha_const),
                ("kappa", f.kappa),
                ("ratio_const", f.ratio_const),
                ("iso_k_hat", f.iso_k_hat),
                ("smallest_sv_c", f.smallest_sv_c),
                ("intermediate_sv_c", f.intermediate_sv_c),
                ("product_sv_c", f.product_sv_c),
                ("fat_c", f.fat_c),
                ("tall_c", f.tall_c),
                ("tall_ratio", f.tall_ratio),
                ("product_norm_c", f.product_norm_c),
            ] {
                check_positive(&format!("families.{key}.{name}"), v)?;
            }
            for (d, dc) in &f.distances {
                check_positive(&format!("families.{key}.distances.{d}.c_lower"), dc.c_lower)?;
                check_positive(&format!("families.{key}.distances.{d}.c_upper"), dc.c_upper)?;
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: CalibrationConstants = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Calibration(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn family(&self, key: &str) -> Result<&FamilyConstants> {
        self.families.get(key).ok_or_else(|| Error::Calibration(format!("no calibrated constants for family `{key}`")))
    }

    pub fn distance(&self, family: &str, d_label: &str) -> Result<DistanceConstants> {
        self.family(family)?
            .distances
            .get(d_label)
            .copied()
            .ok_or_else(|| Error::Calibration(format!("no distance constants for `{family}` / `{d_label}`")))
    }
}

/// The fixed matrices `D` of the anisotropic distance experiments.
pub const D_FAMILIES: [DFamily; 3] =
    [DFamily::Identity, DFamily::GeometricDecay { rate: 0.95 }, DFamily::RotatedDecay { rate: 0.95, seed: 17 }];

/// `(n, k, k0, k1)` of the anisotropic distance experiments.
pub const DISTANCE_SHAPE: (usize, usize, usize, usize) = (200, 40, 30, 50);

/// Rows of the coisometry and columns of the random factor in the product
/// probes.
pub const PRODUCT_SHAPE: (usize, usize) = (25, 100);

fn min_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Lower-type constant from pilot statistics normalized by the bound shape.
fn lower_constant(normalized: &[f64]) -> f64 {
    0.5 * min_of(normalized)
}

fn upper_constant(normalized: &[f64]) -> f64 {
    2.0 * max_of(normalized)
}

fn pilot_seed(g: &GlobalConstants, family: &str, probe: &str) -> u64 {
    derive_seed(derive_seed(g.calibration_seed, label_tag(family)), label_tag(probe))
}

/// Runs every pilot for one entry family.
pub fn calibrate_family(dist: &DistributionSpec, g: &GlobalConstants) -> Result<FamilyConstants> {
    dist.validate()?;
    let key = dist.family_key();
    let n = g.pilot_n;
    let trials = g.pilot_trials;
    if n < PRODUCT_SHAPE.0 || trials < 2 {
        return Err(Error::Calibration("pilot needs n >= 25 and at least two trials".into()));
    }
    let ln = (n as f64).ln();

    // Main bound at t = 1, s = 0: statistic <= c_main ln^b n.
    let unit = Envelope { c_main: 1.0, t_exponent: g.t_exponent, log_exponent: g.log_exponent };
    let scan = eigenvector_deloc_scan(
        &DelocScanSpec { n_list: vec![n], dist: *dist, trials, t: 1.0, seed: pilot_seed(g, &key, "deloc") },
        &unit,
    )?;
    let shape = unit.statistic_bound(n, 1.0, 0);
    let normalized: Vec<f64> = scan.series[0].statistics().iter().map(|s| s / shape).collect();
    let c_main = upper_constant(&normalized);

    // Balancing and column ratios, half the trials at z = 0 and half on the
    // edge of the disc.
    let l = auto_l(n).min(n / 4);
    let edge = num_complex::Complex64::new(g.k1 * (n as f64).sqrt(), 0.0);
    let bal_seed = pilot_seed(g, &key, "balancing");
    let rows = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64, f64)> {
            let z = if t % 2 == 0 { num_complex::Complex64::new(0.0, 0.0) } else { edge };
            let gm = sample_matrix_with(n, n, dist, &mut trial_rng(bal_seed, t as u64));
            let a = gm - CMatrix::identity(n, n) * z;
            let tp = build_test_projection(&TestProjectionInput::leading(a.clone(), l), g.c_window)?;
            let check = balancing_event_check(&a, &tp, 0.0, 0.0)?;
            Ok((check.norm_j0 / check.norm_rest, check.norm_j0 / check.sqrt_l, column_norm_ratio(&tp).0))
        })
        .collect::<Result<Vec<_>>>()?;
    // alpha(alpha_const = 1) is the bound shape of the first ratio.
    let alpha_shape = balancing_alpha(1.0, l, n);
    let alpha_const = lower_constant(&rows.iter().map(|r| r.0 / alpha_shape).collect::<Vec<_>>());
    let kappa = lower_constant(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let ratio_shape = (l as f64).sqrt() * ln.powf(1.5);
    let ratio_const = upper_constant(&rows.iter().map(|r| r.2 / ratio_shape).collect::<Vec<_>>());

    let iso = isotropic_distance_stats(n, 2 * n / 5, dist, trials, pilot_seed(g, &key, "isotropic"))?;
    let iso_k_hat = 2.0 * iso.rms / ((n - 2 * n / 5) as f64).sqrt();

    let rect = |rows: usize, cols: usize, probe: &str| RectProbeSpec {
        rows,
        cols,
        shift: Shift::None,
        dist: *dist,
        trials,
        seed: pilot_seed(g, &key, probe),
    };
    let smallest = smallest_sv_probe(&rect(2 * n, n, "smallest-sv"), 0.0)?;
    let smallest_sv_c = lower_constant(&smallest.stats.samples);
    let mid = intermediate_sv_probe(&rect(2 * n, 3 * n / 2, "intermediate-sv"), n, 0.0)?;
    let intermediate_sv_c = lower_constant(&mid.stats.samples);

    let (m, k) = PRODUCT_SHAPE;
    let p = build_coisometry(m, n, CoisometryKind::Random { seed: pilot_seed(g, &key, "coisometry") })?;
    let prod = product_sv_probe(&p, k, dist, trials, pilot_seed(g, &key, "product-sv"), 1.0)?;
    let product_sv_c = lower_constant(&prod.samples.iter().map(|s| s / prod.threshold).collect::<Vec<_>>());
    let m0 = m / 2;
    let fat = fat_matrix_probe(&p, m0, dist, trials, pilot_seed(g, &key, "fat"), 1.0)?;
    let fat_c = lower_constant(&fat.samples.iter().map(|s| s / fat.threshold).collect::<Vec<_>>());
    let tall_ratio = 4.0;
    let tall = tall_matrix_probe(&p, k.max(4 * m), tall_ratio, dist, trials, pilot_seed(g, &key, "tall"), 0.0)?;
    let tall_c = lower_constant(&tall.samples);

    // B: the coisometry with geometrically decaying row weights.
    let mut b = p.clone();
    for i in 0..m {
        b.row_mut(i).scale_mut(0.9f64.powi(i as i32));
    }
    let norm = product_norm_probe(&b, dist, n, 1.0, 1.0, trials, pilot_seed(g, &key, "product-norm"), 1.0)?;
    let product_norm_c =
        upper_constant(&norm.stats.samples.iter().map(|s| s / norm.stats.threshold).collect::<Vec<_>>());

    let mut distances = BTreeMap::new();
    let (dn, dk, dk0, dk1) = DISTANCE_SHAPE;
    for d in D_FAMILIES {
        let spec = DistanceExperimentSpec {
            n: dn,
            k: dk,
            k0: dk0,
            k1: dk1,
            d,
            dist: *dist,
            trials,
            seed: pilot_seed(g, &key, d.label()),
        };
        let st = tail_probability_estimate(&spec, 1.0, 1.0)?;
        let c_lower = lower_constant(&st.samples.iter().map(|x| x / st.lower_bound).collect::<Vec<_>>());
        // The upper bound is quadratic in C.
        let c_upper = 2.0 * max_of(&st.samples.iter().map(|x| x / st.upper_bound).collect::<Vec<_>>()).sqrt();
        distances.insert(d.label().to_string(), DistanceConstants { c_lower, c_upper });
    }

    Ok(FamilyConstants {
        c_main,
        alpha_const,
        kappa,
        ratio_const,
        iso_k_hat,
        smallest_sv_c,
        intermediate_sv_c,
        product_sv_c,
        fat_c,
        tall_c,
        tall_ratio,
        product_norm_c,
        distances,
    })
}

/// Calibrates each family in `families` under `global`.
pub fn calibrate(families: &[DistributionSpec], global: GlobalConstants) -> Result<CalibrationConstants> {
    let mut out = BTreeMap::new();
    for dist in families {
        out.insert(dist.family_key(), calibrate_family(dist, &global)?);
    }
    let c = CalibrationConstants { global, families: out };
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_constants() -> CalibrationConstants {
        let family = FamilyConstants {
            c_main: 0.01,
            alpha_const: 0.5,
            kappa: 0.2,
            ratio_const: 1.0,
            iso_k_hat: 1.1,
            smallest_sv_c: 0.2,
            intermediate_sv_c: 0.2,
            product_sv_c: 0.2,
            fat_c: 0.2,
            tall_c: 0.2,
            tall_ratio: 4.0,
            product_norm_c: 2.0,
            distances: BTreeMap::from([("identity".to_string(), DistanceConstants { c_lower: 0.3, c_upper: 3.0 })]),
        };
        CalibrationConstants {
            global: GlobalConstants::default(),
            families: BTreeMap::from([("gaussian".to_string(), family.clone()), ("rademacher".to_string(), family)]),
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = sample_constants();
        let text = c.to_toml_string().unwrap();
        assert_eq!(CalibrationConstants::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = sample_constants().to_toml_string().unwrap();
        text = text.replacen("[global]\n", "[global]\nbogus = 1\n", 1);
        assert!(matches!(CalibrationConstants::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn nonpositive_constants_are_rejected() {
        let mut c = sample_constants();
        c.families.get_mut("gaussian").unwrap().kappa = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn small_pilot_is_deterministic_and_valid() {
        let g = GlobalConstants { pilot_n: 32, pilot_trials: 6, ..GlobalConstants::default() };
        let a = calibrate(&[DistributionSpec::rademacher()], g.clone()).unwrap();
        let b = calibrate(&[DistributionSpec::rademacher()], g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.families["rademacher"].distances.len(), 3);
    }

    #[test]
    fn missing_family_is_reported() {
        assert!(matches!(sample_constants().family("two-point-asymmetric"), Err(Error::Calibration(_))));
    }
}
