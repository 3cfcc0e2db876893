//! One function per subcommand. Each writes its report files and returns a
//! summary plus a pass flag; pass criteria mirror the experiment tolerances.

use deloc_core::calibration::{calibrate, CalibrationConstants, GlobalConstants, D_FAMILIES};
use deloc_core::deloc_experiments::{
    balancing_alpha, balancing_event_mc, eigenvector_deloc_scan, full_pipeline, localization_mc, pipeline_l,
    BalancingMcSpec, DelocScanSpec, Envelope, LocalizationMcSpec, PipelineSpec,
};
use deloc_core::distances::{tail_probability_estimate, DistanceExperimentSpec};
use deloc_core::rng::{derive_seed, label_tag};
use deloc_core::sv_probes::{
    build_coisometry, fat_matrix_probe, intermediate_sv_probe, product_sv_probe, smallest_sv_probe, tall_matrix_probe,
    CoisometryKind, ProbeStats, RectProbeSpec, Shift,
};
use deloc_core::test_projection::{contract_trials, ContractSpec, ZERO_BLOCK_TOL};
use num_complex::Complex64;
use serde_json::json;

use crate::config::{Config, ProbeKind};
use crate::output::{CsvRow, OutputSet};
use crate::CliError;

/// Largest violation frequency accepted by the probe commands.
pub const MAX_VIOLATION_FREQUENCY: f64 = 0.01;
/// Largest fraction of localization trials allowed to produce a witness.
pub const MAX_WITNESS_FREQUENCY: f64 = 0.05;

pub struct Outcome {
    pub summary: serde_json::Value,
    pub passed: bool,
}

fn command_seed(cfg: &Config, command: &str) -> u64 {
    derive_seed(cfg.seed, label_tag(command))
}

fn need<'a>(constants: Option<&'a CalibrationConstants>, command: &str) -> Result<&'a CalibrationConstants, CliError> {
    constants
        .ok_or_else(|| CliError::Config(format!("`{command}` needs a calibration file; run `deloc calibrate` first")))
}

pub fn deloc_scan(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.deloc_scan;
    let dist = c.dist()?;
    let envelope = Envelope::from_constants(need(constants, "deloc-scan")?, &dist.family_key())?;
    let spec =
        DelocScanSpec { n_list: c.n.clone(), dist, trials: c.trials, t: c.t, seed: command_seed(cfg, "deloc-scan") };
    let report = eigenvector_deloc_scan(&spec, &envelope)?;
    let rows: Vec<CsvRow> = report
        .series
        .iter()
        .flat_map(|s| {
            s.trials.iter().map(move |t| CsvRow {
                trial: t.trial,
                n: s.n,
                statistic: t.statistic,
                bound: s.envelope,
                violated: t.statistic > s.envelope,
            })
        })
        .collect();
    out.csv("deloc-scan", &rows)?;
    out.json("deloc-scan", &report)?;
    let violations: usize = report.series.iter().map(|s| s.violations).sum();
    Ok(Outcome {
        summary: json!({
            "violations": violations,
            "scaling_spread": report.scaling_spread(),
            "eigen_failures": report.series.iter().map(|s| s.eigen_failures()).sum::<usize>(),
        }),
        passed: violations == 0,
    })
}

pub fn test_projection(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.test_projection;
    let l = c.l.resolve(c.n);
    let c_window = constants.map_or(GlobalConstants::default().c_window, |k| k.global.c_window);
    let spec = ContractSpec {
        n: c.n,
        l,
        z: Complex64::new(c.z_re, c.z_im),
        dist: c.dist()?,
        trials: c.trials,
        seed: command_seed(cfg, "test-projection"),
        c_window,
    };
    let trials = contract_trials(&spec)?;
    let checks: [(&str, f64, fn(&deloc_core::test_projection::ContractTrial) -> f64); 3] = [
        ("coisometry", 1e-10, |t| t.coisometry_defect),
        ("kernel", 1e-6, |t| t.kernel_defect),
        ("zero-block", ZERO_BLOCK_TOL, |t| t.zero_block),
    ];
    let mut passed = trials.iter().all(|t| t.measurable);
    for (name, bound, stat) in checks {
        let rows: Vec<CsvRow> = trials
            .iter()
            .map(|t| CsvRow { trial: t.trial, n: c.n, statistic: stat(t), bound, violated: stat(t) > bound })
            .collect();
        passed &= rows.iter().all(|r| !r.violated);
        out.csv(&format!("test-projection-{name}"), &rows)?;
    }
    out.json("test-projection", &trials)?;
    Ok(Outcome {
        summary: json!({ "l": l, "non_measurable": trials.iter().filter(|t| !t.measurable).count() }),
        passed,
    })
}

pub fn distances(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.distances;
    let dist = c.dist()?;
    let constants = need(constants, "distances")?;
    let mut passed = true;
    let mut summary = serde_json::Map::new();
    for label in &c.d {
        let d = D_FAMILIES
            .iter()
            .find(|d| d.label() == label)
            .ok_or_else(|| CliError::Config(format!("unknown matrix family `{label}`")))?;
        let dc = constants.distance(&dist.family_key(), label)?;
        let spec = DistanceExperimentSpec {
            n: c.n,
            k: c.k,
            k0: c.k0,
            k1: c.k1,
            d: *d,
            dist,
            trials: c.trials,
            seed: derive_seed(command_seed(cfg, "distances"), label_tag(label)),
        };
        let st = tail_probability_estimate(&spec, dc.c_lower, dc.c_upper)?;
        let lower: Vec<CsvRow> = st
            .samples
            .iter()
            .enumerate()
            .map(|(t, &x)| CsvRow {
                trial: t,
                n: c.n,
                statistic: x,
                bound: st.lower_bound,
                violated: x <= st.lower_bound,
            })
            .collect();
        let upper: Vec<CsvRow> = st
            .samples
            .iter()
            .enumerate()
            .map(|(t, &x)| CsvRow {
                trial: t,
                n: c.n,
                statistic: x,
                bound: st.upper_bound,
                violated: x > st.upper_bound,
            })
            .collect();
        out.csv(&format!("distances-{label}-lower"), &lower)?;
        out.csv(&format!("distances-{label}-upper"), &upper)?;
        out.json(&format!("distances-{label}"), &st)?;
        passed &= st.lower_frequency() <= MAX_VIOLATION_FREQUENCY && st.upper_frequency() <= MAX_VIOLATION_FREQUENCY;
        summary.insert(
            label.clone(),
            json!({ "lower_frequency": st.lower_frequency(), "upper_frequency": st.upper_frequency() }),
        );
    }
    Ok(Outcome { summary: serde_json::Value::Object(summary), passed })
}

fn probe_rows(stats: &ProbeStats, n: usize) -> Vec<CsvRow> {
    stats
        .samples
        .iter()
        .enumerate()
        .map(|(t, &x)| CsvRow { trial: t, n, statistic: x, bound: stats.threshold, violated: x < stats.threshold })
        .collect()
}

pub fn sv_probe(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.sv_probe;
    let dist = c.dist()?;
    let fam = need(constants, "sv-probe")?.family(&dist.family_key())?;
    let seed = command_seed(cfg, "sv-probe");
    let rect = |cols: usize| RectProbeSpec { rows: c.rows, cols, shift: Shift::None, dist, trials: c.trials, seed };
    let coisometry =
        || build_coisometry(c.m, c.n, CoisometryKind::Random { seed: derive_seed(seed, label_tag("coisometry")) });
    let mut extra = json!({});
    let (name, stats) = match c.probe {
        ProbeKind::Smallest => {
            let r = smallest_sv_probe(&rect(c.n), fam.smallest_sv_c)?;
            out.json("sv-probe-smallest", &r)?;
            extra = json!({ "identity_max_rel_error": r.identity_max_rel_error });
            ("smallest", r.stats)
        }
        ProbeKind::Intermediate => {
            let r = intermediate_sv_probe(&rect(c.cols), c.n, fam.intermediate_sv_c)?;
            out.json("sv-probe-intermediate", &r)?;
            extra = json!({ "prefix_failures": r.prefix_failures });
            ("intermediate", r.stats)
        }
        ProbeKind::Product => {
            let s = product_sv_probe(&coisometry()?, c.k, &dist, c.trials, seed, fam.product_sv_c)?;
            out.json("sv-probe-product", &s)?;
            ("product", s)
        }
        ProbeKind::Fat => {
            let s = fat_matrix_probe(&coisometry()?, (c.m / 2).max(1), &dist, c.trials, seed, fam.fat_c)?;
            out.json("sv-probe-fat", &s)?;
            ("fat", s)
        }
        ProbeKind::Tall => {
            let k = c.k.max((fam.tall_ratio * c.m as f64).ceil() as usize);
            let s = tall_matrix_probe(&coisometry()?, k, fam.tall_ratio, &dist, c.trials, seed, fam.tall_c)?;
            out.json("sv-probe-tall", &s)?;
            ("tall", s)
        }
    };
    out.csv(&format!("sv-probe-{name}"), &probe_rows(&stats, c.n))?;
    let prefix_ok = extra.get("prefix_failures").is_none_or(|v| v.as_u64() == Some(0));
    Ok(Outcome {
        passed: stats.frequency() <= MAX_VIOLATION_FREQUENCY && prefix_ok,
        summary: json!({ "probe": name, "violation_frequency": stats.frequency(), "detail": extra }),
    })
}

pub fn balancing(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.balancing;
    let dist = c.dist()?;
    let constants = need(constants, "balancing")?;
    let fam = constants.family(&dist.family_key())?;
    let l = c.l.resolve(c.n);
    let spec = BalancingMcSpec {
        n: c.n,
        l,
        z: Complex64::new(c.z_re, c.z_im),
        dist,
        trials: c.trials,
        seed: command_seed(cfg, "balancing"),
        alpha: balancing_alpha(fam.alpha_const, l, c.n),
        kappa: fam.kappa,
        c_window: constants.global.c_window,
        k1: constants.global.k1,
    };
    let r = balancing_event_mc(&spec)?;
    let sqrt_l = (l as f64).sqrt();
    let rows: Vec<CsvRow> = r
        .trials
        .iter()
        .map(|t| CsvRow {
            trial: t.trial,
            n: c.n,
            statistic: t.norm_j0,
            bound: (spec.alpha * t.norm_rest).max(spec.kappa * sqrt_l),
            violated: !t.holds,
        })
        .collect();
    out.csv("balancing", &rows)?;
    out.json("balancing", &r)?;
    let floor = r.target - 3.0 * r.wilson.half_width;
    Ok(Outcome {
        summary: json!({
            "l": l,
            "alpha": spec.alpha,
            "kappa": spec.kappa,
            "frequency": r.frequency(),
            "floor": floor,
            "errors": r.errors,
        }),
        passed: r.frequency() >= floor,
    })
}

pub fn localize(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.localize;
    let dist = c.dist()?;
    let constants = need(constants, "localize")?;
    let envelope = Envelope::from_constants(constants, &dist.family_key())?;
    let l = pipeline_l(c.n, c.t, c.s, constants.global.l_const)?;
    let tau = c.sup_threshold.unwrap_or_else(|| envelope.sup_norm_bound(c.n, c.t, c.s));
    let spec = LocalizationMcSpec {
        n: c.n,
        l,
        big_w: tau * (c.n as f64 / l as f64).sqrt(),
        small_w: (c.s + 1) as f64,
        dist,
        trials: c.trials,
        seed: command_seed(cfg, "localize"),
        params: c.search,
        net_radius: 2.0 * constants.global.k1 * (c.n as f64).sqrt(),
    };
    let r = localization_mc(&spec)?;
    let rows: Vec<CsvRow> = r
        .trials
        .iter()
        .map(|t| CsvRow { trial: t.trial, n: c.n, statistic: t.residual, bound: r.residual_cap, violated: t.witness })
        .collect();
    out.csv("localize", &rows)?;
    out.json("localize", &r)?;
    let recompute_ok = r.trials.iter().all(|t| (t.residual - t.recomputed_residual).abs() <= 1e-8);
    Ok(Outcome {
        summary: json!({
            "l": l,
            "sup_threshold": r.sup_threshold,
            "vacuous": r.vacuous,
            "witnesses": r.witnesses,
        }),
        passed: r.vacuous || (r.witnesses as f64 <= MAX_WITNESS_FREQUENCY * c.trials as f64 && recompute_ok),
    })
}

pub fn pipeline(
    cfg: &Config,
    constants: Option<&CalibrationConstants>,
    out: &mut OutputSet,
) -> Result<Outcome, CliError> {
    let c = &cfg.pipeline;
    let spec = PipelineSpec {
        n: c.n,
        t: c.t,
        s: c.s,
        dist: c.dist()?,
        trials: c.trials,
        seed: command_seed(cfg, "pipeline"),
        params: c.search,
    };
    let r = full_pipeline(&spec, need(constants, "pipeline")?)?;
    let mut passed = true;
    if let Some(d) = &r.deloc {
        let rows: Vec<CsvRow> = d
            .trials
            .iter()
            .map(|t| CsvRow {
                trial: t.trial,
                n: c.n,
                statistic: t.statistic,
                bound: d.envelope,
                violated: t.statistic > d.envelope,
            })
            .collect();
        passed &= d.violations == 0;
        out.csv("pipeline-deloc", &rows)?;
    }
    if let Some(loc) = &r.localization {
        let rows: Vec<CsvRow> = loc
            .trials
            .iter()
            .map(|t| CsvRow {
                trial: t.trial,
                n: c.n,
                statistic: t.residual,
                bound: loc.residual_cap,
                violated: t.witness,
            })
            .collect();
        passed &= loc.witnesses as f64 <= MAX_WITNESS_FREQUENCY * c.trials as f64;
        out.csv("pipeline-localize", &rows)?;
    }
    out.json("pipeline", &r)?;
    Ok(Outcome { summary: json!({ "l": r.l, "vacuous": r.vacuous, "sup_threshold": r.sup_threshold }), passed })
}

/// Runs the pilots and returns the constants; the caller decides where the
/// file goes.
pub fn calibrate_cmd(cfg: &Config, out: &mut OutputSet) -> Result<(Outcome, CalibrationConstants), CliError> {
    let c = &cfg.calibrate;
    let global = GlobalConstants {
        pilot_n: c.pilot_n,
        pilot_trials: c.pilot_trials,
        calibration_seed: derive_seed(cfg.seed, label_tag("calibrate")),
        ..GlobalConstants::default()
    };
    let dists = c
        .families
        .iter()
        .map(|&k| deloc_core::ensembles::DistributionSpec::new(k, 1.0, c.field))
        .collect::<Result<Vec<_>, _>>()?;
    let constants = calibrate(&dists, global)?;
    out.text(deloc_core::calibration::CONSTANTS_FILE, &constants.to_toml_string()?)?;
    Ok((
        Outcome { summary: json!({ "families": constants.families.keys().collect::<Vec<_>>() }), passed: true },
        constants,
    ))
}
