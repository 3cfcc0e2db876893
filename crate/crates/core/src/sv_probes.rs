//! Monte Carlo probes of singular-value, concentration and product-norm
//! estimates for random matrices with independent entries.
//!
//! Every probe returns per-trial statistics together with the threshold they
//! are compared against, so callers decide what violation rate to accept.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_matrix_with, DistributionSpec};
use crate::linalg::{self, coisometry_defect, negative_second_moment, singular_values};
use crate::rng::{stream_rng, trial_rng};
use crate::stats::{compensated_sum, Quantiles};
use crate::{CMatrix, CVector, Error, Result};

/// Per-trial statistics against a fixed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub samples: Vec<f64>,
    pub threshold: f64,
    /// Trials on the wrong side of `threshold`.
    pub violations: usize,
    pub quantiles: Quantiles,
}

impl ProbeStats {
    /// Violations are samples strictly below `threshold`.
    fn below(samples: Vec<f64>, threshold: f64) -> ProbeStats {
        let violations = samples.iter().filter(|&&x| x < threshold).count();
        Self::new(samples, threshold, violations)
    }

    fn new(samples: Vec<f64>, threshold: f64, violations: usize) -> ProbeStats {
        ProbeStats { quantiles: Quantiles::of(&samples), samples, threshold, violations }
    }

    pub fn trials(&self) -> usize {
        self.samples.len()
    }

    pub fn frequency(&self) -> f64 {
        self.violations as f64 / self.samples.len() as f64
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.samples.iter().copied()) / self.samples.len() as f64
    }
}

/// Fixed shift `D` added to the random matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shift {
    None,
    /// `scale` times the `N x n` matrix with ones on the main diagonal.
    PaddedIdentity {
        scale: f64,
    },
}

impl Shift {
    fn apply(&self, g: &mut CMatrix) {
        if let Shift::PaddedIdentity { scale } = *self {
            for i in 0..g.nrows().min(g.ncols()) {
                g[(i, i)] += Complex64::new(scale, 0.0);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectProbeSpec {
    pub rows: usize,
    pub cols: usize,
    pub shift: Shift,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
}

impl RectProbeSpec {
    fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        if self.trials < 1 || self.rows < 1 || self.cols < 1 {
            return Err(Error::InvalidArgument("rows, cols and trials must be positive".into()));
        }
        Ok(())
    }

    fn sample(&self, trial: usize) -> CMatrix {
        let mut rng = trial_rng(self.seed, trial as u64);
        let mut a = sample_matrix_with(self.rows, self.cols, &self.dist, &mut rng);
        self.shift.apply(&mut a);
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallestSvReport {
    /// `s_n(A) sqrt(n / (N - n))` per trial, thresholded at `c`.
    pub stats: ProbeStats,
    /// `s_n(A) / sqrt(n)` per trial.
    pub per_sqrt_n: Vec<f64>,
    /// Number of trials on which the negative second moment identity was
    /// checked (every tenth), and the largest relative disagreement.
    pub identity_checks: usize,
    pub identity_max_rel_error: f64,
}

/// Normalized smallest singular value of `A = D + G` for tall `N x n` shapes.
pub fn smallest_sv_probe(spec: &RectProbeSpec, c: f64) -> Result<SmallestSvReport> {
    spec.validate()?;
    let (big_n, n) = (spec.rows, spec.cols);
    if big_n <= n {
        return Err(Error::InvalidArgument(format!("need N > n, got N = {big_n}, n = {n}")));
    }
    let norm = (n as f64 / (big_n - n) as f64).sqrt();
    let rows: Vec<(f64, Option<f64>)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, Option<f64>)> {
            let a = spec.sample(t);
            let s = singular_values(&a)?;
            let smin = s[n - 1];
            let check = if t % 10 == 0 {
                let (spectral, geometric) = negative_second_moment(&a)?;
                Some((spectral - geometric).abs() / spectral)
            } else {
                None
            };
            Ok((smin, check))
        })
        .collect::<Result<_>>()?;
    let checks: Vec<f64> = rows.iter().filter_map(|r| r.1).collect();
    Ok(SmallestSvReport {
        stats: ProbeStats::below(rows.iter().map(|r| r.0 * norm).collect(), c),
        per_sqrt_n: rows.iter().map(|r| r.0 / (n as f64).sqrt()).collect(),
        identity_checks: checks.len(),
        identity_max_rel_error: checks.iter().copied().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateReport {
    /// `s_j(A) sqrt(j / (N - j))` per trial; when `N = j` the raw `s_j(A)`
    /// is reported and nothing is counted as a violation.
    pub stats: ProbeStats,
    /// Trials where `s_j(A) < s_j(A_0) - 1e-12 ||A||`, `A_0` the first `j`
    /// columns.
    pub prefix_failures: usize,
}

/// `s_j(A)` for an `N x M` matrix, compared with its first `j` columns.
pub fn intermediate_sv_probe(spec: &RectProbeSpec, index: usize, c: f64) -> Result<IntermediateReport> {
    spec.validate()?;
    let (big_n, big_m) = (spec.rows, spec.cols);
    if index < 1 || index > big_n.min(big_m) {
        return Err(Error::OutOfRange { index, lo: 1, hi: big_n.min(big_m) });
    }
    let rows: Vec<(f64, bool)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| -> Result<(f64, bool)> {
            let a = spec.sample(t);
            let s_full = singular_values(&a)?;
            let s_prefix = singular_values(&a.columns(0, index).into_owned())?;
            let ok = s_full[index - 1] >= s_prefix[index - 1] - 1e-12 * s_full[0];
            Ok((s_full[index - 1], ok))
        })
        .collect::<Result<_>>()?;
    let prefix_failures = rows.iter().filter(|r| !r.1).count();
    let stats = if big_n > index {
        let norm = (index as f64 / (big_n - index) as f64).sqrt();
        ProbeStats::below(rows.iter().map(|r| r.0 * norm).collect(), c)
    } else {
        ProbeStats::new(rows.iter().map(|r| r.0).collect(), c, 0)
    };
    Ok(IntermediateReport { stats, prefix_failures })
}

/// How to construct the `m x n` coisometry `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoisometryKind {
    /// `[I_m | 0]`.
    Coordinate,
    /// Haar-random orthonormal rows.
    Random { seed: u64 },
}

pub fn build_coisometry(m: usize, n: usize, kind: CoisometryKind) -> Result<CMatrix> {
    if m < 1 || m > n {
        return Err(Error::InvalidArgument(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    Ok(match kind {
        CoisometryKind::Coordinate => CMatrix::identity(m, n),
        CoisometryKind::Random { seed } => {
            linalg::random_orthonormal_columns(n, m, false, &mut stream_rng(seed, 0)).transpose()
        }
    })
}

fn check_coisometry(p: &CMatrix) -> Result<()> {
    let defect = coisometry_defect(p);
    if defect > 1e-10 {
        return Err(Error::NotCoisometry(defect));
    }
    Ok(())
}

/// Samples `s_m(P G)` with an `n x k` random `G`; `stat` maps the sorted
/// singular values of `P G` to the statistic.
fn coisometry_trials(
    p: &CMatrix,
    k: usize,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    stat: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    dist.validate()?;
    let n = p.ncols();
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let g = sample_matrix_with(n, k, dist, &mut trial_rng(seed, t as u64));
            Ok(stat(&singular_values(&linalg::matmul(p, &g))?))
        })
        .collect()
}

/// `s_m(P G)` against `c (k - m) / k`, for a coisometry `P` (`m x n`) and
/// an `n x k` random `G`.
pub fn product_sv_probe(
    p: &CMatrix,
    k: usize,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    c: f64,
) -> Result<ProbeStats> {
    check_coisometry(p)?;
    let (m, n) = p.shape();
    if m > k.min(n) {
        return Err(Error::InvalidArgument(format!("need m <= min(k, n), got m = {m}, k = {k}, n = {n}")));
    }
    let samples = coisometry_trials(p, k, dist, trials, seed, |s| s[m - 1])?;
    Ok(ProbeStats::below(samples, c * (k - m) as f64 / k as f64))
}

/// `s_{m0}(T_0)` for `T_0` the first `m0` columns of `P G`, against
/// `c sqrt((m - m0) / m0)`.
pub fn fat_matrix_probe(
    p: &CMatrix,
    m0: usize,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    c: f64,
) -> Result<ProbeStats> {
    check_coisometry(p)?;
    let m = p.nrows();
    if m0 < 1 || m0 > m {
        return Err(Error::OutOfRange { index: m0, lo: 1, hi: m });
    }
    let samples = coisometry_trials(p, m0, dist, trials, seed, |s| s[m0 - 1])?;
    Ok(ProbeStats::below(samples, c * ((m - m0) as f64 / m0 as f64).sqrt()))
}

/// `s_m(P G) / sqrt(k)` against `c`, for `k >= tall_ratio * m`.
pub fn tall_matrix_probe(
    p: &CMatrix,
    k: usize,
    tall_ratio: f64,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    c: f64,
) -> Result<ProbeStats> {
    check_coisometry(p)?;
    let m = p.nrows();
    if (k as f64) < tall_ratio * m as f64 {
        return Err(Error::InvalidArgument(format!("need k >= {tall_ratio} m, got k = {k}, m = {m}")));
    }
    let root_k = (k as f64).sqrt();
    let samples = coisometry_trials(p, k, dist, trials, seed, |s| s[m - 1] / root_k)?;
    Ok(ProbeStats::below(samples, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    /// Empirical `P(| ||AX|| - M | > t)`.
    pub empirical: f64,
    /// `2 exp(-c t^2 / ||A||^2)`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub hs_norm: f64,
    pub op_norm: f64,
    /// Empirical `(E ||AX||^2)^{1/2}`.
    pub m_hat: f64,
    /// Standard error of `m_hat`, by the delta method.
    pub m_hat_se: f64,
    /// `m_hat / ||A||_HS`.
    pub k_hat: f64,
    pub tail: Vec<TailRow>,
}

/// Concentration of `||AX||` for a fixed `A` and random `X`.
pub fn concentration_probe(
    a: &CMatrix,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    t_grid: &[f64],
    c: f64,
) -> Result<ConcentrationReport> {
    dist.validate()?;
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let n = a.ncols();
    let norms: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = dist.sample_vector(n, &mut trial_rng(seed, t as u64));
            (a * x).norm()
        })
        .collect();
    let sq: Vec<f64> = norms.iter().map(|x| x * x).collect();
    let mean_sq = compensated_sum(sq.iter().copied()) / trials as f64;
    let m_hat = mean_sq.sqrt();
    let se_sq = crate::stats::standard_error(&sq);
    let m_hat_se = if m_hat > 0.0 { se_sq / (2.0 * m_hat) } else { 0.0 };
    let hs_norm = a.norm();
    let op_norm = linalg::operator_norm(a)?;
    let tail = t_grid
        .iter()
        .map(|&t| TailRow {
            t,
            empirical: norms.iter().filter(|&&x| (x - m_hat).abs() > t).count() as f64 / trials as f64,
            bound: if op_norm > 0.0 { 2.0 * (-c * t * t / (op_norm * op_norm)).exp() } else { 0.0 },
        })
        .collect();
    Ok(ConcentrationReport {
        hs_norm,
        op_norm,
        m_hat,
        m_hat_se,
        k_hat: if hs_norm > 0.0 { m_hat / hs_norm } else { f64::NAN },
        tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallReport {
    pub hits: usize,
    pub trials: usize,
    /// `(||A||_HS + ||y||) / 6`.
    pub radius: f64,
    /// `||A||_HS^2 / ||A||^2`, zero for `A = 0`.
    pub stable_rank: f64,
    /// `2 exp(-c * stable_rank)`.
    pub bound: f64,
}

impl SmallBallReport {
    pub fn frequency(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }
}

/// Frequency of `||AX - y|| < (||A||_HS + ||y||) / 6`.
pub fn small_ball_probe(
    a: &CMatrix,
    y: &CVector,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
    c: f64,
) -> Result<SmallBallReport> {
    dist.validate()?;
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: y.len() });
    }
    let n = a.ncols();
    let hs = a.norm();
    let radius = (hs + y.norm()) / 6.0;
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let x = dist.sample_vector(n, &mut trial_rng(seed, t as u64));
            (a * x - y).norm() < radius
        })
        .count();
    let op = linalg::operator_norm(a)?;
    let stable_rank = if op > 0.0 { hs * hs / (op * op) } else { 0.0 };
    Ok(SmallBallReport { hits, trials, radius, stable_rank, bound: 2.0 * (-c * stable_rank).exp() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductNormReport {
    /// `||B G||` per trial, thresholded at `C (s ||B||_HS + t sqrt(n) ||B||)`.
    pub stats: ProbeStats,
    pub stable_rank: f64,
    /// `2 exp(-s^2 r - t^2 n)`.
    pub budget: f64,
}

/// Operator norm of `B G` for fixed `B` (`m x N`) and random `G` (`N x n`).
#[allow(clippy::too_many_arguments)]
pub fn product_norm_probe(
    b: &CMatrix,
    dist: &DistributionSpec,
    n: usize,
    s: f64,
    t: f64,
    trials: usize,
    seed: u64,
    big_c: f64,
) -> Result<ProductNormReport> {
    dist.validate()?;
    let big_n = b.ncols();
    let op = linalg::operator_norm(b)?;
    let hs = b.norm();
    let threshold = big_c * (s * hs + t * (n as f64).sqrt() * op);
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|tr| {
            let g = sample_matrix_with(big_n, n, dist, &mut trial_rng(seed, tr as u64));
            linalg::operator_norm(&linalg::matmul(b, &g))
        })
        .collect::<Result<_>>()?;
    let violations = samples.iter().filter(|&&x| x > threshold).count();
    let stable_rank = if op > 0.0 { hs * hs / (op * op) } else { 0.0 };
    Ok(ProductNormReport {
        stats: ProbeStats::new(samples, threshold, violations),
        stable_rank,
        budget: 2.0 * (-s * s * stable_rank - t * t * n as f64).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn rect(rows: usize, cols: usize, trials: usize, seed: u64) -> RectProbeSpec {
        RectProbeSpec { rows, cols, shift: Shift::None, dist: DistributionSpec::gaussian(), trials, seed }
    }

    #[test]
    fn smallest_sv_rejects_square() {
        assert!(smallest_sv_probe(&rect(10, 10, 5, 0), 0.1).is_err());
    }

    #[test]
    fn smallest_sv_near_edge_prediction() {
        let n = 100;
        let r = smallest_sv_probe(&rect(2 * n, n, 100, 1), 0.0).unwrap();
        let mean = compensated_sum(r.per_sqrt_n.iter().copied()) / 100.0;
        let anchor = 2f64.sqrt() - 1.0;
        assert!((mean / anchor - 1.0).abs() < 0.25, "{mean}");
        assert_eq!(r.identity_checks, 10);
        assert!(r.identity_max_rel_error < 1e-8);
    }

    #[test]
    fn shifted_probe_reports_thresholds() {
        let spec = RectProbeSpec { shift: Shift::PaddedIdentity { scale: 10.0 }, ..rect(60, 30, 20, 2) };
        let r = smallest_sv_probe(&spec, 0.05).unwrap();
        assert_eq!(r.stats.trials(), 20);
        assert_eq!(r.stats.threshold, 0.05);
    }

    #[test]
    fn intermediate_square_full_index_is_equality() {
        let rep = intermediate_sv_probe(&rect(30, 30, 10, 3), 30, 0.1).unwrap();
        assert_eq!(rep.prefix_failures, 0);
        assert_eq!(rep.stats.violations, 0);
    }

    #[test]
    fn intermediate_prefix_inequality() {
        let rep = intermediate_sv_probe(&rect(120, 120, 20, 4), 100, 0.0).unwrap();
        assert_eq!(rep.prefix_failures, 0);
        assert!(intermediate_sv_probe(&rect(10, 12, 1, 0), 11, 0.0).is_err());
    }

    #[test]
    fn product_probe_scale_separation() {
        let p = build_coisometry(1, 30, CoisometryKind::Coordinate).unwrap();
        let r = product_sv_probe(&p, 40, &DistributionSpec::gaussian(), 50, 5, 1.0).unwrap();
        assert_eq!(r.violations, 0);
        assert!((r.threshold - 39.0 / 40.0).abs() < 1e-15);
        // k = m: vacuous threshold
        let p = build_coisometry(5, 10, CoisometryKind::Random { seed: 1 }).unwrap();
        let r = product_sv_probe(&p, 5, &DistributionSpec::gaussian(), 20, 5, 10.0).unwrap();
        assert_eq!(r.threshold, 0.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn product_probe_rejects_non_coisometry() {
        let p = CMatrix::identity(3, 6) * Complex64::new(2.0, 0.0);
        assert!(matches!(
            product_sv_probe(&p, 5, &DistributionSpec::gaussian(), 1, 0, 1.0),
            Err(Error::NotCoisometry(_))
        ));
    }

    #[test]
    fn fat_and_tall_edges() {
        let p = build_coisometry(20, 40, CoisometryKind::Coordinate).unwrap();
        let r = fat_matrix_probe(&p, 20, &DistributionSpec::gaussian(), 10, 1, 5.0).unwrap();
        assert_eq!(r.threshold, 0.0);
        assert!(tall_matrix_probe(&p, 50, 4.0, &DistributionSpec::gaussian(), 10, 1, 0.1).is_err());
        let r = tall_matrix_probe(&p, 800, 4.0, &DistributionSpec::gaussian(), 10, 1, 0.5).unwrap();
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn concentration_of_rank_one_and_identity() {
        let mut e = CMatrix::zeros(5, 5);
        e[(0, 0)] = Complex64::new(1.0, 0.0);
        let r = concentration_probe(&e, &DistributionSpec::rademacher(), 100, 1, &[0.5], 1.0).unwrap();
        assert!((r.m_hat - 1.0).abs() < 1e-12);
        let eye = CMatrix::identity(100, 100);
        let r = concentration_probe(&eye, &DistributionSpec::gaussian(), 10_000, 2, &[1.0, 2.0, 3.0], 0.5).unwrap();
        assert!((r.m_hat / 10.0 - 1.0).abs() < 0.02);
        assert!(r.m_hat >= r.hs_norm - 4.0 * r.m_hat_se);
        assert!(r.tail.windows(2).all(|w| w[1].empirical <= w[0].empirical));
    }

    #[test]
    fn small_ball_cases() {
        let eye = CMatrix::identity(100, 100);
        let r = small_ball_probe(&eye, &CVector::zeros(100), &DistributionSpec::gaussian(), 10_000, 3, 1.0).unwrap();
        // radius is 10/6, and P(chi^2_100 < (10/6)^2) is astronomically small
        let p = ChiSquared::new(100.0).unwrap().cdf(r.radius * r.radius);
        assert!(p < 1e-50);
        assert_eq!(r.hits, 0);
        let y = CVector::from_element(4, Complex64::new(1.0, 0.0));
        let r = small_ball_probe(&CMatrix::zeros(4, 4), &y, &DistributionSpec::gaussian(), 100, 3, 1.0).unwrap();
        assert_eq!(r.hits, 0);
        assert_eq!(r.stable_rank, 0.0);
    }

    #[test]
    fn product_norm_cases() {
        let b = CMatrix::identity(100, 100);
        let r = product_norm_probe(&b, &DistributionSpec::gaussian(), 100, 1.0, 1.0, 20, 4, 1.0).unwrap();
        // ||G|| ~ 2 sqrt(n) = 20 = 1 * (10 + 10)
        assert!(r.stats.quantiles.median > 18.0 && r.stats.quantiles.median < 21.0);
        let mut u = CMatrix::zeros(1, 50);
        u[(0, 0)] = Complex64::new(1.0, 0.0);
        let r = product_norm_probe(&u, &DistributionSpec::gaussian(), 64, 1.0, 1.0, 200, 5, 1.0).unwrap();
        // ||e_1^T G|| is a chi(64) variable, mean ~ sqrt(63.5)
        assert!((r.stats.mean() - 63.5f64.sqrt()).abs() < 0.2);
        let r =
            product_norm_probe(&CMatrix::zeros(3, 10), &DistributionSpec::gaussian(), 5, 1.0, 1.0, 10, 5, 1.0).unwrap();
        assert_eq!(r.stats.violations, 0);
        assert!(r.stats.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn probes_reproducible() {
        let a = smallest_sv_probe(&rect(30, 15, 12, 9), 0.1).unwrap();
        let b = smallest_sv_probe(&rect(30, 15, 12, 9), 0.1).unwrap();
        assert_eq!(a, b);
    }
}
