//! Monte Carlo harness for eigenvector delocalization: the sup-norm scan,
//! approximate-eigenvector residuals, the localization event and an
//! adversarial search for witnesses of it, the coefficient-balancing oracle,
//! the balancing-event frequency, the spectral-parameter net and the
//! end-to-end pipeline.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationConstants;
use crate::ensembles::{sample_matrix_with, DistributionSpec};
use crate::linalg::{self, is_real};
use crate::rng::{derive_seed, label_tag, stream_rng, trial_rng};
use crate::stats::{wilson_interval, Quantiles, WilsonInterval, Z95};
use crate::test_projection::{balancing_event_check, build_test_projection, TestProjectionInput};
use crate::{CMatrix, CVector, Error, Result};

/// Pair count above which the balancing oracle samples instead of enumerating.
pub const EXACT_PAIR_BUDGET: u128 = 10_000_000;
/// Samples drawn when the oracle falls back from exact mode.
pub const DEFAULT_ORACLE_SAMPLES: usize = 1_000_000;

fn sup_norm(v: &CVector) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// `sqrt(n) ||v||_inf / ||v||_2`; at least 1 for every nonzero `v`.
pub fn sup_norm_statistic(v: &CVector) -> f64 {
    (v.len() as f64).sqrt() * sup_norm(v) / v.norm()
}

/// Closed-form least-squares spectral parameter for `v` and the relative
/// residual it achieves: `z = <Gv, v> / <v, v>`, `||Gv - zv|| / ||v||`.
pub fn approx_eigen_residual(g: &CMatrix, v: &CVector) -> Result<(Complex64, f64)> {
    if g.ncols() != v.len() || g.nrows() != v.len() {
        return Err(Error::DimensionMismatch { expected: g.ncols(), got: v.len() });
    }
    let vv = v.norm_squared();
    if vv == 0.0 {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    let gv = linalg::matvec(g, v);
    let z = v.dotc(&gv) / vv;
    let r = gv - v * z;
    Ok((z, r.norm() / vv.sqrt()))
}

/// Calibrated envelope of the main bound on the sup-norm statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c_main: f64,
    pub t_exponent: f64,
    pub log_exponent: f64,
}

impl Envelope {
    pub fn from_constants(c: &CalibrationConstants, family: &str) -> Result<Envelope> {
        Ok(Envelope {
            c_main: c.family(family)?.c_main,
            t_exponent: c.global.t_exponent,
            log_exponent: c.global.log_exponent,
        })
    }

    /// Bound on `sqrt(n) ||v||_inf` for unit `v`: `C (t (s+1))^a ln^b n`.
    pub fn statistic_bound(&self, n: usize, t: f64, s: usize) -> f64 {
        self.c_main * (t * (s + 1) as f64).powf(self.t_exponent) * (n as f64).ln().powf(self.log_exponent)
    }

    /// The same bound on `||v||_inf` itself.
    pub fn sup_norm_bound(&self, n: usize, t: f64, s: usize) -> f64 {
        self.statistic_bound(n, t, s) / (n as f64).sqrt()
    }
}

/// `ceil(ln^2 n)`, the default number of designated columns.
pub fn auto_l(n: usize) -> usize {
    let ln = (n as f64).ln();
    (ln * ln - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelocScanSpec {
    pub n_list: Vec<usize>,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub t: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelocTrial {
    pub trial: usize,
    /// Max over accepted eigenpairs of the sup-norm statistic.
    pub statistic: f64,
    /// Eigenpairs rejected by the residual check.
    pub eigen_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelocSeries {
    pub n: usize,
    pub trials: Vec<DelocTrial>,
    pub quantiles: Quantiles,
    pub envelope: f64,
    pub violations: usize,
    /// Median statistic over `sqrt(ln n)`.
    pub median_over_sqrt_log: f64,
}

impl DelocSeries {
    pub fn statistics(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.statistic).collect()
    }

    pub fn eigen_failures(&self) -> usize {
        self.trials.iter().map(|t| t.eigen_failures).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelocalizationReport {
    pub t: f64,
    pub envelope: Envelope,
    pub series: Vec<DelocSeries>,
}

impl DelocalizationReport {
    /// Largest over smallest `median / sqrt(ln n)` across the scan.
    pub fn scaling_spread(&self) -> f64 {
        let r: Vec<f64> = self.series.iter().map(|s| s.median_over_sqrt_log).collect();
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Generator for trial `trial` at size `n` of a scan keyed by `seed`.
fn sized_trial_rng(seed: u64, n: usize, trial: usize) -> crate::rng::TrialRng {
    trial_rng(derive_seed(seed, n as u64), trial as u64)
}

/// Sup-norm statistic of one sampled matrix.
pub fn deloc_trial(g: &CMatrix) -> Result<(f64, usize)> {
    let eig = linalg::eigenpairs(g)?;
    if eig.pairs.is_empty() {
        return Err(Error::NoConvergence);
    }
    let stat = eig.pairs.iter().map(|p| sup_norm_statistic(&p.vector)).fold(0.0, f64::max);
    Ok((stat, eig.failures.len()))
}

pub fn eigenvector_deloc_scan(spec: &DelocScanSpec, envelope: &Envelope) -> Result<DelocalizationReport> {
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    spec.dist.validate()?;
    let mut series = Vec::with_capacity(spec.n_list.len());
    for &n in &spec.n_list {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n = {n} is too small")));
        }
        let trials = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = sized_trial_rng(spec.seed, n, t);
                let g = sample_matrix_with(n, n, &spec.dist, &mut rng);
                let (statistic, eigen_failures) = deloc_trial(&g)?;
                Ok(DelocTrial { trial: t, statistic, eigen_failures })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats: Vec<f64> = trials.iter().map(|t| t.statistic).collect();
        let quantiles = Quantiles::of(&stats);
        let bound = envelope.statistic_bound(n, spec.t, 0);
        let violations = stats.iter().filter(|&&s| s > bound).count();
        series.push(DelocSeries {
            n,
            median_over_sqrt_log: quantiles.median / (n as f64).ln().sqrt(),
            trials,
            quantiles,
            envelope: bound,
            violations,
        });
    }
    Ok(DelocalizationReport { t: spec.t, envelope: *envelope, series })
}

/// Membership of unit `v` in the localization event for `A = G - zI`:
/// `||v||_inf > W sqrt(l/n)` and `||Av|| <= w / sqrt(n)`.
pub fn localization_event_check(g: &CMatrix, z: Complex64, big_w: f64, small_w: f64, l: usize, v: &CVector) -> bool {
    let n = v.len() as f64;
    if sup_norm(v) <= big_w * (l as f64 / n).sqrt() {
        return false;
    }
    let r = linalg::matvec(g, v) - v * z;
    r.norm() <= small_w / n.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    pub rounds: usize,
    pub iterations: usize,
    pub starts: usize,
    /// Penalty weight of the first round; `||G||_F^2 / n` when unset.
    pub initial_penalty: Option<f64>,
    /// Relative objective change below which a round stops early.
    pub tolerance: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { rounds: 8, iterations: 200, starts: 16, initial_penalty: None, tolerance: 1e-10 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.iterations == 0 || self.starts == 0 {
            return Err(Error::InvalidArgument("rounds, iterations and starts must be positive".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument("tolerance must be finite and nonnegative".into()));
        }
        if let Some(p) = self.initial_penalty {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument("initial penalty must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    Eigenvector,
    Coordinate,
    SparseBump,
    MinorEigenvector,
    NetSingularVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub kind: StartKind,
    pub iterations: usize,
    pub residual: f64,
    pub sup_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSearchResult {
    /// Best feasible unit vector; `None` when the event is vacuous.
    pub vector: Option<CVector>,
    pub sup_norm: f64,
    /// `min_z ||(G - zI) v||`.
    pub residual: f64,
    pub z: Complex64,
    /// `W sqrt(l/n)`.
    pub sup_threshold: f64,
    /// `w / sqrt(n)`.
    pub residual_cap: f64,
    pub witness: bool,
    /// No unit vector can exceed the sup-norm threshold.
    pub vacuous: bool,
    pub traces: Vec<StartTrace>,
}

/// `G` split into real and imaginary parts for fast products with complex
/// vectors.
struct SplitOperator {
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
}

impl SplitOperator {
    fn new(g: &CMatrix) -> Self {
        SplitOperator { re: linalg::real_part(g), im: if is_real(g) { None } else { Some(linalg::imag_part(g)) } }
    }

    fn split(v: &CVector) -> (DVector<f64>, DVector<f64>) {
        (v.map(|x| x.re), v.map(|x| x.im))
    }

    fn join(re: DVector<f64>, im: DVector<f64>) -> CVector {
        CVector::from_fn(re.len(), |i, _| Complex64::new(re[i], im[i]))
    }

    fn apply(&self, v: &CVector) -> CVector {
        let (vr, vi) = Self::split(v);
        let mut re = &self.re * &vr;
        let mut im = &self.re * &vi;
        if let Some(gi) = &self.im {
            re -= gi * &vi;
            im += gi * &vr;
        }
        Self::join(re, im)
    }

    fn apply_adjoint(&self, v: &CVector) -> CVector {
        let (vr, vi) = Self::split(v);
        let mut re = self.re.tr_mul(&vr);
        let mut im = self.re.tr_mul(&vi);
        if let Some(gi) = &self.im {
            re += gi.tr_mul(&vi);
            im -= gi.tr_mul(&vr);
        }
        Self::join(re, im)
    }
}

/// Penalized objective at unit `v`.
struct Eval {
    f: f64,
    /// Riemannian gradient with respect to `conj(v)`.
    grad: CVector,
}

fn argmax_abs(v: &CVector) -> usize {
    let mut best = 0;
    let mut bv = -1.0;
    for (i, x) in v.iter().enumerate() {
        let a = x.norm();
        if a > bv {
            bv = a;
            best = i;
        }
    }
    best
}

fn evaluate(op: &SplitOperator, v: &CVector, tau: f64, mu: f64, with_grad: bool) -> Eval {
    let gv = op.apply(v);
    let z = v.dotc(&gv);
    let r = gv - v * z;
    let rr = r.norm_squared();
    let j = argmax_abs(v);
    let gap = (tau - v[j].norm()).max(0.0);
    let f = rr + mu * gap * gap;
    if !with_grad {
        return Eval { f, grad: CVector::zeros(0) };
    }
    let mut grad = op.apply_adjoint(&r) - r * z.conj();
    if gap > 0.0 && v[j].norm() > 0.0 {
        grad[j] -= v[j] / v[j].norm() * (mu * gap);
    }
    let radial = v.dotc(&grad).re;
    grad -= v * Complex64::new(radial, 0.0);
    Eval { f, grad }
}

fn normalized(v: CVector) -> CVector {
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Moves unit `v` onto `||v||_inf > tau` by rescaling its largest coordinate
/// and shrinking the rest.
fn repair(v: &CVector, tau: f64) -> CVector {
    let j = argmax_abs(v);
    let a = v[j].norm();
    if a > tau {
        return v.clone();
    }
    let target = (tau + 1e-9 * tau.max(1e-6)).min(1.0);
    let phase = if a > 0.0 { v[j] / a } else { Complex64::new(1.0, 0.0) };
    let rest = (v.norm_squared() - a * a).max(0.0).sqrt();
    let mut out = v.clone();
    if rest > 0.0 {
        let scale = (1.0 - target * target).max(0.0).sqrt() / rest;
        out *= Complex64::new(scale, 0.0);
    }
    out[j] = phase * target;
    normalized(out)
}

/// Penalty-continuation gradient descent on the sphere from `start`.
fn descend(op: &SplitOperator, start: CVector, tau: f64, mu0: f64, params: &SearchParams) -> (CVector, usize) {
    let mut v = normalized(start);
    let mut mu = mu0;
    let mut total = 0;
    let mut step = 0.2 / mu0;
    for _ in 0..params.rounds {
        let mut cur = evaluate(op, &v, tau, mu, true);
        let mut prev: Option<(CVector, CVector)> = None;
        let mut quiet = 0;
        for _ in 0..params.iterations {
            total += 1;
            if let Some((pv, pg)) = &prev {
                let s = &v - pv;
                let y = &cur.grad - pg;
                let sy = s.dotc(&y).re;
                if sy > 0.0 {
                    step = s.norm_squared() / sy;
                }
            }
            let gnorm = cur.grad.norm();
            if gnorm <= 1e-14 {
                break;
            }
            // Armijo backtracking from the Barzilai-Borwein step.
            let mut accepted = None;
            let mut eta = step;
            for _ in 0..30 {
                let cand = normalized(&v - &cur.grad * Complex64::new(eta, 0.0));
                let e = evaluate(op, &cand, tau, mu, false);
                if e.f <= cur.f - 1e-4 * eta * gnorm * gnorm {
                    accepted = Some(cand);
                    break;
                }
                eta *= 0.5;
            }
            let Some(cand) = accepted else { break };
            step = eta;
            let next = evaluate(op, &cand, tau, mu, true);
            let change = (cur.f - next.f).abs() / cur.f.max(1e-300);
            prev = Some((std::mem::replace(&mut v, cand), std::mem::replace(&mut cur.grad, next.grad.clone())));
            cur = next;
            if change <= params.tolerance {
                quiet += 1;
                if quiet >= 5 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        mu *= 2.0;
    }
    (v, total)
}

fn top_indices(v: &CVector, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].norm().total_cmp(&v[a].norm()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn basis_vector(n: usize, j: usize) -> CVector {
    let mut e = CVector::zeros(n);
    e[j] = Complex64::new(1.0, 0.0);
    e
}

/// Eigenvector of the principal minor on `idx` with the largest sup norm,
/// padded with zeros.
fn minor_start(g: &CMatrix, idx: &[usize]) -> Option<CVector> {
    let m = CMatrix::from_fn(idx.len(), idx.len(), |i, j| g[(idx[i], idx[j])]);
    let eig = linalg::eigenpairs(&m).ok()?;
    let best = eig
        .pairs
        .iter()
        .chain(eig.failures.iter())
        .max_by(|a, b| sup_norm(&a.vector).total_cmp(&sup_norm(&b.vector)))?;
    let mut v = CVector::zeros(g.nrows());
    for (k, &i) in idx.iter().enumerate() {
        v[i] = best.vector[k];
    }
    Some(v)
}

/// Right singular vector of `G - zI` for its smallest singular value.
fn net_start(g: &CMatrix, z: Complex64) -> Option<CVector> {
    let n = g.nrows();
    let a = g - CMatrix::identity(n, n) * z;
    let s = linalg::svd(&a).ok()?;
    let k = s.singular_values.len().checked_sub(1)?;
    Some(s.right_vectors.column(k).into_owned())
}

/// Multi-start list, interleaved by kind so truncation keeps variety.
fn starting_points(g: &CMatrix, l: usize, net: &[Complex64], budget: usize) -> Vec<(StartKind, CVector)> {
    let n = g.nrows();
    let mut eig: Vec<(Complex64, CVector)> = match linalg::eigenpairs(g) {
        Ok(e) => e.pairs.into_iter().chain(e.failures).map(|p| (p.value, p.vector)).collect(),
        Err(_) => Vec::new(),
    };
    eig.sort_by(|a, b| sup_norm(&b.1).total_cmp(&sup_norm(&a.1)));

    let mut groups: Vec<Vec<(StartKind, CVector)>> = vec![Vec::new(); 5];
    for (_, v) in eig.iter().take(5) {
        groups[0].push((StartKind::Eigenvector, v.clone()));
    }
    // Coordinates whose columns are closest to being eigenvector columns.
    let mut col_res: Vec<(usize, f64)> = (0..n)
        .map(|j| {
            let c = g.column(j);
            (j, (c.norm_squared() - c[j].norm_sqr()).max(0.0))
        })
        .collect();
    col_res.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for &(j, _) in col_res.iter().take(4) {
        groups[1].push((StartKind::Coordinate, basis_vector(n, j)));
    }
    if let Some((_, top)) = eig.first() {
        for k in [2usize, 4, 8] {
            if k >= n {
                break;
            }
            let mut v = CVector::zeros(n);
            for i in top_indices(top, k) {
                v[i] = top[i];
            }
            groups[2].push((StartKind::SparseBump, v));
        }
    }
    let m = l.clamp(2, n);
    let leading: Vec<usize> = (0..m).collect();
    if let Some(v) = minor_start(g, &leading) {
        groups[3].push((StartKind::MinorEigenvector, v));
    }
    if let Some((_, top)) = eig.first() {
        let mut idx = top_indices(top, m);
        idx.sort_unstable();
        if let Some(v) = minor_start(g, &idx) {
            groups[3].push((StartKind::MinorEigenvector, v));
        }
    }
    if !net.is_empty() {
        for (value, _) in eig.iter().take(2) {
            let nearest = net
                .iter()
                .copied()
                .min_by(|a, b| (a - value).norm().total_cmp(&(b - value).norm()))
                .expect("nonempty net");
            if let Some(v) = net_start(g, nearest) {
                groups[4].push((StartKind::NetSingularVector, v));
            }
        }
    }
    if groups.iter().all(|g| g.is_empty()) {
        groups[1].push((StartKind::Coordinate, basis_vector(n, 0)));
    }

    let mut out = Vec::new();
    let mut round = 0;
    while out.len() < budget {
        let mut any = false;
        for grp in &groups {
            if let Some(s) = grp.get(round) {
                any = true;
                if out.len() < budget {
                    out.push(s.clone());
                }
            }
        }
        if !any {
            break;
        }
        round += 1;
    }
    out.retain(|(_, v)| v.norm() > 0.0 && v.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
    out
}

/// Heuristic search for a unit vector in the localization event of some
/// `A = G - zI`: minimizes the residual under a hinge penalty keeping the sup
/// norm above `W sqrt(l/n)`, from several starts. Finding nothing is not a
/// certificate that no witness exists.
pub fn localization_search(
    g: &CMatrix,
    big_w: f64,
    small_w: f64,
    l: usize,
    net: &[Complex64],
    params: &SearchParams,
) -> Result<LocalizationSearchResult> {
    params.validate()?;
    linalg::check_finite(g)?;
    let n = g.nrows();
    if g.ncols() != n || n == 0 {
        return Err(Error::NotSquare { rows: g.nrows(), cols: g.ncols() });
    }
    let tau = big_w * (l as f64 / n as f64).sqrt();
    let cap = small_w / (n as f64).sqrt();
    if tau >= 1.0 {
        return Ok(LocalizationSearchResult {
            vector: None,
            sup_norm: f64::NAN,
            residual: f64::NAN,
            z: Complex64::new(f64::NAN, f64::NAN),
            sup_threshold: tau,
            residual_cap: cap,
            witness: false,
            vacuous: true,
            traces: Vec::new(),
        });
    }
    let op = SplitOperator::new(g);
    let mu0 =
        params.initial_penalty.unwrap_or_else(|| (g.iter().map(|x| x.norm_sqr()).sum::<f64>() / n as f64).max(1.0));

    let mut best: Option<(CVector, Complex64, f64)> = None;
    let mut traces = Vec::new();
    for (kind, start) in starting_points(g, l, net, params.starts) {
        let (v, iterations) = descend(&op, start, tau, mu0, params);
        let v = repair(&v, tau);
        let (z, residual) = approx_eigen_residual(g, &v)?;
        let s = sup_norm(&v);
        traces.push(StartTrace { kind, iterations, residual, sup_norm: s });
        if s > tau && best.as_ref().is_none_or(|b| residual < b.2) {
            best = Some((v, z, residual));
        }
    }
    let (v, z, residual) = best.ok_or(Error::NoConvergence)?;
    Ok(LocalizationSearchResult {
        witness: localization_event_check(g, z, big_w, small_w, l, &v),
        sup_norm: sup_norm(&v),
        vector: Some(v),
        residual,
        z,
        sup_threshold: tau,
        residual_cap: cap,
        vacuous: false,
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum BalancingMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancingOracleResult {
    pub probability: f64,
    /// Mode actually used; exact requests over budget are sampled.
    pub mode: BalancingMode,
    pub pairs: u128,
    /// `probability >= 1/(2n)`.
    pub meets_bound: bool,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Advances `c` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Probability over uniform `(j0, J0)`, `j0` a coordinate and `J0` an
/// `(l-1)`-subset of the others, that `|v_j0| = ||v||_inf` and
/// `sum_{J0} |v_j|^2 <= 2l/n` for the normalized `v`.
pub fn coefficient_balancing_oracle(v: &CVector, l: usize, mode: BalancingMode) -> Result<BalancingOracleResult> {
    let n = v.len();
    if l == 0 || l > n {
        return Err(Error::OutOfRange { index: l, lo: 1, hi: n });
    }
    let norm = v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument("vector must be nonzero and finite".into()));
    }
    let sq: Vec<f64> = v.iter().map(|x| (x / norm).norm_sqr()).collect();
    let abs: Vec<f64> = v.iter().map(|x| (x / norm).norm()).collect();
    let max = abs.iter().copied().fold(0.0, f64::max);
    let cap = 2.0 * l as f64 / n as f64;
    let total = (n as u128).saturating_mul(binomial(n - 1, l - 1));

    let mode = match mode {
        BalancingMode::Exact if total > EXACT_PAIR_BUDGET => {
            BalancingMode::Sampled { samples: DEFAULT_ORACLE_SAMPLES, seed: label_tag("balancing-oracle") }
        }
        m => m,
    };
    let (hits, pairs) = match mode {
        BalancingMode::Exact => {
            let mut hits: u128 = 0;
            for j0 in 0..n {
                if abs[j0] != max {
                    continue;
                }
                let others: Vec<usize> = (0..n).filter(|&i| i != j0).collect();
                let mut c: Vec<usize> = (0..l - 1).collect();
                loop {
                    let s: f64 = c.iter().map(|&i| sq[others[i]]).sum();
                    if s <= cap {
                        hits += 1;
                    }
                    if c.is_empty() || !next_combination(&mut c, n - 1) {
                        break;
                    }
                }
            }
            (hits, total)
        }
        BalancingMode::Sampled { samples, seed } => {
            if samples == 0 {
                return Err(Error::InvalidArgument("samples must be positive".into()));
            }
            let mut rng = stream_rng(seed, 0);
            let mut hits: u128 = 0;
            for _ in 0..samples {
                let j0 = rng.random_range(0..n);
                if abs[j0] != max {
                    continue;
                }
                let s: f64 = rand::seq::index::sample(&mut rng, n - 1, l - 1)
                    .iter()
                    .map(|i| sq[if i >= j0 { i + 1 } else { i }])
                    .sum();
                if s <= cap {
                    hits += 1;
                }
            }
            (hits, samples as u128)
        }
    };
    let probability = hits as f64 / pairs as f64;
    Ok(BalancingOracleResult { probability, mode, pairs, meets_bound: probability >= 1.0 / (2.0 * n as f64) })
}

/// `alpha = alpha_const / (l ln^{3/2} n)`.
pub fn balancing_alpha(alpha_const: f64, l: usize, n: usize) -> f64 {
    alpha_const / (l as f64 * (n as f64).ln().powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingMcSpec {
    pub n: usize,
    pub l: usize,
    pub z: Complex64,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub kappa: f64,
    pub c_window: f64,
    /// Spectral parameters must satisfy `|z| <= k1 sqrt(n)`.
    pub k1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingTrial {
    pub trial: usize,
    pub holds: bool,
    pub norm_j0: f64,
    pub norm_rest: f64,
    /// Construction error, if the projection could not be built.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingMcReport {
    pub n: usize,
    pub l: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub trials: Vec<BalancingTrial>,
    pub successes: usize,
    pub errors: usize,
    /// Frequency over all trials; construction errors count as failures.
    pub wilson: WilsonInterval,
    /// `1 - 1/(2n)`.
    pub target: f64,
}

impl BalancingMcReport {
    pub fn frequency(&self) -> f64 {
        self.wilson.estimate
    }
}

pub fn balancing_event_mc(spec: &BalancingMcSpec) -> Result<BalancingMcReport> {
    if spec.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if spec.l == 0 || 4 * spec.l > spec.n {
        return Err(Error::OutOfRange { index: spec.l, lo: 1, hi: spec.n / 4 });
    }
    if spec.z.norm() > spec.k1 * (spec.n as f64).sqrt() * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("|z| = {} exceeds {} sqrt(n)", spec.z.norm(), spec.k1)));
    }
    spec.dist.validate()?;
    let n = spec.n;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(spec.seed, t as u64);
            let g = sample_matrix_with(n, n, &spec.dist, &mut rng);
            let a = g - CMatrix::identity(n, n) * spec.z;
            let outcome = build_test_projection(&TestProjectionInput::leading(a.clone(), spec.l), spec.c_window)
                .and_then(|tp| balancing_event_check(&a, &tp, spec.alpha, spec.kappa));
            match outcome {
                Ok(c) => {
                    BalancingTrial { trial: t, holds: c.holds, norm_j0: c.norm_j0, norm_rest: c.norm_rest, error: None }
                }
                Err(e) => BalancingTrial {
                    trial: t,
                    holds: false,
                    norm_j0: f64::NAN,
                    norm_rest: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect::<Vec<_>>();
    let successes = trials.iter().filter(|t| t.holds).count();
    let errors = trials.iter().filter(|t| t.error.is_some()).count();
    Ok(BalancingMcReport {
        n,
        l: spec.l,
        alpha: spec.alpha,
        kappa: spec.kappa,
        wilson: wilson_interval(successes, spec.trials, Z95),
        successes,
        errors,
        trials,
        target: 1.0 - 1.0 / (2.0 * n as f64),
    })
}

/// Square grid of pitch `spacing / sqrt(2)` intersected with the closed disc
/// of radius `radius`; every point of the disc lies within `spacing` of the
/// grid. A disc smaller than `spacing` is covered by the origin alone.
pub fn disc_net(radius: f64, spacing: f64) -> Result<Vec<Complex64>> {
    if !(radius > 0.0 && spacing > 0.0 && radius.is_finite() && spacing.is_finite()) {
        return Err(Error::InvalidArgument("radius and spacing must be positive".into()));
    }
    if radius < spacing {
        return Ok(vec![Complex64::new(0.0, 0.0)]);
    }
    let pitch = spacing / std::f64::consts::SQRT_2;
    let k = (radius / pitch).floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for i in -k..=k {
        let x = i as f64 * pitch;
        for j in -k..=k {
            let y = j as f64 * pitch;
            if x * x + y * y <= r2 {
                out.push(Complex64::new(x, y));
            }
        }
    }
    Ok(out)
}

/// `ceil((2 radius / pitch + 1)^2)`, the grid-count bound for [`disc_net`].
pub fn disc_net_size_bound(radius: f64, spacing: f64) -> usize {
    let pitch = spacing / std::f64::consts::SQRT_2;
    (2.0 * radius / pitch + 1.0).powi(2).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMcSpec {
    pub n: usize,
    pub l: usize,
    pub big_w: f64,
    pub small_w: f64,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
    pub params: SearchParams,
    pub net_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTrial {
    pub trial: usize,
    pub residual: f64,
    /// Residual recomputed from the returned vector by a separate route.
    pub recomputed_residual: f64,
    pub sup_norm: f64,
    pub witness: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationMcReport {
    pub n: usize,
    pub l: usize,
    pub sup_threshold: f64,
    pub residual_cap: f64,
    pub vacuous: bool,
    pub net_size: usize,
    pub trials: Vec<LocalizationTrial>,
    pub witnesses: usize,
}

/// `||Gv - zv||` for the chosen `z` minimized again over a grid around it;
/// agreement with the search's residual checks both the Rayleigh quotient
/// and the reported value.
fn recompute_residual(g: &CMatrix, v: &CVector) -> f64 {
    let gv = g * v;
    let z = v.dotc(&gv) / v.norm_squared();
    let mut best = f64::INFINITY;
    for dz in [
        Complex64::new(0.0, 0.0),
        Complex64::new(1e-6, 0.0),
        Complex64::new(-1e-6, 0.0),
        Complex64::new(0.0, 1e-6),
        Complex64::new(0.0, -1e-6),
    ] {
        let r = (&gv - v * (z + dz)).norm() / v.norm();
        best = best.min(r);
    }
    best
}

pub fn localization_mc(spec: &LocalizationMcSpec) -> Result<LocalizationMcReport> {
    spec.params.validate()?;
    spec.dist.validate()?;
    let n = spec.n;
    let tau = spec.big_w * (spec.l as f64 / n as f64).sqrt();
    let cap = spec.small_w / (n as f64).sqrt();
    if tau >= 1.0 {
        return Ok(LocalizationMcReport {
            n,
            l: spec.l,
            sup_threshold: tau,
            residual_cap: cap,
            vacuous: true,
            net_size: 0,
            trials: Vec::new(),
            witnesses: 0,
        });
    }
    let net = disc_net(spec.net_radius, 1.0 / (n as f64).sqrt())?;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(spec.seed, t as u64);
            let g = sample_matrix_with(n, n, &spec.dist, &mut rng);
            let res = localization_search(&g, spec.big_w, spec.small_w, spec.l, &net, &spec.params)?;
            let v = res.vector.as_ref().expect("non-vacuous search returns a vector");
            Ok(LocalizationTrial {
                trial: t,
                residual: res.residual,
                recomputed_residual: recompute_residual(&g, v),
                sup_norm: res.sup_norm,
                witness: res.witness,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let witnesses = trials.iter().filter(|t| t.witness).count();
    Ok(LocalizationMcReport {
        n,
        l: spec.l,
        sup_threshold: tau,
        residual_cap: cap,
        vacuous: false,
        net_size: net.len(),
        trials,
        witnesses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub n: usize,
    pub t: f64,
    /// Residual budget `w = s + 1`.
    pub s: usize,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
    pub params: SearchParams,
}

/// `l = ceil(l_const t (s+1) ln^2 n)` clipped to `[s+2, n/4]`.
pub fn pipeline_l(n: usize, t: f64, s: usize, l_const: f64) -> Result<usize> {
    let lo = s + 2;
    let hi = n / 4;
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty range for l: [{lo}, {hi}] at n = {n}, s = {s}")));
    }
    let ln = (n as f64).ln();
    let raw = (l_const * t * (s + 1) as f64 * ln * ln - 1e-9).ceil();
    Ok((raw.max(lo as f64) as usize).min(hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub spec: PipelineSpec,
    pub l: usize,
    /// Sup-norm bound on unit approximate eigenvectors.
    pub sup_threshold: f64,
    pub big_w: f64,
    pub small_w: f64,
    pub vacuous: bool,
    pub deloc: Option<Box<DelocSeries>>,
    pub localization: Option<LocalizationMcReport>,
}

pub fn full_pipeline(spec: &PipelineSpec, constants: &CalibrationConstants) -> Result<PipelineReport> {
    if spec.trials == 0 || !(spec.t > 0.0 && spec.t.is_finite()) {
        return Err(Error::InvalidArgument("trials and t must be positive".into()));
    }
    spec.params.validate()?;
    spec.dist.validate()?;
    let family = spec.dist.family_key();
    let envelope = Envelope::from_constants(constants, &family)?;
    let l = pipeline_l(spec.n, spec.t, spec.s, constants.global.l_const)?;
    let tau = envelope.sup_norm_bound(spec.n, spec.t, spec.s);
    let big_w = tau * (spec.n as f64 / l as f64).sqrt();
    let small_w = (spec.s + 1) as f64;
    let mut report = PipelineReport {
        spec: spec.clone(),
        l,
        sup_threshold: tau,
        big_w,
        small_w,
        vacuous: tau >= 1.0,
        deloc: None,
        localization: None,
    };
    if report.vacuous {
        return Ok(report);
    }
    let scan = eigenvector_deloc_scan(
        &DelocScanSpec {
            n_list: vec![spec.n],
            dist: spec.dist,
            trials: spec.trials,
            t: spec.t,
            seed: derive_seed(spec.seed, label_tag("deloc-scan")),
        },
        &envelope,
    )?;
    report.deloc = scan.series.into_iter().next().map(Box::new);
    report.localization = Some(localization_mc(&LocalizationMcSpec {
        n: spec.n,
        l,
        big_w,
        small_w,
        dist: spec.dist,
        trials: spec.trials,
        seed: derive_seed(spec.seed, label_tag("localization")),
        params: spec.params,
        net_radius: 2.0 * constants.global.k1 * (spec.n as f64).sqrt(),
    })?);
    Ok(report)
}
