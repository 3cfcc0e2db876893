//! Distances between (transformed) random vectors and random subspaces.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_matrix_with, DistributionSpec};
use crate::linalg::{self, svd, Subspace};
use crate::rng::{stream_rng, trial_rng};
use crate::spectral_window::{tail_sums, DecaySequence};
use crate::stats::{compensated_sum, standard_error};
use crate::{CMatrix, CVector, Error, Result};

/// Relative size of the gaussian nudge applied when sampled vectors fail to
/// span a `k`-dimensional subspace.
const SPAN_PERTURBATION: f64 = 1e-8;

/// Named constructions of the fixed matrix `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DFamily {
    Identity,
    /// `diag(rate^i)`, `i = 1..n`.
    GeometricDecay {
        rate: f64,
    },
    /// `U diag(rate^i) V^T` with Haar-random orthogonal `U`, `V`.
    RotatedDecay {
        rate: f64,
        seed: u64,
    },
}

impl DFamily {
    pub fn label(&self) -> &'static str {
        match self {
            DFamily::Identity => "identity",
            DFamily::GeometricDecay { .. } => "geometric-decay",
            DFamily::RotatedDecay { .. } => "rotated-decay",
        }
    }

    pub fn build(&self, n: usize) -> CMatrix {
        match *self {
            DFamily::Identity => CMatrix::identity(n, n),
            DFamily::GeometricDecay { rate } => geometric_diagonal(n, rate),
            DFamily::RotatedDecay { rate, seed } => {
                let mut rng = stream_rng(seed, 0);
                let u = linalg::random_orthonormal_columns(n, n, false, &mut rng);
                let v = linalg::random_orthonormal_columns(n, n, false, &mut rng);
                let mut ud = u;
                for j in 0..n {
                    ud.column_mut(j).scale_mut(rate.powi(j as i32 + 1));
                }
                linalg::matmul(&ud, &v.transpose())
            }
        }
    }
}

fn geometric_diagonal(n: usize, rate: f64) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_fn(n, |i, _| Complex64::new(rate.powi(i as i32 + 1), 0.0)))
}

/// `d(X, span(X_1..X_k))` for independent random vectors in `C^n`. `X` is
/// drawn first, then `X_1..X_k`. If the `X_i` fail to span `k` dimensions
/// they receive a small gaussian perturbation.
pub fn isotropic_distance_trial<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    dist: &DistributionSpec,
    rng: &mut R,
) -> Result<f64> {
    if k >= n {
        return Err(Error::InvalidArgument(format!("need k < n, got k = {k}, n = {n}")));
    }
    let x = dist.sample_vector(n, rng);
    if k == 0 {
        return Ok(x.norm());
    }
    let mut cols = sample_matrix_with(n, k, dist, rng);
    let mut span = Subspace::from_spanning(&cols)?;
    if span.dim() < k {
        let noise = sample_matrix_with(n, k, &DistributionSpec::gaussian(), rng);
        cols += noise * Complex64::new(SPAN_PERTURBATION * cols.norm() / (n as f64).sqrt(), 0.0);
        span = Subspace::from_spanning(&cols)?;
    }
    span.distance(&x)
}

/// `d(DX, span(DX_1..DX_k))`. Dependent `DX_i` (for instance when the rank
/// of `D` is at most `k`) simply shrink the span.
pub fn anisotropic_distance_trial<R: Rng + ?Sized>(
    d: &CMatrix,
    k: usize,
    dist: &DistributionSpec,
    rng: &mut R,
) -> Result<f64> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::NotSquare { rows: n, cols: d.ncols() });
    }
    if k >= n {
        return Err(Error::InvalidArgument(format!("need k < n, got k = {k}, n = {n}")));
    }
    let x = dist.sample_vector(n, rng);
    let cols = sample_matrix_with(n, k, dist, rng);
    let dx = d * x;
    if k == 0 {
        return Ok(dx.norm());
    }
    let span = Subspace::from_spanning(&linalg::matmul(d, &cols))?;
    span.distance(&dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBounds {
    /// `c * S_{k1}`.
    pub lower: f64,
    /// `C * M * (S_{k0} + sqrt(k) s_{k0+1})`.
    pub upper: f64,
    /// `C k sqrt(k0) / (k - k0)`.
    pub m: f64,
}

fn check_chain(n: usize, k: usize, k0: usize, k1: usize) -> Result<()> {
    if !(k >= 1 && 2 * k0 >= k && k0 < k && k < k1 && k1 <= n) {
        return Err(Error::InvalidArgument(format!(
            "need k/2 <= k0 < k < k1 <= n, got k = {k}, k0 = {k0}, k1 = {k1}, n = {n}"
        )));
    }
    Ok(())
}

/// Evaluates the two distance bounds from the singular values of `D`.
pub fn theoretical_bounds(
    sv: &DecaySequence,
    k: usize,
    k0: usize,
    k1: usize,
    c: f64,
    big_c: f64,
) -> Result<DistanceBounds> {
    check_chain(sv.len(), k, k0, k1)?;
    let m = big_c * k as f64 * (k0 as f64).sqrt() / (k - k0) as f64;
    let lower = c * sv.tail(k1);
    let upper = big_c * m * (sv.tail(k0) + (k as f64).sqrt() * sv.value(k0 + 1));
    Ok(DistanceBounds { lower, upper, m })
}

/// `theoretical_bounds` for a matrix, via its singular values.
pub fn theoretical_bounds_for(
    d: &CMatrix,
    k: usize,
    k0: usize,
    k1: usize,
    c: f64,
    big_c: f64,
) -> Result<DistanceBounds> {
    let sv = tail_sums(&linalg::singular_values(d)?)?;
    theoretical_bounds(&sv, k, k0, k1, c, big_c)
}

/// `inf { ||DX - sum a_i DX_i|| : ||a||_2 <= cap }`.
///
/// The minimum-norm least-squares coefficients are used when they satisfy
/// the cap. Otherwise the minimizer lies on the sphere `||a|| = cap` and is
/// a ridge solution, whose ridge parameter is found by bisection on the
/// coefficient norm.
pub fn constrained_distance(d: &CMatrix, x: &CVector, xs: &CMatrix, cap: f64) -> Result<f64> {
    if !(cap >= 0.0) {
        return Err(Error::InvalidArgument(format!("cap must be nonnegative, got {cap}")));
    }
    let y = d * x;
    if cap == 0.0 || xs.ncols() == 0 {
        return Ok(y.norm());
    }
    let b = linalg::matmul(d, xs);
    let s = svd(&b)?;
    let top = s.singular_values[0];
    if top == 0.0 {
        return Ok(y.norm());
    }
    let proj = s.left_vectors.ad_mul(&y);
    let rank = s.rank(1e-12);
    let coeffs = |lambda: f64| -> CVector {
        let mut w = CVector::zeros(s.singular_values.len());
        for i in 0..rank {
            let sv = s.singular_values[i];
            w[i] = proj[i] * (sv / (sv * sv + lambda));
        }
        &s.right_vectors * w
    };
    let residual = |a: &CVector| (&y - &b * a).norm();
    let free = coeffs(0.0);
    if free.norm() <= cap {
        return Ok(residual(&free));
    }
    let mut hi = top * top;
    while coeffs(hi).norm() > cap {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let norm = coeffs(mid).norm();
        if norm > cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-10 * hi || (norm - cap).abs() <= 1e-10 * cap {
            break;
        }
    }
    Ok(residual(&coeffs(hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceExperimentSpec {
    pub n: usize,
    pub k: usize,
    pub k0: usize,
    pub k1: usize,
    pub d: DFamily,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
}

impl DistanceExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        check_chain(self.n, self.k, self.k0, self.k1)?;
        self.dist.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub samples: Vec<f64>,
    /// Distances with coefficients confined to the ball of radius `M`.
    pub constrained_samples: Vec<f64>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub m: f64,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub constrained_upper_violations: usize,
    /// `2 exp(-c (k1 - k))`.
    pub lower_budget: f64,
    /// `2 k exp(-c (k - k0))`.
    pub upper_budget: f64,
}

impl DistanceStats {
    pub fn lower_frequency(&self) -> f64 {
        self.lower_violations as f64 / self.samples.len() as f64
    }

    pub fn upper_frequency(&self) -> f64 {
        self.upper_violations as f64 / self.samples.len() as f64
    }
}

/// One anisotropic trial that returns both the distance and the
/// `cap`-constrained distance for the same draw.
fn paired_trial<R: Rng + ?Sized>(
    d: &CMatrix,
    k: usize,
    dist: &DistributionSpec,
    cap: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let n = d.nrows();
    let x = dist.sample_vector(n, rng);
    let cols = sample_matrix_with(n, k, dist, rng);
    let span = Subspace::from_spanning(&linalg::matmul(d, &cols))?;
    let free = span.distance(&(d * &x))?;
    let capped = constrained_distance(d, &x, &cols, cap)?;
    Ok((free, capped.max(free)))
}

/// Runs `spec.trials` anisotropic trials and counts violations of both
/// bounds at constants `(c, C)`.
pub fn tail_probability_estimate(spec: &DistanceExperimentSpec, c: f64, big_c: f64) -> Result<DistanceStats> {
    spec.validate()?;
    if spec.trials < 1 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let d = spec.d.build(spec.n);
    let bounds = theoretical_bounds_for(&d, spec.k, spec.k0, spec.k1, c, big_c)?;
    let pairs: Vec<(f64, f64)> = (0..spec.trials)
        .into_par_iter()
        .map(|t| paired_trial(&d, spec.k, &spec.dist, bounds.m, &mut trial_rng(spec.seed, t as u64)))
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let constrained_samples: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(DistanceStats {
        lower_violations: samples.iter().filter(|&&x| x <= bounds.lower).count(),
        upper_violations: samples.iter().filter(|&&x| x > bounds.upper).count(),
        constrained_upper_violations: constrained_samples.iter().filter(|&&x| x > bounds.upper).count(),
        lower_budget: 2.0 * (-c * (spec.k1 - spec.k) as f64).exp(),
        upper_budget: 2.0 * spec.k as f64 * (-c * (spec.k - spec.k0) as f64).exp(),
        lower_bound: bounds.lower,
        upper_bound: bounds.upper,
        m: bounds.m,
        samples,
        constrained_samples,
    })
}

/// Distances from isotropic trials with summary moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicStats {
    pub n: usize,
    pub k: usize,
    pub samples: Vec<f64>,
    pub mean_sq: f64,
    /// Standard error of `mean_sq`.
    pub mean_sq_se: f64,
    pub rms: f64,
}

pub fn isotropic_distance_stats(
    n: usize,
    k: usize,
    dist: &DistributionSpec,
    trials: usize,
    seed: u64,
) -> Result<IsotropicStats> {
    if trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| isotropic_distance_trial(n, k, dist, &mut trial_rng(seed, t as u64)))
        .collect::<Result<_>>()?;
    let sq: Vec<f64> = samples.iter().map(|d| d * d).collect();
    let mean_sq = compensated_sum(sq.iter().copied()) / trials as f64;
    Ok(IsotropicStats { n, k, mean_sq_se: standard_error(&sq), rms: mean_sq.sqrt(), mean_sq, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::EntryKind;
    use crate::stats::quantile;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn zero_dimensional_span_gives_norm() {
        let mut a = stream_rng(1, 0);
        let mut b = stream_rng(1, 0);
        let d = isotropic_distance_trial(10, 0, &DistributionSpec::gaussian(), &mut a).unwrap();
        let x = DistributionSpec::gaussian().sample_vector(10, &mut b);
        assert_eq!(d, x.norm());
    }

    #[test]
    fn gaussian_squared_distance_is_chi_square() {
        let st = isotropic_distance_stats(50, 20, &DistributionSpec::gaussian(), 2000, 5).unwrap();
        assert!((st.mean_sq - 30.0).abs() <= 4.0 * st.mean_sq_se, "{} +- {}", st.mean_sq, st.mean_sq_se);
        // chi-square(30) has variance 60
        assert!((st.mean_sq_se - (60.0f64 / 2000.0).sqrt()).abs() < 0.05);
    }

    #[test]
    fn degenerate_d_gives_zero_distance() {
        let mut rng = stream_rng(2, 0);
        let zero = CMatrix::zeros(8, 8);
        assert_eq!(anisotropic_distance_trial(&zero, 3, &DistributionSpec::gaussian(), &mut rng).unwrap(), 0.0);
        let low = CMatrix::from_diagonal(&CVector::from_fn(12, |i, _| c(if i < 3 { 1.0 + i as f64 } else { 0.0 })));
        for _ in 0..10 {
            // gaussian: the DX_i span the range of D almost surely
            let d = anisotropic_distance_trial(&low, 4, &DistributionSpec::gaussian(), &mut rng).unwrap();
            assert!(d <= 1e-8, "{d}");
        }
    }

    #[test]
    fn identity_d_matches_isotropic_quantiles() {
        let dist = DistributionSpec::gaussian();
        let eye = CMatrix::identity(30, 30);
        let iso: Vec<f64> =
            (0..2000).map(|t| isotropic_distance_trial(30, 10, &dist, &mut trial_rng(1, t)).unwrap()).collect();
        let ani: Vec<f64> =
            (0..2000).map(|t| anisotropic_distance_trial(&eye, 10, &dist, &mut trial_rng(2, t)).unwrap()).collect();
        // two-sample Kolmogorov-Smirnov at alpha = 0.001: D < 1.95 sqrt(2/2000)
        let mut all: Vec<f64> = iso.iter().chain(&ani).copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |v: &[f64], x: f64| v.iter().filter(|&&y| y <= x).count() as f64 / v.len() as f64;
        let ks = all.iter().map(|&x| (cdf(&iso, x) - cdf(&ani, x)).abs()).fold(0.0, f64::max);
        assert!(ks < 1.95 * (2.0f64 / 2000.0).sqrt(), "ks {ks}");
        for q in [0.1, 0.5, 0.9] {
            assert!((quantile(&iso, q) - quantile(&ani, q)).abs() < 0.2);
        }
    }

    #[test]
    fn bounds_for_identity() {
        let sv = tail_sums(&vec![1.0; 100]).unwrap();
        let b = theoretical_bounds(&sv, 20, 15, 30, 0.5, 2.0).unwrap();
        let m = 2.0 * 20.0 * 15f64.sqrt() / 5.0;
        assert!((b.m - m).abs() < 1e-12);
        assert!((b.lower - 0.5 * 70f64.sqrt()).abs() < 1e-12);
        assert!((b.upper - 2.0 * m * (85f64.sqrt() + 20f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn bounds_for_binary_decay_match_direct_sums() {
        let d = geometric_diagonal(40, 0.5);
        let b = theoretical_bounds_for(&d, 10, 6, 14, 1.0, 1.0).unwrap();
        let tail = |m: usize| (m + 1..=40).map(|i| 0.25f64.powi(i as i32)).sum::<f64>().sqrt();
        assert!((b.lower - tail(14)).abs() <= 1e-12 * tail(14));
        let m = 10.0 * 6f64.sqrt() / 4.0;
        let upper = m * (tail(6) + 10f64.sqrt() * 0.5f64.powi(7));
        assert!((b.upper - upper).abs() <= 1e-10 * upper);
    }

    #[test]
    fn m_grows_as_k0_approaches_k() {
        let sv = tail_sums(&vec![1.0; 60]).unwrap();
        let ms: Vec<f64> = (10..20).map(|k0| theoretical_bounds(&sv, 20, k0, 30, 1.0, 1.0).unwrap().m).collect();
        assert!(ms.windows(2).all(|w| w[1] > w[0]));
        assert!(theoretical_bounds(&sv, 20, 9, 30, 1.0, 1.0).is_err());
        assert!(theoretical_bounds(&sv, 20, 20, 30, 1.0, 1.0).is_err());
    }

    fn constrained_setup(seed: u64) -> (CMatrix, CVector, CMatrix) {
        let mut rng = stream_rng(seed, 0);
        let dist = DistributionSpec::gaussian();
        let d = DFamily::RotatedDecay { rate: 0.9, seed }.build(20);
        let x = dist.sample_vector(20, &mut rng);
        let xs = sample_matrix_with(20, 6, &dist, &mut rng);
        (d, x, xs)
    }

    #[test]
    fn constrained_distance_limits() {
        let (d, x, xs) = constrained_setup(3);
        assert_eq!(constrained_distance(&d, &x, &xs, 0.0).unwrap(), (&d * &x).norm());
        let free = Subspace::from_spanning(&(&d * &xs)).unwrap().distance(&(&d * &x)).unwrap();
        let big = constrained_distance(&d, &x, &xs, 1e12).unwrap();
        assert!((big - free).abs() <= 1e-8 * (&d * &x).norm());
        let inf = constrained_distance(&d, &x, &xs, f64::INFINITY).unwrap();
        assert!((inf - free).abs() <= 1e-8 * (&d * &x).norm());
    }

    #[test]
    fn constrained_distance_monotone_in_cap() {
        let (d, x, xs) = constrained_setup(4);
        let free = Subspace::from_spanning(&(&d * &xs)).unwrap().distance(&(&d * &x)).unwrap();
        let caps: Vec<f64> = (0..10).map(|i| 2f64.powi(-i)).collect();
        let vals: Vec<f64> = caps.iter().map(|&cap| constrained_distance(&d, &x, &xs, cap).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{vals:?}");
        assert!(vals.iter().all(|&v| v >= free - 1e-12));
    }

    #[test]
    fn constrained_distance_is_optimal_on_the_ball() {
        // brute force: random feasible coefficients never beat the solver
        let (d, x, xs) = constrained_setup(5);
        let cap = 0.3;
        let best = constrained_distance(&d, &x, &xs, cap).unwrap();
        let mut rng = stream_rng(5, 1);
        let y = &d * &x;
        let b = &d * &xs;
        for _ in 0..2000 {
            let mut a = DistributionSpec::gaussian().sample_vector(6, &mut rng);
            let r: f64 = rng.random::<f64>().powf(1.0 / 6.0) * cap;
            let norm = a.norm();
            a *= Complex64::new(r / norm, 0.0);
            assert!(best <= (&y - &b * &a).norm() + 1e-10);
        }
    }

    #[test]
    fn single_trial_and_low_rank_reports() {
        let spec = DistanceExperimentSpec {
            n: 40,
            k: 8,
            k0: 6,
            k1: 10,
            d: DFamily::Identity,
            dist: DistributionSpec::gaussian(),
            trials: 1,
            seed: 3,
        };
        let st = tail_probability_estimate(&spec, 0.5, 1.0).unwrap();
        assert_eq!(st.samples.len(), 1);
        assert!(st.constrained_samples[0] >= st.samples[0]);
        // rank-k0 D: S_{k1} = 0 and the lower bound cannot be violated
        let mut d = CMatrix::identity(40, 40);
        for i in 6..40 {
            d[(i, i)] = c(0.0);
        }
        let b = theoretical_bounds_for(&d, 8, 6, 10, 0.5, 1.0).unwrap();
        assert_eq!(b.lower, 0.0);
    }

    #[test]
    fn rotated_decay_has_requested_spectrum() {
        let d = DFamily::RotatedDecay { rate: 0.8, seed: 9 }.build(10);
        let s = linalg::singular_values(&d).unwrap();
        for (i, v) in s.iter().enumerate() {
            assert!((v - 0.8f64.powi(i as i32 + 1)).abs() < 1e-12);
        }
        assert!(linalg::is_real(&d));
    }

    #[test]
    fn trials_reproducible() {
        let spec = DistanceExperimentSpec {
            n: 30,
            k: 6,
            k0: 4,
            k1: 8,
            d: DFamily::GeometricDecay { rate: 0.95 },
            dist: DistributionSpec::complex(EntryKind::Rademacher),
            trials: 20,
            seed: 11,
        };
        assert_eq!(
            tail_probability_estimate(&spec, 0.5, 1.0).unwrap(),
            tail_probability_estimate(&spec, 0.5, 1.0).unwrap()
        );
    }
}
