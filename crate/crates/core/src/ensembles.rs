//! Entry distributions and seeded random matrices.
//!
//! Every [`EntryKind`] is normalised to mean zero and unit variance before the
//! declared variance is applied, so the second-moment condition holds by
//! construction. Complex-split entries draw independent real and imaginary
//! parts from the same kind.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::rng::{derive_seed, label_tag, stream_rng};
use crate::{CMatrix, CVector, Error, Result};

/// Shape of the entry law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryKind {
    Gaussian,
    Rademacher,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    UniformSymmetric,
    /// `sqrt(3)` with probability 1/4 and `-1/sqrt(3)` with probability 3/4.
    TwoPointAsymmetric,
    /// `sign * W` with `W ~ Weibull(shape = alpha)`, rescaled to unit variance.
    StretchedExponential {
        alpha: f64,
    },
}

impl EntryKind {
    pub fn is_symmetric(&self) -> bool {
        !matches!(self, EntryKind::TwoPointAsymmetric)
    }

    /// Draws one real sample with mean zero and unit variance.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EntryKind::Gaussian => StandardNormal.sample(rng),
            EntryKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryKind::UniformSymmetric => {
                let s3 = 3f64.sqrt();
                rng.random_range(-s3..s3)
            }
            EntryKind::TwoPointAsymmetric => {
                if rng.random::<f64>() < 0.25 {
                    3f64.sqrt()
                } else {
                    -1.0 / 3f64.sqrt()
                }
            }
            EntryKind::StretchedExponential { alpha } => {
                let w: f64 = Weibull::new(1.0, alpha).expect("alpha validated at construction").sample(rng);
                let scale = gamma(1.0 + 2.0 / alpha).sqrt();
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * w / scale
            }
        }
    }

    /// Finite support of the unit-variance law, when it has one.
    fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            EntryKind::Rademacher => Some(vec![(1.0, 0.5), (-1.0, 0.5)]),
            EntryKind::TwoPointAsymmetric => Some(vec![(3f64.sqrt(), 0.25), (-1.0 / 3f64.sqrt(), 0.75)]),
            _ => None,
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryKind::Gaussian => f.write_str("gaussian"),
            EntryKind::Rademacher => f.write_str("rademacher"),
            EntryKind::UniformSymmetric => f.write_str("uniform-symmetric"),
            EntryKind::TwoPointAsymmetric => f.write_str("two-point-asymmetric"),
            EntryKind::StretchedExponential { alpha } => {
                write!(f, "stretched-exponential({alpha})")
            }
        }
    }
}

impl FromStr for EntryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s {
            "gaussian" => EntryKind::Gaussian,
            "rademacher" => EntryKind::Rademacher,
            "uniform-symmetric" => EntryKind::UniformSymmetric,
            "two-point-asymmetric" => EntryKind::TwoPointAsymmetric,
            _ => {
                let inner = s
                    .strip_prefix("stretched-exponential(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::InvalidDistribution(format!("unknown kind `{s}`")))?;
                let alpha: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidDistribution(format!("bad stretched-exponential shape `{inner}`")))?;
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "stretched-exponential shape must be positive, got {alpha}"
                    )));
                }
                EntryKind::StretchedExponential { alpha }
            }
        };
        Ok(kind)
    }
}

impl TryFrom<String> for EntryKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EntryKind> for String {
    fn from(k: EntryKind) -> String {
        k.to_string()
    }
}

impl Serialize for EntryKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EntryKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Field {
    #[default]
    Real,
    ComplexSplit,
}

fn default_variance() -> f64 {
    1.0
}

/// Law of a single matrix entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: EntryKind,
    #[serde(default = "default_variance")]
    pub variance: f64,
    #[serde(default)]
    pub field: Field,
}

impl DistributionSpec {
    pub fn new(kind: EntryKind, variance: f64, field: Field) -> Result<Self> {
        let spec = DistributionSpec { kind, variance, field };
        spec.validate()?;
        Ok(spec)
    }

    pub fn real(kind: EntryKind) -> Self {
        DistributionSpec { kind, variance: 1.0, field: Field::Real }
    }

    pub fn gaussian() -> Self {
        Self::real(EntryKind::Gaussian)
    }

    pub fn rademacher() -> Self {
        Self::real(EntryKind::Rademacher)
    }

    pub fn complex(kind: EntryKind) -> Self {
        DistributionSpec { kind, variance: 1.0, field: Field::ComplexSplit }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variance.is_finite() || self.variance < 1.0 {
            return Err(Error::InvalidDistribution(format!("variance must be >= 1, got {}", self.variance)));
        }
        if let EntryKind::StretchedExponential { alpha } = self.kind {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "stretched-exponential shape must be positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }

    /// Key under which calibrated constants are stored.
    pub fn family_key(&self) -> String {
        let mut key = self.kind.to_string();
        if self.field == Field::ComplexSplit {
            key.push_str("-complex");
        }
        if self.variance != 1.0 {
            key.push_str(&format!("-var{}", self.variance));
        }
        key
    }

    fn scale(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let s = self.scale();
        match self.field {
            Field::Real => Complex64::new(s * self.kind.sample_unit(rng), 0.0),
            Field::ComplexSplit => {
                let re = s * self.kind.sample_unit(rng);
                let im = s * self.kind.sample_unit(rng);
                Complex64::new(re, im)
            }
        }
    }

    /// Random vector with i.i.d. entries drawn sequentially from `rng`.
    pub fn sample_vector<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CVector {
        CVector::from_fn(n, |_, _| self.sample(rng))
    }

    /// Exact mean of `xi * 1{|xi| <= level}`, when computable in closed form.
    pub fn truncated_mean(&self, level: f64) -> Option<Complex64> {
        if self.kind.is_symmetric() {
            return Some(Complex64::new(0.0, 0.0));
        }
        let s = self.scale();
        let atoms: Vec<(f64, f64)> = self.kind.atoms()?.into_iter().map(|(x, p)| (s * x, p)).collect();
        let mut mean = Complex64::new(0.0, 0.0);
        match self.field {
            Field::Real => {
                for &(x, p) in &atoms {
                    if x.abs() <= level {
                        mean += Complex64::new(p * x, 0.0);
                    }
                }
            }
            Field::ComplexSplit => {
                for &(a, pa) in &atoms {
                    for &(b, pb) in &atoms {
                        let z = Complex64::new(a, b);
                        if z.norm() <= level {
                            mean += z * (pa * pb);
                        }
                    }
                }
            }
        }
        Some(mean)
    }
}

/// Seeded description of a random matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixSampleSpec {
    pub rows: usize,
    pub cols: usize,
    pub dist: DistributionSpec,
    pub seed: u64,
}

impl MatrixSampleSpec {
    pub fn new(rows: usize, cols: usize, dist: DistributionSpec, seed: u64) -> Self {
        MatrixSampleSpec { rows, cols, dist, seed }
    }

    pub fn square(n: usize, dist: DistributionSpec, seed: u64) -> Self {
        Self::new(n, n, dist, seed)
    }
}

/// Samples the matrix described by `spec`. Column `j` is filled from its own
/// stream, so entry `(i, j)` depends only on `(seed, i, j)`.
pub fn sample_matrix(spec: &MatrixSampleSpec) -> Result<CMatrix> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(Error::InvalidArgument(format!("matrix shape must be positive, got {}x{}", spec.rows, spec.cols)));
    }
    spec.dist.validate()?;
    let base = derive_seed(spec.seed, label_tag("matrix"));
    let mut m = CMatrix::zeros(spec.rows, spec.cols);
    for j in 0..spec.cols {
        let mut rng = stream_rng(base, j as u64);
        for i in 0..spec.rows {
            m[(i, j)] = spec.dist.sample(&mut rng);
        }
    }
    Ok(m)
}

/// Random matrix with entries drawn sequentially from `rng`, column by column.
pub fn sample_matrix_with<R: Rng + ?Sized>(rows: usize, cols: usize, dist: &DistributionSpec, rng: &mut R) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = dist.sample(rng);
        }
    }
    m
}

/// Empirical `psi_alpha` norm: the maximum over `p = 1..=p_max` of
/// `p^{-1/alpha} (mean |xi|^p)^{1/p}`.
pub fn psi_norm_estimate(dist: &DistributionSpec, alpha: f64, p_max: u32, samples: usize, seed: u64) -> Result<f64> {
    dist.validate()?;
    if p_max < 1 {
        return Err(Error::InvalidArgument("p_max must be >= 1".into()));
    }
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("psi norm estimate needs at least 1000 samples, got {samples}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = stream_rng(derive_seed(seed, label_tag("psi-norm")), 0);
    let moduli: Vec<f64> = (0..samples).map(|_| dist.sample(&mut rng).norm()).collect();
    let mut best = 0.0f64;
    for p in 1..=p_max {
        let pf = p as f64;
        let moment = crate::stats::compensated_sum(moduli.iter().map(|x| x.powf(pf))) / samples as f64;
        let value = pf.powf(-1.0 / alpha) * moment.powf(1.0 / pf);
        best = best.max(value);
    }
    Ok(best)
}

/// Source of the mean subtracted after truncation.
#[derive(Debug, Clone, Copy)]
pub enum TruncatedMean<'a> {
    /// Sample mean of the truncated entries (entries are i.i.d., so one
    /// scalar is shared by every position).
    Empirical,
    /// Closed-form mean of the truncated law.
    Known(&'a DistributionSpec),
}

/// Zeroes entries with modulus above `level` and subtracts the truncated
/// mean. Returns `(truncated - mean_matrix, mean_matrix)`.
pub fn truncate_and_center(g: &CMatrix, level: f64, means: TruncatedMean<'_>) -> Result<(CMatrix, CMatrix)> {
    if !(level > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation level must be positive, got {level}")));
    }
    let truncated = g.map(|x| if x.norm() <= level { x } else { Complex64::new(0.0, 0.0) });
    let mean = match means {
        TruncatedMean::Empirical => {
            let count = (truncated.nrows() * truncated.ncols()) as f64;
            let re = crate::stats::compensated_sum(truncated.iter().map(|x| x.re)) / count;
            let im = crate::stats::compensated_sum(truncated.iter().map(|x| x.im)) / count;
            Complex64::new(re, im)
        }
        TruncatedMean::Known(dist) => dist
            .truncated_mean(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no closed-form truncated mean for {}", dist.kind)))?,
    };
    let mean_matrix = CMatrix::from_element(g.nrows(), g.ncols(), mean);
    Ok((truncated - &mean_matrix, mean_matrix))
}

/// Truncation level `(c * t * ln n)^{1/alpha}`.
pub fn truncation_level(n: usize, t: f64, c: f64, alpha: f64) -> f64 {
    (c * t * (n as f64).ln()).powf(1.0 / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{correlation, mean, variance};

    fn entries_re(m: &CMatrix) -> Vec<f64> {
        m.iter().map(|x| x.re).collect()
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let spec = MatrixSampleSpec::square(2, DistributionSpec::gaussian(), 7);
        assert_eq!(sample_matrix(&spec).unwrap(), sample_matrix(&spec).unwrap());
        let other = MatrixSampleSpec::square(2, DistributionSpec::gaussian(), 8);
        assert_ne!(sample_matrix(&spec).unwrap(), sample_matrix(&other).unwrap());
    }

    #[test]
    fn entries_do_not_depend_on_shape() {
        // column streams: a wider matrix extends a narrower one entrywise
        let d = DistributionSpec::rademacher();
        let small = sample_matrix(&MatrixSampleSpec::new(5, 3, d, 11)).unwrap();
        let big = sample_matrix(&MatrixSampleSpec::new(5, 9, d, 11)).unwrap();
        assert_eq!(small, big.columns(0, 3).into_owned());
    }

    #[test]
    fn rejects_small_variance_and_empty_shape() {
        let bad = DistributionSpec { kind: EntryKind::Gaussian, variance: 0.5, field: Field::Real };
        assert!(sample_matrix(&MatrixSampleSpec::square(3, bad, 0)).is_err());
        assert!(sample_matrix(&MatrixSampleSpec::new(0, 3, DistributionSpec::gaussian(), 0)).is_err());
    }

    #[test]
    fn rademacher_mean_is_small() {
        // n = 1000: 10^6 entries, standard error 1e-3, so 0.1 is 100 standard errors
        let m = sample_matrix(&MatrixSampleSpec::square(1000, DistributionSpec::rademacher(), 3)).unwrap();
        let mu = mean(&entries_re(&m));
        assert!(mu.abs() <= 0.1, "mean {mu}");
        assert!(mu.abs() <= 5e-3, "mean {mu} beyond 5 standard errors");
    }

    #[test]
    fn complex_split_parts_uncorrelated() {
        let m =
            sample_matrix(&MatrixSampleSpec::square(500, DistributionSpec::complex(EntryKind::Gaussian), 5)).unwrap();
        let re: Vec<f64> = m.iter().map(|x| x.re).collect();
        let im: Vec<f64> = m.iter().map(|x| x.im).collect();
        // 250000 pairs: correlation standard error 0.002
        assert!(correlation(&re, &im).abs() < 0.01);
        assert!((variance(&re) - 1.0).abs() < 0.02);
        assert!((variance(&im) - 1.0).abs() < 0.02);
    }

    #[test]
    fn every_kind_has_unit_variance() {
        let kinds = [
            EntryKind::Gaussian,
            EntryKind::Rademacher,
            EntryKind::UniformSymmetric,
            EntryKind::TwoPointAsymmetric,
            EntryKind::StretchedExponential { alpha: 1.0 },
            EntryKind::StretchedExponential { alpha: 0.7 },
        ];
        for kind in kinds {
            let d = DistributionSpec::real(kind);
            let m = sample_matrix(&MatrixSampleSpec::square(1000, d, 17)).unwrap();
            let x = entries_re(&m);
            let mu = mean(&x);
            let var = variance(&x);
            let fourth = mean(&x.iter().map(|v| (v - mu).powi(4)).collect::<Vec<_>>());
            let se_var = ((fourth - var * var).max(0.0) / x.len() as f64).sqrt();
            // the 2/N term covers the O(1/N) bias from centering at the sample mean
            assert!((var - 1.0).abs() <= 5.0 * se_var + 2.0 / x.len() as f64, "{kind}: var {var}, se {se_var}");
            assert!(mu.abs() <= 5.0 * (var / x.len() as f64).sqrt(), "{kind}: mean {mu}");
        }
    }

    #[test]
    fn declared_variance_scales_entries() {
        let d = DistributionSpec::new(EntryKind::Rademacher, 4.0, Field::Real).unwrap();
        let m = sample_matrix(&MatrixSampleSpec::square(4, d, 1)).unwrap();
        assert!(m.iter().all(|x| (x.re.abs() - 2.0).abs() < 1e-15));
    }

    #[test]
    fn kind_strings_round_trip() {
        for s in ["gaussian", "rademacher", "uniform-symmetric", "two-point-asymmetric", "stretched-exponential(0.5)"] {
            let k: EntryKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert!("stretched-exponential(-1)".parse::<EntryKind>().is_err());
        assert!("cauchy".parse::<EntryKind>().is_err());
    }

    /// E|g|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)
    fn gaussian_abs_moment(p: f64) -> f64 {
        2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt()
    }

    fn exact_psi(alpha: f64, p_max: u32) -> f64 {
        (1..=p_max)
            .map(|p| {
                let p = p as f64;
                p.powf(-1.0 / alpha) * gaussian_abs_moment(p).powf(1.0 / p)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn psi_norm_of_rademacher_is_one() {
        let v = psi_norm_estimate(&DistributionSpec::rademacher(), 2.0, 8, 2000, 1).unwrap();
        assert!(v <= 1.0 + 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_norm_of_gaussian_matches_exact_moments() {
        let exact = exact_psi(2.0, 8);
        for seed in 0..4 {
            let v = psi_norm_estimate(&DistributionSpec::gaussian(), 2.0, 8, 100_000, seed).unwrap();
            assert!((v / exact - 1.0).abs() < 0.1, "seed {seed}: {v} vs {exact}");
        }
    }

    #[test]
    fn psi_norm_is_monotone_in_p_max() {
        let d = DistributionSpec::gaussian();
        // alpha = 1: the supremum sits at p = 1, later terms only shrink
        let a1: Vec<f64> = (1..=8).map(|p| psi_norm_estimate(&d, 1.0, p, 50_000, 3).unwrap()).collect();
        assert!(a1.windows(2).all(|w| w[1] >= w[0]));
        assert!((a1[7] / exact_psi(1.0, 8) - 1.0).abs() < 0.05);
        // alpha = 4 asks for lighter tails than gaussian: strict growth in p_max
        let a4: Vec<f64> = [2, 4, 8].iter().map(|&p| psi_norm_estimate(&d, 4.0, p, 200_000, 3).unwrap()).collect();
        assert!(a4[0] < a4[1] && a4[1] < a4[2], "{a4:?}");
        assert!(exact_psi(4.0, 2) < exact_psi(4.0, 4) && exact_psi(4.0, 4) < exact_psi(4.0, 8));
    }

    #[test]
    fn psi_norm_preconditions() {
        let d = DistributionSpec::gaussian();
        assert!(psi_norm_estimate(&d, 2.0, 0, 5000, 0).is_err());
        assert!(psi_norm_estimate(&d, 2.0, 4, 999, 0).is_err());
    }

    #[test]
    fn truncation_above_max_is_identity() {
        let g = sample_matrix(&MatrixSampleSpec::square(20, DistributionSpec::gaussian(), 2)).unwrap();
        let level = g.iter().map(|x| x.norm()).fold(0.0, f64::max) + 1.0;
        let (c, m) = truncate_and_center(&g, level, TruncatedMean::Known(&DistributionSpec::gaussian())).unwrap();
        assert_eq!(c, g);
        assert!(m.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn rademacher_truncated_below_one_vanishes() {
        let d = DistributionSpec::rademacher();
        let g = sample_matrix(&MatrixSampleSpec::square(10, d, 2)).unwrap();
        for means in [TruncatedMean::Empirical, TruncatedMean::Known(&d)] {
            let (c, m) = truncate_and_center(&g, 0.5, means).unwrap();
            assert!(c.iter().all(|x| x.norm() == 0.0));
            assert!(m.iter().all(|x| x.norm() == 0.0));
        }
    }

    #[test]
    fn centered_entries_bounded_by_twice_level() {
        let d = DistributionSpec::real(EntryKind::StretchedExponential { alpha: 0.8 });
        let g = sample_matrix(&MatrixSampleSpec::square(60, d, 9)).unwrap();
        for level in [0.3, 1.0, 2.5] {
            let (c, _) = truncate_and_center(&g, level, TruncatedMean::Empirical).unwrap();
            assert!(c.iter().all(|x| x.norm() <= 2.0 * level));
        }
        let d2 = DistributionSpec::real(EntryKind::TwoPointAsymmetric);
        let g2 = sample_matrix(&MatrixSampleSpec::square(30, d2, 9)).unwrap();
        let (c, m) = truncate_and_center(&g2, 1.0, TruncatedMean::Known(&d2)).unwrap();
        // sqrt(3) atoms removed: mean of the rest is -(3/4)/sqrt(3)
        assert!((m[(0, 0)].re + 0.75 / 3f64.sqrt()).abs() < 1e-15);
        assert!(c.iter().all(|x| x.norm() <= 2.0));
    }

    #[test]
    fn gaussian_truncated_mean_is_below_tail_budget() {
        let n = 200;
        let level = truncation_level(n, 2.0, 1.0, 2.0);
        let d = DistributionSpec::gaussian();
        let g = sample_matrix(&MatrixSampleSpec::square(n, d, 4)).unwrap();
        let (_, m) = truncate_and_center(&g, level, TruncatedMean::Known(&d)).unwrap();
        // symmetric law: the truncated mean is exactly zero
        let budget = n as f64 * (-0.5 * level * level).exp();
        assert!(m.norm() <= budget);
        // the empirical mean matrix has HS norm n * |mean| ~ sigma_trunc
        let (_, me) = truncate_and_center(&g, level, TruncatedMean::Empirical).unwrap();
        assert!(me.norm() <= budget + 4.0);
    }

    #[test]
    fn invalid_truncation_level() {
        let g = CMatrix::identity(2, 2);
        assert!(truncate_and_center(&g, 0.0, TruncatedMean::Empirical).is_err());
    }
}
