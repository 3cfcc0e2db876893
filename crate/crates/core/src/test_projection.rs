//! Test projections for `A = G - zI`: a coisometry `P` with `l'` rows whose
//! kernel contains every column of `A` outside a designated set of `l`
//! indices `{j0} ∪ J0`.
//!
//! All indices in this module are 0-based. After [`canonicalize`], `j0` sits
//! at position 0 and `J0` at positions `1..l`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{sample_matrix, sample_matrix_with, DistributionSpec, MatrixSampleSpec};
use crate::error::Stage;
use crate::linalg::{self, orthonormalize_rows_in_order, svd, Subspace, SINGULAR_TOL};
use crate::rng::{label_tag, trial_rng};
use crate::spectral_window::{select_window, tail_sums, DecaySequence, WindowResult};
use crate::{CMatrix, CVector, Error, Result};

/// Relative scale of the gaussian perturbation added to a singular minor.
pub const MINOR_PERTURBATION: f64 = 1e-8;

/// The designated column `j0` and the set `J0` of `l - 1` further columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPair {
    pub j0: usize,
    pub rest: Vec<usize>,
}

impl IndexPair {
    /// `j0 = 0`, `J0 = {1, ..., l-1}`.
    pub fn leading(l: usize) -> IndexPair {
        IndexPair { j0: 0, rest: (1..l).collect() }
    }

    pub fn l(&self) -> usize {
        self.rest.len() + 1
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in std::iter::once(&self.j0).chain(&self.rest) {
            if i >= n {
                return Err(Error::InvalidIndexPair(format!("index {i} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidIndexPair(format!("index {i} appears twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TestProjectionInput {
    pub a: CMatrix,
    pub l: usize,
    pub pair: IndexPair,
}

impl TestProjectionInput {
    pub fn leading(a: CMatrix, l: usize) -> Self {
        TestProjectionInput { a, l, pair: IndexPair::leading(l) }
    }
}

/// Symmetric permutation moving `j0` to position 0 and `J0` (ascending) to
/// positions `1..l`; the other indices follow in ascending order. Returns
/// the permuted matrix and `perm`, where canonical position `k` holds
/// original index `perm[k]`.
pub fn canonicalize(input: &TestProjectionInput) -> Result<(CMatrix, Vec<usize>)> {
    let a = &input.a;
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    let n = a.nrows();
    if input.l < 1 || input.pair.l() != input.l {
        return Err(Error::InvalidIndexPair(format!("l = {} but the pair names {} indices", input.l, input.pair.l())));
    }
    input.pair.validate(n)?;
    let mut rest = input.pair.rest.clone();
    rest.sort_unstable();
    let mut perm = Vec::with_capacity(n);
    perm.push(input.pair.j0);
    perm.extend(&rest);
    let mut used = vec![false; n];
    for &i in &perm {
        used[i] = true;
    }
    perm.extend((0..n).filter(|&i| !used[i]));
    Ok((permute_symmetric(a, &perm), perm))
}

/// `B[i, j] = A[perm[i], perm[j]]`.
pub fn permute_symmetric(a: &CMatrix, perm: &[usize]) -> CMatrix {
    CMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], perm[j])])
}

/// Inverse of [`permute_symmetric`].
pub fn unpermute_symmetric(b: &CMatrix, perm: &[usize]) -> CMatrix {
    let mut a = CMatrix::zeros(b.nrows(), b.ncols());
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            a[(perm[i], perm[j])] = b[(i, j)];
        }
    }
    a
}

/// Data derived from the lower-right minor of a canonical matrix.
#[derive(Debug, Clone)]
pub struct DMatrixContext {
    /// The `(n-l) x (n-l)` minor `Ā`.
    pub minor: CMatrix,
    /// `(Ā^{-1})^T`.
    pub d: CMatrix,
    /// Row `i` is `B_i = A[i, l..]`, for `i < l`.
    pub b_rows: CMatrix,
    /// Singular values of `Ā^{-1}`, nonincreasing.
    pub sv_of_d: DecaySequence,
    /// Whether the perturbation fallback was used.
    pub perturbed: bool,
}

/// Extracts `Ā` and `B_1..B_l` from a canonical matrix and inverts `Ā` by
/// SVD. A numerically singular minor gets one gaussian perturbation of
/// relative size [`MINOR_PERTURBATION`] before giving up.
pub fn build_minor_context(a: &CMatrix, l: usize) -> Result<DMatrixContext> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotSquare { rows: n, cols: a.ncols() });
    }
    if l < 1 || l >= n {
        return Err(Error::OutOfRange { index: l, lo: 1, hi: n.saturating_sub(1) });
    }
    let m = n - l;
    let minor = a.view((l, l), (m, m)).into_owned();
    let b_rows = a.view((0, l), (l, m)).into_owned();
    let mut current = minor.clone();
    let mut perturbed = false;
    for attempt in 0..2 {
        let s = svd(&current)?;
        let top = s.singular_values[0];
        let bottom = s.singular_values[m - 1];
        if top > 0.0 && bottom > SINGULAR_TOL * top {
            // Ā^{-1} = V Σ^{-1} U*, so D = conj(U) Σ^{-1} V^T
            let mut left = s.left_vectors.map(|x| x.conj());
            for (j, &sv) in s.singular_values.iter().enumerate() {
                left.column_mut(j).unscale_mut(sv);
            }
            let d = linalg::matmul(&left, &s.right_vectors.transpose());
            let inv: Vec<f64> = s.singular_values.iter().rev().map(|x| 1.0 / x).collect();
            return Ok(DMatrixContext { minor: current, d, b_rows, sv_of_d: tail_sums(&inv)?, perturbed });
        }
        if attempt == 0 {
            let scale = MINOR_PERTURBATION * a.norm().max(f64::MIN_POSITIVE);
            let dist = if linalg::is_real(a) {
                DistributionSpec::gaussian()
            } else {
                DistributionSpec::complex(crate::ensembles::EntryKind::Gaussian)
            };
            let noise = sample_matrix(&MatrixSampleSpec::square(m, dist, label_tag("minor-perturbation")))?;
            current = &minor + noise * Complex64::new(scale, 0.0);
            perturbed = true;
        } else {
            return Err(Error::NearSingular { ratio: if top == 0.0 { 0.0 } else { bottom / top } });
        }
    }
    unreachable!("loop returns on both attempts")
}

/// `l' x n` matrix with `q_ii = 1` on the leading block, zero columns
/// `l'..l`, and row `i` ending in `-(D B_i)^T`, so that `Q A_j = 0` for
/// every `j >= l`.
pub fn build_q(ctx: &DMatrixContext, l_prime: usize) -> Result<CMatrix> {
    let l = ctx.b_rows.nrows();
    let m = ctx.minor.nrows();
    if l_prime < 1 || l_prime > l {
        return Err(Error::OutOfRange { index: l_prime, lo: 1, hi: l });
    }
    // row i of B D^T is (D B_i)^T
    let tail = linalg::matmul(&ctx.b_rows.rows(0, l_prime).into_owned(), &ctx.d.transpose());
    let mut q = CMatrix::zeros(l_prime, l + m);
    for i in 0..l_prime {
        q[(i, i)] = Complex64::new(1.0, 0.0);
    }
    q.view_mut((0, l), (l_prime, m)).copy_from(&(-tail));
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct TestProjection {
    /// `l' x n`, in canonical coordinates.
    pub p: CMatrix,
    pub l: usize,
    pub l_prime: usize,
    pub window: WindowResult,
    /// The matrix before orthonormalization.
    pub q: CMatrix,
    /// Canonical position `k` holds original index `permutation[k]`.
    pub permutation: Vec<usize>,
    pub context: DMatrixContext,
}

impl TestProjection {
    /// `P` with its columns mapped back to the original coordinates.
    pub fn p_original(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.p.nrows(), self.p.ncols());
        for (k, &orig) in self.permutation.iter().enumerate() {
            out.set_column(orig, &self.p.column(k));
        }
        out
    }

    /// `||P e_i||_2` for canonical `i < l`.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.l).map(|i| self.p.column(i).norm()).collect()
    }
}

/// Full construction: canonicalize, build the minor context, select the
/// window on the singular values of `Ā^{-1}`, assemble `Q` and orthonormalize
/// its rows in the order `l'-1, ..., 0`.
pub fn build_test_projection(input: &TestProjectionInput, c_window: f64) -> Result<TestProjection> {
    let n = input.a.nrows();
    if 4 * input.l > n {
        return Err(Error::InvalidArgument(format!("need l <= n/4, got l = {} for n = {n}", input.l)));
    }
    let (a, permutation) = canonicalize(input).map_err(|e| e.at(Stage::Canonicalize))?;
    let context = build_minor_context(&a, input.l).map_err(|e| e.at(Stage::MinorContext))?;
    let window = select_window(&context.sv_of_d, input.l, c_window).map_err(|e| e.at(Stage::Window))?;
    let q = build_q(&context, window.l_prime).map_err(|e| e.at(Stage::QAssembly))?;
    let order: Vec<usize> = (0..window.l_prime).rev().collect();
    let p = orthonormalize_rows_in_order(&q, &order).map_err(|e| e.at(Stage::Orthonormalize))?;
    Ok(TestProjection { p, l: input.l, l_prime: window.l_prime, window, q, permutation, context })
}

/// Columns of `P` above this norm in the zero block are a defect.
pub const ZERO_BLOCK_TOL: f64 = 1e-10;

/// `max_{i,j < l'} ||P e_i|| / ||P e_j||` and whether `||P e_i|| <=`
/// [`ZERO_BLOCK_TOL`] for `l' <= i < l`.
pub fn column_norm_ratio(tp: &TestProjection) -> (f64, bool) {
    let norms = tp.column_norms();
    let head = &norms[..tp.l_prime];
    let hi = head.iter().copied().fold(0.0, f64::max);
    let lo = head.iter().copied().fold(f64::INFINITY, f64::min);
    let zero_ok = norms[tp.l_prime..].iter().all(|&x| x <= ZERO_BLOCK_TOL);
    (hi / lo, zero_ok)
}

/// `|q_ii| / d(q_i, span{q_j : j != i})`, which equals `||P e_i||_2` for any
/// coisometry `P` with the row span of `Q` whose leading block is diagonal.
pub fn column_norm_via_distance(q: &CMatrix, i: usize) -> Result<f64> {
    let rows = q.nrows();
    if i >= rows {
        return Err(Error::OutOfRange { index: i, lo: 0, hi: rows.saturating_sub(1) });
    }
    let qt = q.transpose();
    let others: Vec<CVector> = (0..rows).filter(|&j| j != i).map(|j| qt.column(j).into_owned()).collect();
    let span = if others.is_empty() {
        Subspace::zero(q.ncols())
    } else {
        Subspace::from_spanning(&CMatrix::from_columns(&others))?
    };
    if span.dim() + 1 != rows {
        return Err(Error::RankDeficient { row: i });
    }
    let d = span.distance(&qt.column(i).into_owned())?;
    if d <= linalg::RANK_TOL * q.row(i).norm() {
        return Err(Error::RankDeficient { row: i });
    }
    Ok(q[(i, i)].norm() / d)
}

/// `max_{j >= l} ||P A_j|| / ||A_j||` in canonical coordinates.
pub fn kernel_defect(tp: &TestProjection, a_canonical: &CMatrix) -> f64 {
    let n = a_canonical.ncols();
    let pa = linalg::matmul(&tp.p, &a_canonical.columns(tp.l, n - tp.l).into_owned());
    (0..n - tp.l)
        .map(|j| {
            let denom = a_canonical.column(tp.l + j).norm();
            if denom == 0.0 {
                0.0
            } else {
                pa.column(j).norm() / denom
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancingCheck {
    pub holds: bool,
    /// `||P A_{j0}|| >= alpha ||P A_{J0}||`.
    pub dominates_rest: bool,
    /// `||P A_{j0}|| >= kappa sqrt(l)`.
    pub above_floor: bool,
    /// `||P A_{j0}||_2`.
    pub norm_j0: f64,
    /// Operator norm of `P A_{J0}`.
    pub norm_rest: f64,
    pub sqrt_l: f64,
}

/// Evaluates both inequalities of the balancing event for `A` in original
/// coordinates and the projection built from it.
pub fn balancing_event_check(a: &CMatrix, tp: &TestProjection, alpha: f64, kappa: f64) -> Result<BalancingCheck> {
    let n = tp.permutation.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.nrows() });
    }
    let cols = CMatrix::from_fn(n, tp.l, |i, k| a[(tp.permutation[i], tp.permutation[k])]);
    let pa = linalg::matmul(&tp.p, &cols);
    let norm_j0 = pa.column(0).norm();
    let norm_rest = if tp.l > 1 { linalg::operator_norm(&pa.columns(1, tp.l - 1).into_owned())? } else { 0.0 };
    let sqrt_l = (tp.l as f64).sqrt();
    let dominates_rest = norm_j0 >= alpha * norm_rest;
    let above_floor = norm_j0 >= kappa * sqrt_l;
    Ok(BalancingCheck { holds: dominates_rest && above_floor, dominates_rest, above_floor, norm_j0, norm_rest, sqrt_l })
}

/// Per-trial results of checking the construction contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractTrial {
    pub trial: usize,
    pub l_prime: usize,
    /// Entrywise max of `|PP* - I|`.
    pub coisometry_defect: f64,
    /// [`kernel_defect`].
    pub kernel_defect: f64,
    /// Largest `||P e_i||` over `l' <= i < l`.
    pub zero_block: f64,
    /// `P` is bitwise unchanged after redrawing the designated columns.
    pub measurable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub n: usize,
    pub l: usize,
    pub z: Complex64,
    pub dist: DistributionSpec,
    pub trials: usize,
    pub seed: u64,
    pub c_window: f64,
}

/// Builds `P` for `A = G - zI` with the leading pair, checks it, then
/// redraws columns `0..l` of `G` and rebuilds.
pub fn contract_trials(spec: &ContractSpec) -> Result<Vec<ContractTrial>> {
    spec.dist.validate()?;
    let (n, l) = (spec.n, spec.l);
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(spec.seed, t as u64);
            let g = sample_matrix_with(n, n, &spec.dist, &mut rng);
            let a = &g - CMatrix::identity(n, n) * spec.z;
            let tp = build_test_projection(&TestProjectionInput::leading(a.clone(), l), spec.c_window)?;
            let mut redrawn = g;
            redrawn.columns_mut(0, l).copy_from(&sample_matrix_with(n, l, &spec.dist, &mut rng));
            let b = redrawn - CMatrix::identity(n, n) * spec.z;
            let tb = build_test_projection(&TestProjectionInput::leading(b, l), spec.c_window)?;
            let zero_block = tp.column_norms()[tp.l_prime..].iter().copied().fold(0.0, f64::max);
            Ok(ContractTrial {
                trial: t,
                l_prime: tp.l_prime,
                coisometry_defect: linalg::coisometry_defect(&tp.p),
                kernel_defect: kernel_defect(&tp, &a),
                zero_block,
                measurable: tb.l_prime == tp.l_prime && tb.p == tp.p,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::EntryKind;
    use crate::linalg::coisometry_defect;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn gaussian(n: usize, seed: u64) -> CMatrix {
        sample_matrix(&MatrixSampleSpec::square(n, DistributionSpec::gaussian(), seed)).unwrap()
    }

    #[test]
    fn leading_pair_is_identity_permutation() {
        let a = gaussian(8, 1);
        let (b, perm) = canonicalize(&TestProjectionInput::leading(a.clone(), 3)).unwrap();
        assert_eq!(perm, (0..8).collect::<Vec<_>>());
        assert_eq!(b, a);
    }

    #[test]
    fn canonicalize_example_permutation() {
        let a = CMatrix::from_fn(4, 4, |i, j| c((10 * i + j) as f64));
        let input = TestProjectionInput { a: a.clone(), l: 2, pair: IndexPair { j0: 2, rest: vec![0] } };
        let (b, perm) = canonicalize(&input).unwrap();
        assert_eq!(perm, vec![2, 0, 1, 3]);
        assert_eq!(b[(0, 0)], a[(2, 2)]);
        assert_eq!(b[(0, 1)], a[(2, 0)]);
        assert_eq!(unpermute_symmetric(&b, &perm), a);
    }

    #[test]
    fn canonicalize_rejects_bad_pairs() {
        let a = gaussian(6, 2);
        for pair in [
            IndexPair { j0: 1, rest: vec![1] },
            IndexPair { j0: 0, rest: vec![6] },
            IndexPair { j0: 0, rest: vec![2, 2] },
        ] {
            let l = pair.l();
            assert!(canonicalize(&TestProjectionInput { a: a.clone(), l, pair }).is_err());
        }
    }

    #[test]
    fn random_round_trip() {
        let a = gaussian(10, 3);
        let input = TestProjectionInput { a: a.clone(), l: 3, pair: IndexPair { j0: 7, rest: vec![9, 2] } };
        let (b, perm) = canonicalize(&input).unwrap();
        assert_eq!(&perm[..3], &[7, 2, 9]);
        assert_eq!(unpermute_symmetric(&b, &perm), a);
    }

    #[test]
    fn minor_context_of_identity_and_diagonal() {
        let ctx = build_minor_context(&CMatrix::identity(6, 6), 2).unwrap();
        assert_eq!(ctx.minor, CMatrix::identity(4, 4));
        assert!((&ctx.d - CMatrix::identity(4, 4)).norm() < 1e-14);
        assert!(ctx.b_rows.iter().all(|x| x.norm() == 0.0));
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(2.0), c(3.0), c(4.0)]));
        let ctx = build_minor_context(&d, 2).unwrap();
        assert!((&ctx.minor - CMatrix::from_diagonal(&CVector::from_vec(vec![c(3.0), c(4.0)]))).norm() < 1e-15);
        assert!(ctx.b_rows.iter().all(|x| x.norm() == 0.0));
        assert!((ctx.sv_of_d.value(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!(!ctx.perturbed);
    }

    #[test]
    fn minor_context_reciprocal_identity() {
        let a = gaussian(30, 4);
        let l = 5;
        let ctx = build_minor_context(&a, l).unwrap();
        let s = linalg::singular_values(&ctx.minor).unwrap();
        let m = 30 - l;
        for j in 1..=m {
            assert!((ctx.sv_of_d.value(j) * s[m - j] - 1.0).abs() < 1e-8);
        }
        // D^T Ā = I
        let prod = ctx.d.transpose() * &ctx.minor;
        assert!((prod - CMatrix::identity(m, m)).norm() < 1e-9);
    }

    #[test]
    fn singular_minor_is_perturbed() {
        let mut a = gaussian(8, 5);
        for i in 2..8 {
            a[(i, 7)] = c(0.0);
        }
        let ctx = build_minor_context(&a, 2).unwrap();
        assert!(ctx.perturbed);
    }

    #[test]
    fn q_for_identity_and_hand_example() {
        let ctx = build_minor_context(&CMatrix::identity(8, 8), 2).unwrap();
        let q = build_q(&ctx, 2).unwrap();
        let mut want = CMatrix::zeros(2, 8);
        want[(0, 0)] = c(1.0);
        want[(1, 1)] = c(1.0);
        assert!((q - want).norm() < 1e-15);

        let a =
            CMatrix::from_row_slice(3, 3, &[c(2.0), c(1.0), c(1.0), c(0.0), c(1.0), c(0.0), c(0.0), c(0.0), c(1.0)]);
        let ctx = build_minor_context(&a, 1).unwrap();
        let q = build_q(&ctx, 1).unwrap();
        let want = CMatrix::from_row_slice(1, 3, &[c(1.0), c(-1.0), c(-1.0)]);
        assert!((&q - want).norm() < 1e-14);
        assert!((&q * a.columns(1, 2)).norm() < 1e-14);
    }

    #[test]
    fn q_annihilates_trailing_columns() {
        let a = gaussian(40, 6);
        let ctx = build_minor_context(&a, 6).unwrap();
        let q = build_q(&ctx, 4).unwrap();
        for j in 6..40 {
            let r = (&q * a.column(j)).norm() / a.column(j).norm();
            assert!(r <= 1e-6, "column {j}: {r}");
        }
        assert!(build_q(&ctx, 7).is_err());
    }

    #[test]
    fn projection_of_identity() {
        let tp = build_test_projection(&TestProjectionInput::leading(CMatrix::identity(64, 64), 16), 0.125).unwrap();
        let lp = tp.l_prime;
        assert!((8..=16).contains(&lp));
        let mut want = CMatrix::zeros(lp, 64);
        for i in 0..lp {
            want[(i, i)] = c(1.0);
        }
        assert!((&tp.p - want).norm() < 1e-14);
        let (ratio, zero_ok) = column_norm_ratio(&tp);
        assert!((ratio - 1.0).abs() < 1e-14 && zero_ok);
    }

    #[test]
    fn projection_properties_on_gaussian_matrix() {
        let n = 128;
        let l = ((n as f64).ln().powi(2)).ceil() as usize;
        let a = gaussian(n, 7);
        let input =
            TestProjectionInput { a: a.clone(), l, pair: IndexPair { j0: 5, rest: (20..20 + l - 1).collect() } };
        let tp = build_test_projection(&input, 0.125).unwrap();
        assert!(coisometry_defect(&tp.p) <= 1e-10);
        let (a_can, _) = canonicalize(&input).unwrap();
        assert!(kernel_defect(&tp, &a_can) <= 1e-6);
        let (ratio, zero_ok) = column_norm_ratio(&tp);
        assert!(ratio.is_finite() && zero_ok);
        // original coordinates: P_orig A_j = 0 off the designated set
        let po = tp.p_original();
        for j in 0..n {
            if j == 5 || (20..20 + l - 1).contains(&j) {
                continue;
            }
            assert!((&po * a.column(j)).norm() <= 1e-6 * a.column(j).norm());
        }
        for i in 0..tp.l_prime {
            let via = column_norm_via_distance(&tp.q, i).unwrap();
            let direct = tp.p.column(i).norm();
            assert!((via - direct).abs() <= 1e-8 * direct);
        }
    }

    #[test]
    fn projection_ignores_designated_columns() {
        let n = 64;
        let l = 8;
        let a = gaussian(n, 8);
        let mut b = a.clone();
        let noise = gaussian(n, 9);
        b.columns_mut(0, l).copy_from(&noise.columns(0, l));
        let ta = build_test_projection(&TestProjectionInput::leading(a, l), 0.125).unwrap();
        let tb = build_test_projection(&TestProjectionInput::leading(b, l), 0.125).unwrap();
        assert_eq!(ta.l_prime, tb.l_prime);
        assert_eq!(ta.p, tb.p);
    }

    #[test]
    fn contract_holds_on_small_rademacher_runs() {
        let spec = ContractSpec {
            n: 48,
            l: 6,
            z: Complex64::new(3.0, 0.0),
            dist: DistributionSpec::rademacher(),
            trials: 4,
            seed: 2,
            c_window: 0.125,
        };
        for t in contract_trials(&spec).unwrap() {
            assert!(t.coisometry_defect <= 1e-10);
            assert!(t.kernel_defect <= 1e-6);
            assert!(t.zero_block <= ZERO_BLOCK_TOL);
            assert!(t.measurable);
        }
    }

    #[test]
    fn projection_rejects_large_l() {
        let a = gaussian(16, 1);
        assert!(build_test_projection(&TestProjectionInput::leading(a, 5), 0.125).is_err());
    }

    #[test]
    fn distance_formula_hand_example() {
        let q = CMatrix::from_row_slice(2, 3, &[c(1.0), c(0.0), c(1.0), c(0.0), c(1.0), c(1.0)]);
        let via = column_norm_via_distance(&q, 0).unwrap();
        assert!((via - 1.0 / 1.5f64.sqrt()).abs() < 1e-14);
        let p = linalg::orthonormalize_rows_in_order(&q, &[1, 0]).unwrap();
        assert!((p.column(0).norm() - via).abs() < 1e-14);
        let eye = CMatrix::identity(3, 5);
        for i in 0..3 {
            assert!((column_norm_via_distance(&eye, i).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_formula_random_complex_q() {
        let tail =
            sample_matrix(&MatrixSampleSpec::new(6, 14, DistributionSpec::complex(EntryKind::Gaussian), 10)).unwrap();
        let mut q = CMatrix::zeros(6, 20);
        for i in 0..6 {
            q[(i, i)] = c(1.0);
        }
        q.view_mut((0, 6), (6, 14)).copy_from(&tail);
        let order: Vec<usize> = (0..6).rev().collect();
        let p = linalg::orthonormalize_rows_in_order(&q, &order).unwrap();
        for i in 0..6 {
            let via = column_norm_via_distance(&q, i).unwrap();
            assert!((via - p.column(i).norm()).abs() <= 1e-8 * via);
        }
    }

    #[test]
    fn balancing_check_edge_cases() {
        let a = gaussian(64, 11);
        let tp = build_test_projection(&TestProjectionInput::leading(a.clone(), 8), 0.125).unwrap();
        assert!(balancing_event_check(&a, &tp, 0.0, 0.0).unwrap().holds);
        let r = balancing_event_check(&a, &tp, 1.0, 0.0).unwrap();
        let too_big = 2.0 * r.norm_j0 / r.norm_rest;
        assert!(!balancing_event_check(&a, &tp, too_big, 0.0).unwrap().holds);
        assert!((r.sqrt_l - 8f64.sqrt()).abs() < 1e-15);
    }
}
