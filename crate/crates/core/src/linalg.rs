//! Dense linear algebra on [`CMatrix`]: SVD, eigenpairs, subspaces, row
//! orthonormalization and singular-value surgery.
//!
//! Inputs whose imaginary parts are all zero are routed through real
//! factorizations, which are several times faster than the complex ones.

use nalgebra::linalg::{Schur, QR, SVD};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{CMatrix, CVector, Error, Result};

/// Relative residual accepted for an eigenpair.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// A vector is dependent on a set when orthogonalization leaves less than this
/// fraction of its norm.
pub const RANK_TOL: f64 = 1e-10;
/// `s_min / s_max` below this is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|x| x.im == 0.0)
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|x| x.re)
}

pub fn imag_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|x| x.im)
}

pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

fn combine(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMatrix {
    CMatrix::from_fn(re.nrows(), re.ncols(), |i, j| Complex64::new(re[(i, j)], im[(i, j)]))
}

pub fn check_finite(m: &CMatrix) -> Result<()> {
    if m.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// Matrix product through real GEMMs on the real and imaginary parts.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (ar, br) = (real_part(a), real_part(b));
    let a_real = is_real(a);
    let b_real = is_real(b);
    match (a_real, b_real) {
        (true, true) => complexify(&(ar * br)),
        (true, false) => {
            let re = &ar * &br;
            let im = &ar * imag_part(b);
            combine(&re, &im)
        }
        (false, true) => {
            let re = &ar * &br;
            let im = imag_part(a) * &br;
            combine(&re, &im)
        }
        (false, false) => {
            let (ai, bi) = (imag_part(a), imag_part(b));
            let re = &ar * &br - &ai * &bi;
            let im = &ar * &bi + &ai * &br;
            combine(&re, &im)
        }
    }
}

/// `a * x` for a vector `x`.
pub fn matvec(a: &CMatrix, x: &CVector) -> CVector {
    a * x
}

/// Singular value decomposition with values in nonincreasing order.
///
/// `left_vectors` is `m x r` and `right_vectors` is `n x r` with
/// `r = min(m, n)`, so `A = U diag(s) V*`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left_vectors: CMatrix,
    pub right_vectors: CMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(&self.singular_values)
    }

    /// `U diag(values) V*` with replacement singular values.
    pub fn reconstruct_with(&self, values: &[f64]) -> CMatrix {
        let mut us = self.left_vectors.clone();
        for (j, &s) in values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        matmul(&us, &self.right_vectors.adjoint())
    }

    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|&&s| s > rel_tol * top).count()
    }
}

pub fn svd(a: &CMatrix) -> Result<SvdResult> {
    check_finite(a)?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    let r = a.nrows().min(a.ncols());
    let (values, u, v) = if is_real(a) {
        let svd = SVD::try_new(real_part(a), true, true, f64::EPSILON, 0).ok_or(Error::NoConvergence)?;
        let u = complexify(svd.u.as_ref().expect("u requested"));
        let v = complexify(&svd.v_t.as_ref().expect("v requested").transpose());
        (svd.singular_values.iter().copied().collect::<Vec<_>>(), u, v)
    } else {
        let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, 0).ok_or(Error::NoConvergence)?;
        let u = svd.u.clone().expect("u requested");
        let v = svd.v_t.as_ref().expect("v requested").adjoint();
        (svd.singular_values.iter().copied().collect::<Vec<_>>(), u, v)
    };
    debug_assert_eq!(values.len(), r);
    Ok(SvdResult { singular_values: values, left_vectors: u, right_vectors: v })
}

/// Singular values only, nonincreasing.
pub fn singular_values(a: &CMatrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    let mut values: Vec<f64> = if is_real(a) {
        SVD::try_new_unordered(real_part(a), false, false, f64::EPSILON, 0)
            .ok_or(Error::NoConvergence)?
            .singular_values
            .iter()
            .copied()
            .collect()
    } else {
        SVD::try_new_unordered(a.clone(), false, false, f64::EPSILON, 0)
            .ok_or(Error::NoConvergence)?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    values.sort_by(|x, y| y.partial_cmp(x).expect("finite singular values"));
    Ok(values)
}

/// Largest singular value.
pub fn operator_norm(a: &CMatrix) -> Result<f64> {
    Ok(singular_values(a)?[0])
}

/// Cheap lower estimate of `||a||`: power iteration on `a* a`, never below
/// the largest column norm.
pub fn operator_norm_lower_estimate(a: &CMatrix, iterations: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let col_max = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let mut x = CVector::from_fn(n, |i, _| Complex64::new(1.0 + (i as f64 * 0.618_034).fract(), 0.0));
    x /= Complex64::new(x.norm(), 0.0);
    let mut est = 0.0;
    for _ in 0..iterations {
        let y = a * &x;
        est = y.norm();
        let z = a.ad_mul(&y);
        let zn = z.norm();
        if zn == 0.0 {
            break;
        }
        x = z / Complex64::new(zn, 0.0);
    }
    col_max.max(est)
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: Complex64,
    /// Unit vector.
    pub vector: CVector,
    /// `||A v - value v||_2`.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Eigendecomposition {
    /// Pairs that pass the residual contract.
    pub pairs: Vec<EigenPair>,
    /// Pairs whose residual exceeded the tolerance after refinement.
    pub failures: Vec<EigenPair>,
    /// The norm the tolerance was measured against (a lower estimate of `||A||`).
    pub norm: f64,
}

impl Eigendecomposition {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub residual_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { residual_tol: EIGEN_RESIDUAL_TOL }
    }
}

pub fn eigenpairs(a: &CMatrix) -> Result<Eigendecomposition> {
    eigenpairs_with(a, &EigenOptions::default())
}

/// Eigenpairs of a general square matrix.
///
/// Schur form `A = Z T Z*`, eigenvectors of the triangular `T` by
/// back-substitution, one inverse-iteration step with the computed value,
/// then mapping back and checking `||A v - lambda v|| <= tol ||A||` against
/// the original matrix.
pub fn eigenpairs_with(a: &CMatrix, opts: &EigenOptions) -> Result<Eigendecomposition> {
    check_square(a)?;
    check_finite(a)?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let schur = if is_real(a) { real_schur_to_complex(&real_part(a))? } else { None };
    let (basis, t, rotations) = match schur {
        Some(parts) => parts,
        None => {
            let (q, t) = Schur::try_new(a.clone(), f64::EPSILON, 0).ok_or(Error::NoConvergence)?.unpack();
            (q, t, Vec::new())
        }
    };
    let mut t = t;
    for j in 0..n {
        for i in j + 1..n {
            t[(i, j)] = ZERO;
        }
    }
    let pivot_floor = (f64::EPSILON * t.norm()).max(f64::MIN_POSITIVE);
    let mut y = CMatrix::zeros(n, n);
    let mut rhs = vec![ZERO; n];
    for k in 0..n {
        let lambda = t[(k, k)];
        // first pass: solve (T - lambda) y = 0 with y_k = 1
        for (i, r) in rhs.iter_mut().enumerate().take(k) {
            *r = -t[(i, k)];
        }
        rhs[k] = ONE;
        triangular_shifted_solve(&t, lambda, k, &mut rhs, pivot_floor);
        normalize_prefix(&mut rhs, k);
        // refinement: one inverse-iteration step
        triangular_shifted_solve(&t, lambda, k + 1, &mut rhs, pivot_floor);
        normalize_prefix(&mut rhs, k);
        for i in 0..=k {
            y[(i, k)] = rhs[i];
        }
    }
    for &(k, g) in &rotations {
        for j in 0..n {
            let (u, w) = (y[(k, j)], y[(k + 1, j)]);
            y[(k, j)] = g[0] * u + g[1] * w;
            y[(k + 1, j)] = g[2] * u + g[3] * w;
        }
    }
    let mut v = matmul(&basis, &y);
    for j in 0..n {
        let nrm = v.column(j).norm();
        if nrm > 0.0 {
            v.column_mut(j).unscale_mut(nrm);
        }
    }
    let av = matmul(a, &v);
    let norm = operator_norm_lower_estimate(a, 30);
    let mut pairs = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for k in 0..n {
        let lambda = t[(k, k)];
        let residual = (av.column(k) - v.column(k) * lambda).norm();
        let pair = EigenPair { value: lambda, vector: v.column(k).into_owned(), residual };
        if residual <= opts.residual_tol * norm {
            pairs.push(pair);
        } else {
            failures.push(pair);
        }
    }
    Ok(Eigendecomposition { pairs, failures, norm })
}

/// Solves `(T - lambda I) x = rhs` in place on rows `0..rows` of the leading
/// block, with entries at and beyond `rows` already fixed and folded into the
/// right-hand side. Pivots smaller than `floor` are replaced by `floor`.
fn triangular_shifted_solve(t: &CMatrix, lambda: Complex64, rows: usize, rhs: &mut [Complex64], floor: f64) {
    for m in (0..rows).rev() {
        let mut piv = t[(m, m)] - lambda;
        if piv.norm() < floor {
            piv = Complex64::new(floor, 0.0);
        }
        let xm = rhs[m] / piv;
        rhs[m] = xm;
        let col = t.column(m);
        for i in 0..m {
            rhs[i] -= col[i] * xm;
        }
    }
}

fn normalize_prefix(x: &mut [Complex64], k: usize) {
    let nrm = x[..=k].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if nrm > 0.0 {
        for z in &mut x[..=k] {
            *z /= nrm;
        }
    }
}

type Rotation = (usize, [Complex64; 4]);

/// Real Schur factorization converted to complex Schur form by unitary
/// rotations of the 2x2 diagonal blocks. Returns `None` when the real form is
/// not quasi-triangular, in which case the caller falls back to complex Schur.
fn real_schur_to_complex(a: &DMatrix<f64>) -> Result<Option<(CMatrix, CMatrix, Vec<Rotation>)>> {
    let n = a.nrows();
    let (q, t) = Schur::try_new(a.clone(), f64::EPSILON, 0).ok_or(Error::NoConvergence)?.unpack();
    let mut tc = complexify(&t);
    let mut rotations = Vec::new();
    let mut k = 0;
    while k + 1 < n {
        if t[(k + 1, k)] == 0.0 {
            k += 1;
            continue;
        }
        if k + 2 < n && t[(k + 2, k + 1)] != 0.0 {
            return Ok(None);
        }
        let (a11, a12, a21, a22) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
        let half = Complex64::new(0.5 * (a11 - a22), 0.0);
        let disc = half * half + a12 * a21;
        let lambda = Complex64::new(0.5 * (a11 + a22), 0.0) + disc.sqrt();
        let x1 = lambda - a22;
        let x2 = Complex64::new(a21, 0.0);
        let nrm = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
        let (x1, x2) = (x1 / nrm, x2 / nrm);
        // G = [[x1, -conj(x2)], [x2, conj(x1)]], row-major
        let g = [x1, -x2.conj(), x2, x1.conj()];
        // rows k, k+1 <- G* rows
        for j in 0..n {
            let (u, w) = (tc[(k, j)], tc[(k + 1, j)]);
            tc[(k, j)] = g[0].conj() * u + g[2].conj() * w;
            tc[(k + 1, j)] = g[1].conj() * u + g[3].conj() * w;
        }
        // columns k, k+1 <- columns G
        for i in 0..n {
            let (u, w) = (tc[(i, k)], tc[(i, k + 1)]);
            tc[(i, k)] = u * g[0] + w * g[2];
            tc[(i, k + 1)] = u * g[1] + w * g[3];
        }
        tc[(k + 1, k)] = ZERO;
        rotations.push((k, g));
        k += 2;
    }
    Ok(Some((complexify(&q), tc, rotations)))
}

/// Gram-Schmidt with reorthogonalization over the columns of `m`, visited in
/// `order`. Dependent columns are either skipped or reported.
fn gram_schmidt(m: &CMatrix, order: &[usize], drop_dependent: bool) -> Result<(Vec<CVector>, Vec<usize>)> {
    let mut basis: Vec<CVector> = Vec::with_capacity(order.len());
    let mut kept = Vec::with_capacity(order.len());
    for &j in order {
        let original = m.column(j).into_owned();
        let scale = original.norm();
        let mut v = original;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&v);
                v.axpy(-c, b, ONE);
            }
        }
        let nrm = v.norm();
        if scale == 0.0 || nrm <= RANK_TOL * scale {
            if drop_dependent {
                continue;
            }
            return Err(Error::RankDeficient { row: j });
        }
        v.unscale_mut(nrm);
        basis.push(v);
        kept.push(j);
    }
    Ok((basis, kept))
}

/// Rotates `v` so its first entry above `1e-12 ||v||` in modulus is real
/// and positive.
fn fix_phase(v: &mut CVector) {
    let nrm = v.norm();
    if let Some(p) = v.iter().find(|x| x.norm() > 1e-12 * nrm).copied() {
        let phase = p.conj() / p.norm();
        for x in v.iter_mut() {
            *x *= phase;
        }
    }
}

/// Orthonormalizes the rows of `q` top to bottom.
pub fn orthonormalize_rows(q: &CMatrix) -> Result<CMatrix> {
    let order: Vec<usize> = (0..q.nrows()).collect();
    orthonormalize_rows_in_order(q, &order)
}

/// Orthonormalizes the rows of `q`, processing them in `order`. Row `i` of the
/// output lies in the span of the rows processed up to and including row `i`.
pub fn orthonormalize_rows_in_order(q: &CMatrix, order: &[usize]) -> Result<CMatrix> {
    check_finite(q)?;
    let rows = q.nrows();
    let mut seen = vec![false; rows];
    if order.len() != rows || order.iter().any(|&i| i >= rows || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidArgument("order must be a permutation of the rows".into()));
    }
    // rows of q as columns: transposition without conjugation keeps spans
    let qt = q.transpose();
    let (basis, kept) = gram_schmidt(&qt, order, false)?;
    let mut p = CMatrix::zeros(rows, q.ncols());
    for (mut b, &i) in basis.into_iter().zip(&kept) {
        fix_phase(&mut b);
        p.row_mut(i).copy_from(&b.transpose());
    }
    Ok(p)
}

/// `||P P* - I||_max` entrywise.
pub fn coisometry_defect(p: &CMatrix) -> f64 {
    let g = p * p.adjoint();
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Subspace of `C^n` with an orthonormal basis stored as columns.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: CMatrix,
}

impl Subspace {
    /// Span of the columns of `vectors`. Columns dependent on earlier ones
    /// (to [`RANK_TOL`]) are dropped, so `dim` may be below the column count.
    pub fn from_spanning(vectors: &CMatrix) -> Result<Subspace> {
        check_finite(vectors)?;
        let order: Vec<usize> = (0..vectors.ncols()).collect();
        let (basis, _) = gram_schmidt(vectors, &order, true)?;
        Ok(Self::from_columns(vectors.nrows(), basis))
    }

    /// Wraps a basis that is already orthonormal; rejects it otherwise.
    pub fn from_orthonormal(basis: CMatrix) -> Result<Subspace> {
        let defect = coisometry_defect(&basis.adjoint());
        if defect > 1e-10 {
            return Err(Error::NotCoisometry(defect));
        }
        Ok(Subspace { basis })
    }

    pub fn zero(ambient: usize) -> Subspace {
        Subspace { basis: CMatrix::zeros(ambient, 0) }
    }

    fn from_columns(ambient: usize, cols: Vec<CVector>) -> Subspace {
        let mut basis = CMatrix::zeros(ambient, cols.len());
        for (j, c) in cols.iter().enumerate() {
            basis.set_column(j, c);
        }
        Subspace { basis }
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn project(&self, x: &CVector) -> CVector {
        if self.dim() == 0 {
            return CVector::zeros(x.len());
        }
        let coeffs = self.basis.ad_mul(x);
        &self.basis * coeffs
    }

    pub fn distance(&self, x: &CVector) -> Result<f64> {
        distance_to_subspace(x, self)
    }
}

/// `||x - P_E x||_2`, computed with a second projection pass for accuracy.
pub fn distance_to_subspace(x: &CVector, e: &Subspace) -> Result<f64> {
    if x.len() != e.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: e.ambient_dim(), got: x.len() });
    }
    let r = x - e.project(x);
    let r = &r - e.project(&r);
    Ok(r.norm())
}

/// `A^+ y` for `A` with full row rank.
pub fn pseudoinverse_apply(a: &CMatrix, y: &CVector) -> Result<CVector> {
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: y.len() });
    }
    if a.nrows() > a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "full row rank impossible for a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let s = svd(a)?;
    let top = s.singular_values[0];
    let bottom = *s.singular_values.last().expect("nonempty");
    if top == 0.0 || bottom < SINGULAR_TOL * top {
        return Err(Error::NearSingular { ratio: if top == 0.0 { 0.0 } else { bottom / top } });
    }
    let mut c = s.left_vectors.ad_mul(y);
    for (ci, &si) in c.iter_mut().zip(&s.singular_values) {
        *ci /= si;
    }
    Ok(&s.right_vectors * c)
}

/// Caps every singular value at `s_cap_index` (1-based).
pub fn truncate_singular_values(b: &CMatrix, cap_index: usize) -> Result<CMatrix> {
    let s = svd(b)?;
    let r = s.singular_values.len();
    if cap_index < 1 || cap_index > r {
        return Err(Error::OutOfRange { index: cap_index, lo: 1, hi: r });
    }
    let cap = s.singular_values[cap_index - 1];
    let capped: Vec<f64> = s.singular_values.iter().map(|&x| x.min(cap)).collect();
    Ok(s.reconstruct_with(&capped))
}

/// Splits `D` into its top-`k0` part and the remainder of its SVD.
pub fn split_svd(d: &CMatrix, k0: usize) -> Result<(CMatrix, CMatrix)> {
    let s = svd(d)?;
    let r = s.singular_values.len();
    if k0 > r {
        return Err(Error::OutOfRange { index: k0, lo: 0, hi: r });
    }
    let head: Vec<f64> = (0..r).map(|i| if i < k0 { s.singular_values[i] } else { 0.0 }).collect();
    let tail: Vec<f64> = (0..r).map(|i| if i < k0 { 0.0 } else { s.singular_values[i] }).collect();
    Ok((s.reconstruct_with(&head), s.reconstruct_with(&tail)))
}

/// Both sides of the negative second moment identity for an `N x n` matrix
/// with `N >= n` and full column rank: `(sum_i s_i^-2, sum_i d(A_i, H_i)^-2)`
/// where `H_i` spans the other columns. The distances come from a QR
/// factorization with column `i` moved last.
pub fn negative_second_moment(a: &CMatrix) -> Result<(f64, f64)> {
    check_finite(a)?;
    let (rows, n) = a.shape();
    if rows < n {
        return Err(Error::InvalidArgument(format!("need rows >= cols, got {rows}x{n}")));
    }
    let values = singular_values(a)?;
    let top = values[0];
    let bottom = values[n - 1];
    if top == 0.0 || bottom < SINGULAR_TOL * top {
        return Err(Error::NearSingular { ratio: if top == 0.0 { 0.0 } else { bottom / top } });
    }
    let spectral = crate::stats::compensated_sum(values.iter().map(|s| s.powi(-2)));
    let real = is_real(a);
    let mut inv_sq = Vec::with_capacity(n);
    for i in 0..n {
        let order: Vec<usize> = (0..n).filter(|&j| j != i).chain(std::iter::once(i)).collect();
        let d = if real {
            let ar = real_part(a);
            let m = DMatrix::from_fn(rows, n, |r, c| ar[(r, order[c])]);
            QR::new(m).r()[(n - 1, n - 1)].abs()
        } else {
            let m = CMatrix::from_fn(rows, n, |r, c| a[(r, order[c])]);
            QR::new(m).r()[(n - 1, n - 1)].norm()
        };
        inv_sq.push(d.powi(-2));
    }
    Ok((spectral, crate::stats::compensated_sum(inv_sq)))
}

/// `n x k` matrix with orthonormal columns drawn from the Haar measure
/// (QR of a gaussian matrix with the diagonal of `R` made positive).
pub fn random_orthonormal_columns<R: Rng + ?Sized>(n: usize, k: usize, complex: bool, rng: &mut R) -> CMatrix {
    assert!(k <= n && k > 0, "need 0 < k <= n");
    let g = CMatrix::from_fn(n, k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
        Complex64::new(re, im)
    });
    let qr = QR::new(g);
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for x in q.column_mut(j).iter_mut() {
                *x *= phase;
            }
        }
    }
    q
}
