//! Centered data containers, cross-product sufficient statistics, and small
//! SPD linear-algebra helpers used by every estimator in the crate.
//!
//! All estimators work on mean-centered data (the structural intercepts are
//! removed by centering instead of being estimated), and everything except
//! the heteroscedastic extension consumes only the cross products collected
//! in [`SufficientStats`], so per-model work is O(p^3) regardless of the
//! sample size.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative threshold on singular values below which the centered instrument
/// matrix is declared rank deficient.
pub const RANK_TOL: f64 = 1e-8;

/// Relative tolerance for the symmetry precondition of the SPD helpers.
const SYM_TOL: f64 = 1e-8;

/// A mean-centered dataset: outcome `y`, exposure `d`, and an `n x p`
/// instrument matrix `z` with full column rank.
///
/// Construct through [`center`], which validates finiteness, shape
/// (`n > p >= 1`), subtracts column means, and checks the rank condition.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Centered outcome, length `n`.
    pub y: DVector<f64>,
    /// Centered exposure, length `n`.
    pub d: DVector<f64>,
    /// Centered instrument matrix, `n x p`.
    pub z: DMatrix<f64>,
    /// Number of observations.
    pub n: usize,
    /// Number of instruments.
    pub p: usize,
}

/// Cross products of a centered dataset, sufficient for every homoscedastic
/// computation in the crate.
///
/// The Cholesky factor and log-determinant of `z'z` are computed once here
/// and reused by every model fit on the same dataset.
#[derive(Clone, Debug)]
pub struct SufficientStats {
    /// `z'z`, `p x p`.
    pub ztz: DMatrix<f64>,
    /// `z'd`, length `p`.
    pub ztd: DVector<f64>,
    /// `z'y`, length `p`.
    pub zty: DVector<f64>,
    /// `d'd`.
    pub dtd: f64,
    /// `d'y`.
    pub dty: f64,
    /// `y'y`.
    pub yty: f64,
    /// Number of observations behind the cross products.
    pub n: usize,
    chol_ztz: Cholesky<f64, Dyn>,
    logdet_ztz: f64,
}

impl SufficientStats {
    /// Number of instruments.
    pub fn p(&self) -> usize {
        self.ztz.nrows()
    }

    /// Solves `(z'z) x = b` for a matrix right-hand side using the cached
    /// Cholesky factor.
    pub fn solve_ztz(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_ztz.solve(b)
    }

    /// Solves `(z'z) x = b` for a vector right-hand side.
    pub fn solve_ztz_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol_ztz.solve(b)
    }

    /// `log det(z'z)`, cached at construction.
    pub fn logdet_ztz(&self) -> f64 {
        self.logdet_ztz
    }
}

/// Centers `y`, `d`, and the columns of `z`, validates the inputs, and
/// packages them as a [`Dataset`].
///
/// Errors with [`Error::NonFinite`] if any input value is NaN or infinite,
/// [`Error::InvalidInput`] on shape violations (`n > p >= 1` is required),
/// and [`Error::RankDeficient`] if the smallest singular value of the
/// centered instrument matrix is at most `1e-8` times the largest.
pub fn center(y: DVector<f64>, d: DVector<f64>, z: DMatrix<f64>) -> Result<Dataset> {
    let n = z.nrows();
    let p = z.ncols();
    if p < 1 {
        return Err(Error::InvalidInput("need at least one instrument".into()));
    }
    if y.len() != n || d.len() != n {
        return Err(Error::InvalidInput(format!(
            "outcome has {} rows, exposure {}, instruments {}; all must match",
            y.len(),
            d.len(),
            n
        )));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "need more observations than instruments (n = {n}, p = {p})"
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("outcome"));
    }
    if !d.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("exposure"));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("instruments"));
    }

    let mut y = y;
    let mut d = d;
    let mut z = z;
    let y_mean = y.mean();
    let d_mean = d.mean();
    y.apply(|v| *v -= y_mean);
    d.apply(|v| *v -= d_mean);
    for j in 0..p {
        let mean = z.column(j).mean();
        z.column_mut(j).apply(|v| *v -= mean);
    }

    let sv = z.clone().svd(false, false).singular_values;
    let s_max = sv.max();
    let s_min = sv.min();
    if !(s_max > 0.0) || s_min <= RANK_TOL * s_max {
        let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
        return Err(Error::RankDeficient(ratio));
    }

    Ok(Dataset { y, d, z, n, p })
}

/// Computes the cross products of a centered dataset, including the cached
/// Cholesky factor of `z'z`.
///
/// Errors with [`Error::NotPositiveDefinite`] in the (rare) event that `z'z`
/// fails to factor even though the rank check passed.
pub fn compute_suffstats(data: &Dataset) -> Result<SufficientStats> {
    let ztz = data.z.transpose() * &data.z;
    let ztd = data.z.transpose() * &data.d;
    let zty = data.z.transpose() * &data.y;
    let dtd = data.d.dot(&data.d);
    let dty = data.d.dot(&data.y);
    let yty = data.y.dot(&data.y);
    // Symmetrize to remove the last-bit asymmetry of the float product before
    // factoring; this is an exact-math no-op.
    let ztz = symmetrize(ztz);
    let chol_ztz = Cholesky::new(ztz.clone()).ok_or(Error::NotPositiveDefinite)?;
    let logdet_ztz = 2.0 * chol_ztz.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(SufficientStats {
        ztz,
        ztd,
        zty,
        dtd,
        dty,
        yty,
        n: data.n,
        chol_ztz,
        logdet_ztz,
    })
}

/// Replaces `a` with `(a + a') / 2`.
pub(crate) fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn check_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {} x {}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > SYM_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky, with
/// no regularization: a failed factorization is reported as
/// [`Error::NotPositiveDefinite`] rather than silently jittered.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::InvalidInput(format!(
            "right-hand side has {} rows, expected {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let chol = Cholesky::new(symmetrize(a.clone())).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn logdet_spd(a: &DMatrix<f64>) -> Result<f64> {
    check_square_symmetric(a)?;
    let chol = Cholesky::new(symmetrize(a.clone())).ok_or(Error::NotPositiveDefinite)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}
