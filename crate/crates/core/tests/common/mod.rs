//! Shared test support: an independent dense n-dimensional oracle for the
//! per-model computations, plus a small synthetic-data generator.
//!
//! The oracle deliberately avoids the library's sufficient-statistic code
//! path: projections use explicit n x n matrices, inverses go through LU
//! (`try_inverse`), log-determinants through symmetric eigendecomposition,
//! and the conditional beta posterior is computed with the partitioned
//! annihilator-matrix formula rather than the joint normal equations.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use ivbgmm::Dataset;

/// Maximum relative deviation, scaled by `max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn assert_rel(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        rel_err(a, b) <= tol,
        "{what}: {a} vs {b} (rel err {:.3e} > {tol:.1e})",
        rel_err(a, b)
    );
}

/// Everything the dense oracle computes for one invalid-instrument set.
pub struct DenseFit {
    pub theta: DVector<f64>,
    pub sigma2: f64,
    pub proj_rss: f64,
    pub log_marginal: f64,
    pub beta_mean: f64,
    pub beta_var: f64,
}

/// `Z (Z'Z)^{-1} Z'` with an LU inverse.
pub fn projector(z: &DMatrix<f64>) -> DMatrix<f64> {
    let ztz = z.transpose() * z;
    let inv = ztz.try_inverse().expect("oracle: Z'Z invertible");
    z * inv * z.transpose()
}

/// Annihilator `I - W (W'W)^{-1} W'`; identity for an empty column set.
pub fn annihilator(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    if w.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    let wtw = w.transpose() * w;
    let inv = wtw.try_inverse().expect("oracle: W'W invertible");
    DMatrix::identity(n, n) - w * inv * w.transpose()
}

/// Log-determinant through the symmetric eigendecomposition.
pub fn logdet_eigen(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().map(|v| v.ln()).sum()
}

/// Columns of `z` selected by `omega`, as an `n x |omega|` matrix.
pub fn submatrix(z: &DMatrix<f64>, omega: &[usize]) -> DMatrix<f64> {
    let n = z.nrows();
    let mut out = DMatrix::zeros(n, omega.len());
    for (k, &j) in omega.iter().enumerate() {
        out.column_mut(k).copy_from(&z.column(j));
    }
    out
}

/// `R = (d, Z_omega)`.
pub fn design(data: &Dataset, omega: &[usize]) -> DMatrix<f64> {
    let n = data.n;
    let mut r = DMatrix::zeros(n, 1 + omega.len());
    r.column_mut(0).copy_from(&data.d);
    for (k, &j) in omega.iter().enumerate() {
        r.column_mut(k + 1).copy_from(&data.z.column(j));
    }
    r
}

/// Dense evaluation of the per-model quantities.
///
/// The marginal log score is the full Gaussian integral of the moment-based
/// pseudo-likelihood over the flat prior on theta, with every
/// model-dependent factor retained:
///
/// ((k - p)/2) ln(2 pi sigma2) - 1/2 logdet(R'PR) - 1/2 logdet(Z'Z / n)
///   - proj_rss / (2 sigma2),        k = 1 + |omega|.
pub fn dense_fit(data: &Dataset, omega: &[usize]) -> DenseFit {
    let n = data.n as f64;
    let p = data.p as f64;
    let k = 1.0 + omega.len() as f64;

    let pz = projector(&data.z);
    let r = design(data, omega);
    let rpr = r.transpose() * &pz * &r;
    let rpy = r.transpose() * &pz * &data.y;
    let rpr_inv = rpr.clone().try_inverse().expect("oracle: R'PR invertible");
    let theta = &rpr_inv * rpy;

    let resid = &data.y - &r * &theta;
    let sigma2 = resid.dot(&resid) / n;
    let proj = &pz * &resid;
    let proj_rss = proj.dot(&proj);

    let ztz_over_n = (data.z.transpose() * &data.z) / n;
    let log_marginal = 0.5 * (k - p) * (2.0 * std::f64::consts::PI * sigma2).ln()
        - 0.5 * logdet_eigen(&rpr)
        - 0.5 * logdet_eigen(&ztz_over_n)
        - proj_rss / (2.0 * sigma2);

    // Conditional beta posterior via the partitioned formula:
    // beta | omega ~ N((dhat' M dhat)^{-1} dhat' M y, sigma2 (dhat' M dhat)^{-1})
    let dhat = &pz * &data.d;
    let m = annihilator(&submatrix(&data.z, omega));
    let dmd = dhat.dot(&(&m * &dhat));
    let dmy = dhat.dot(&(&m * &data.y));
    let beta_mean = dmy / dmd;
    let beta_var = sigma2 / dmd;

    DenseFit {
        theta,
        sigma2,
        proj_rss,
        log_marginal,
        beta_mean,
        beta_var,
    }
}

/// Dense evaluation of the heteroscedastic variant: residuals come from the
/// homoscedastic dense fit, the moment weight is
/// `S = n^{-1} sum_i r_i^2 z_i z_i'`, and the log score is the full Gaussian
/// integral of the weighted pseudo-likelihood:
///
/// (k/2) ln(2 pi n) - 1/2 logdet(R'Z S^{-1} Z'R) - min_q / (2n)
///   - (p/2) ln(2 pi) - 1/2 logdet(S).
pub fn dense_hetero_fit(data: &Dataset, omega: &[usize]) -> DenseFit {
    let n = data.n as f64;
    let p = data.p as f64;
    let k = 1.0 + omega.len() as f64;

    let homo = dense_fit(data, omega);
    let r = design(data, omega);
    let resid = &data.y - &r * &homo.theta;
    let mut s = DMatrix::zeros(data.p, data.p);
    for i in 0..data.n {
        let zi = data.z.row(i).transpose();
        s += &zi * zi.transpose() * (resid[i] * resid[i]);
    }
    s /= n;
    let s_inv = s.clone().try_inverse().expect("oracle: weight invertible");

    let zr = data.z.transpose() * &r;
    let zy = data.z.transpose() * &data.y;
    let h = zr.transpose() * &s_inv * &zr;
    let g = zr.transpose() * &s_inv * &zy;
    let c0 = zy.dot(&(&s_inv * &zy));
    let h_inv = h.clone().try_inverse().expect("oracle: H invertible");
    let theta = &h_inv * &g;
    let min_q = c0 - g.dot(&theta);

    let log_marginal = 0.5 * k * (2.0 * std::f64::consts::PI * n).ln()
        - 0.5 * logdet_eigen(&h)
        - min_q / (2.0 * n)
        - 0.5 * p * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * logdet_eigen(&s);

    let beta_mean = theta[0];
    let beta_var = n * h_inv[(0, 0)];
    let sigma2 = homo.sigma2;
    DenseFit {
        theta,
        sigma2,
        proj_rss: min_q,
        log_marginal,
        beta_mean,
        beta_var,
    }
}

/// Generic synthetic IV dataset with structural effect `beta`, direct
/// effects `alpha`, first-stage coefficients `eta`, and error correlation
/// `rho`; independent of the library's simulation module.
pub fn synth_dataset<R: Rng>(
    rng: &mut R,
    n: usize,
    beta: f64,
    alpha: &[f64],
    eta: &[f64],
    rho: f64,
) -> Dataset {
    let p = alpha.len();
    assert_eq!(eta.len(), p);
    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let cross = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let eps = e1;
        let nu = rho * e1 + cross * e2;
        let zi = z.row(i);
        let mut zd = 0.0;
        let mut zy = 0.0;
        for j in 0..p {
            zd += eta[j] * zi[j];
            zy += alpha[j] * zi[j];
        }
        d[i] = zd + nu;
        y[i] = beta * d[i] + zy + eps;
    }
    ivbgmm::center(y, d, z).expect("synthetic data must validate")
}
