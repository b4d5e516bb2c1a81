//! Reference estimators the model-averaging approach is compared against:
//! OLS, naive TSLS (all instruments presumed valid), oracle TSLS (true
//! invalid set known), and the median ratio estimator.
//!
//! All standard errors use the same residual-variance convention as the
//! model fits — divide by `n`, not `n − k` — and TSLS-type intervals are the
//! normal approximation `estimate ± 1.96·se`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inference::{EstimateReport, Method};
use crate::model::ModelIndex;
use crate::stats::SufficientStats;

/// Ordinary least squares of the outcome on the exposure, instruments
/// ignored. Biased whenever the exposure is confounded; reported as the
/// no-instrument reference point.
pub fn ols(stats: &SufficientStats) -> Result<EstimateReport> {
    if stats.dtd <= 0.0 {
        return Err(Error::InvalidInput("exposure is constant after centering".into()));
    }
    let beta = stats.dty / stats.dtd;
    let sigma2 = ((stats.yty - beta * stats.dty) / stats.n as f64).max(0.0);
    let se = (sigma2 / stats.dtd).sqrt();
    Ok(EstimateReport::normal_approx(Method::Ols, beta, se))
}

/// Two-stage least squares using every instrument as if it were valid:
/// `β̂ = (d̂'d̂)⁻¹ d̂'y` with `d̂` the first-stage projection of the exposure.
/// Numerically identical to the model fit at the empty invalid set, but
/// computed through its own closed-form path.
pub fn naive_tsls(stats: &SufficientStats) -> Result<EstimateReport> {
    let ztz_inv_ztd = stats.solve_ztz_vec(&stats.ztd);
    let dhat_d = stats.ztd.dot(&ztz_inv_ztd);
    let dhat_y = stats.zty.dot(&ztz_inv_ztd);
    if dhat_d <= 0.0 {
        return Err(Error::SingularModel);
    }
    let beta = dhat_y / dhat_d;
    let sigma2 =
        ((stats.yty - 2.0 * beta * stats.dty + beta * beta * stats.dtd) / stats.n as f64).max(0.0);
    let se = (sigma2 / dhat_d).sqrt();
    Ok(EstimateReport::normal_approx(Method::NaiveTsls, beta, se))
}

/// TSLS given the true invalid-instrument set: the invalid columns enter the
/// outcome equation as controls, and β is identified from the projected
/// exposure residualized on them:
///
/// ```text
///   β̂ = (d̂' M_{Z_ω} d̂)⁻¹ d̂' M_{Z_ω} y,   se = sqrt(σ̂²_ε (d̂' M_{Z_ω} d̂)⁻¹)
/// ```
///
/// computed via Schur complements of the sufficient statistics — a code path
/// independent of the joint solve used by the model fits.
pub fn oracle_tsls(stats: &SufficientStats, omega_star: &ModelIndex) -> Result<EstimateReport> {
    let p = stats.p();
    if let Some(&bad) = omega_star.omega().iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!(
            "invalid-instrument index {bad} out of range for p = {p}"
        )));
    }
    let idx = omega_star.omega();
    let k = idx.len();

    let ztz_inv_ztd = stats.solve_ztz_vec(&stats.ztd);
    let dhat_d = stats.ztd.dot(&ztz_inv_ztd);
    let dhat_y = stats.zty.dot(&ztz_inv_ztd);

    let ztz_sub = stats.ztz.select_rows(idx).select_columns(idx);
    let ztd_sub = DVector::from_iterator(k, idx.iter().map(|&j| stats.ztd[j]));
    let zty_sub = DVector::from_iterator(k, idx.iter().map(|&j| stats.zty[j]));
    // a_d = (Z_ω'Z_ω)^{-1} Z_ω'd and a_y likewise for y (empty when k = 0)
    let (a_d, a_y) = if k == 0 {
        (DVector::zeros(0), DVector::zeros(0))
    } else {
        let chol = nalgebra::Cholesky::new(crate::stats::symmetrize(ztz_sub.clone()))
            .ok_or(Error::SingularModel)?;
        (chol.solve(&ztd_sub), chol.solve(&zty_sub))
    };
    let d_md = dhat_d - ztd_sub.dot(&a_d);
    let d_my = dhat_y - ztd_sub.dot(&a_y);
    if d_md <= 0.0 {
        return Err(Error::SingularModel);
    }
    let beta = d_my / d_md;
    let alpha = a_y - a_d * beta;

    // residual variance of y - dβ̂ - Z_ω α̂, from the same moments
    let quad = beta * beta * stats.dtd
        + 2.0 * beta * alpha.dot(&ztd_sub)
        + (alpha.transpose() * &ztz_sub * &alpha)[(0, 0)];
    let lin = beta * stats.dty + alpha.dot(&zty_sub);
    let sigma2 = ((stats.yty - 2.0 * lin + quad) / stats.n as f64).max(0.0);
    let se = (sigma2 / d_md).sqrt();
    Ok(EstimateReport::normal_approx(Method::OracleTsls, beta, se))
}

/// Median ratio estimator: regress outcome and exposure on all instruments,
/// take the per-instrument ratio of reduced-form to first-stage
/// coefficients, and report the median ratio. Consistent when more than
/// half the instruments are valid easy majority; no standard-error theory
/// is attached to it here.
///
/// Returns the effect estimate and the implied direct-effect vector
/// `α̂ = γ̂ − η̂·β̂`.
pub fn median_estimator(stats: &SufficientStats) -> Result<(f64, DVector<f64>)> {
    let gamma = stats.solve_ztz_vec(&stats.zty);
    let eta = stats.solve_ztz_vec(&stats.ztd);
    for (j, e) in eta.iter().enumerate() {
        if e.abs() < 1e-12 {
            return Err(Error::ZeroFirstStage(j));
        }
    }
    let mut ratios: Vec<f64> = gamma.iter().zip(eta.iter()).map(|(g, e)| g / e).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let m = ratios.len();
    let beta_m = if m % 2 == 1 {
        ratios[m / 2]
    } else {
        0.5 * (ratios[m / 2 - 1] + ratios[m / 2])
    };
    let alpha_m = &gamma - &eta * beta_m;
    Ok((beta_m, alpha_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fit_model, ModelSpace};
    use crate::stats::{center, compute_suffstats, Dataset};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn centered(y: &[f64], d: &[f64], z: &DMatrix<f64>) -> Dataset {
        center(DVector::from_row_slice(y), DVector::from_row_slice(d), z.clone()).unwrap()
    }

    fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let z = DMatrix::from_fn(n, p, |_, _| gauss.sample(&mut rng));
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let eps: f64 = gauss.sample(&mut rng);
            let nu = 0.25 * eps + (1.0f64 - 0.0625).sqrt() * gauss.sample(&mut rng);
            let di: f64 = 0.4 * z.row(i).iter().sum::<f64>() + nu;
            d.push(di);
            y.push(0.5 * di + 0.5 * (z[(i, 0)] + z[(i, 1)]) + eps);
        }
        centered(&y, &d, &z)
    }

    #[test]
    fn ols_recovers_an_exact_linear_relationship() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let n = 80;
        let z = DMatrix::from_fn(n, 3, |_, _| gauss.sample(&mut rng));
        let d: Vec<f64> = (0..n).map(|_| gauss.sample(&mut rng)).collect();
        let y: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let stats = compute_suffstats(&centered(&y, &d, &z)).unwrap();
        let r = ols(&stats).unwrap();
        assert!((r.estimate - 2.0).abs() < 1e-12);
        assert!(r.se < 1e-10);
    }

    #[test]
    fn ols_is_zero_for_orthogonal_outcome() {
        let d = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let y = vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let z = DMatrix::from_fn(6, 2, |_, _| gauss.sample(&mut rng));
        // construction: d'y = 0 and both already have zero mean... almost —
        // y has mean 1/3, so orthogonality must be checked post-centering
        let data = centered(&y, &d, &z);
        let dy: f64 = data.d.dot(&data.y);
        if dy.abs() < 1e-12 {
            let stats = compute_suffstats(&data).unwrap();
            assert!(ols(&stats).unwrap().estimate.abs() < 1e-12);
        } else {
            // orthogonalize exactly and re-run
            let dd: f64 = data.d.dot(&data.d);
            let y2: Vec<f64> = (0..6).map(|i| data.y[i] - dy / dd * data.d[i]).collect();
            let d2: Vec<f64> = data.d.iter().copied().collect();
            let stats = compute_suffstats(&centered(&y2, &d2, &z)).unwrap();
            assert!(ols(&stats).unwrap().estimate.abs() < 1e-10);
        }
    }

    #[test]
    fn naive_tsls_agrees_with_the_empty_model_fit() {
        for seed in [3u64, 4, 5] {
            let data = random_data(seed, 150, 5);
            let stats = compute_suffstats(&data).unwrap();
            let space = ModelSpace::new(5, &[]).unwrap();
            let fit = fit_model(&stats, &space.forced_only()).unwrap();
            let r = naive_tsls(&stats).unwrap();
            assert!((r.estimate - fit.beta_mean).abs() < 1e-12);
            assert!((r.se - fit.beta_var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_tsls_agrees_with_the_model_fit_on_every_set() {
        let data = random_data(6, 200, 6);
        let stats = compute_suffstats(&data).unwrap();
        let space = ModelSpace::new(6, &[]).unwrap();
        for m in space.enumerate(1 << 20).unwrap() {
            let fit = fit_model(&stats, &m).unwrap();
            let r = oracle_tsls(&stats, &m).unwrap();
            assert!(
                (r.estimate - fit.beta_mean).abs() < 1e-12,
                "omega {:?}: {} vs {}",
                m.omega(),
                r.estimate,
                fit.beta_mean
            );
            assert!((r.se - fit.beta_var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_with_no_invalid_instruments_is_naive_tsls() {
        let data = random_data(7, 120, 4);
        let stats = compute_suffstats(&data).unwrap();
        let space = ModelSpace::new(4, &[]).unwrap();
        let naive = naive_tsls(&stats).unwrap();
        let oracle = oracle_tsls(&stats, &space.forced_only()).unwrap();
        assert_eq!(naive.estimate, oracle.estimate);
        assert_eq!(naive.se, oracle.se);
    }

    #[test]
    fn median_recovers_equal_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let n = 90;
        let z = DMatrix::from_fn(n, 3, |_, _| gauss.sample(&mut rng));
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let noise: f64 = gauss.sample(&mut rng);
            d.push(z.row(i).iter().sum::<f64>() * 0.5 + noise);
        }
        let y: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
        let stats = compute_suffstats(&centered(&y, &d, &z)).unwrap();
        let (beta_m, alpha_m) = median_estimator(&stats).unwrap();
        assert!((beta_m - 2.0).abs() < 1e-10);
        for a in alpha_m.iter() {
            assert!(a.abs() < 1e-10);
        }
    }

    #[test]
    fn median_of_hand_built_odd_ratios() {
        // y = Zγ and d = Zη exactly, with ratios γ/η = (1, 2, 5)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let n = 40;
        let z = DMatrix::from_fn(n, 3, |_, _| gauss.sample(&mut rng));
        let gamma = [1.0, 2.0, 5.0];
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            y.push((0..3).map(|j| gamma[j] * z[(i, j)]).sum());
            d.push(z.row(i).iter().sum());
        }
        let stats = compute_suffstats(&centered(&y, &d, &z)).unwrap();
        let (beta_m, _) = median_estimator(&stats).unwrap();
        assert!((beta_m - 2.0).abs() < 1e-10);
    }

    #[test]
    fn median_of_even_count_is_the_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let n = 60;
        let z = DMatrix::from_fn(n, 4, |_, _| gauss.sample(&mut rng));
        let gamma = [1.0, 2.0, 4.0, 8.0];
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            y.push((0..4).map(|j| gamma[j] * z[(i, j)]).sum());
            d.push(z.row(i).iter().sum());
        }
        let stats = compute_suffstats(&centered(&y, &d, &z)).unwrap();
        let (beta_m, _) = median_estimator(&stats).unwrap();
        assert!((beta_m - 3.0).abs() < 1e-10);
    }

    #[test]
    fn median_rejects_a_dead_first_stage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gauss = Normal::new(0.0, 1.0).unwrap();
        let n = 50;
        let z = DMatrix::from_fn(n, 3, |_, _| gauss.sample(&mut rng));
        let mut y = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            // exposure loads on the first two instruments only
            d.push(z[(i, 0)] + z[(i, 1)]);
            y.push(z[(i, 2)] + 0.5 * z[(i, 0)]);
        }
        let stats = compute_suffstats(&centered(&y, &d, &z)).unwrap();
        match median_estimator(&stats) {
            Err(Error::ZeroFirstStage(2)) => {}
            other => panic!("expected ZeroFirstStage(2), got {other:?}"),
        }
    }

    #[test]
    fn median_is_invariant_to_instrument_order() {
        let data = random_data(12, 100, 5);
        let stats = compute_suffstats(&data).unwrap();
        let (beta_a, _) = median_estimator(&stats).unwrap();

        // permute the instrument columns and recompute from raw vectors
        let n = data.n;
        let perm = [3usize, 0, 4, 2, 1];
        let z2 = DMatrix::from_fn(n, 5, |i, j| data.z[(i, perm[j])]);
        let y2: Vec<f64> = data.y.iter().copied().collect();
        let d2: Vec<f64> = data.d.iter().copied().collect();
        let stats2 = compute_suffstats(&centered(&y2, &d2, &z2)).unwrap();
        let (beta_b, _) = median_estimator(&stats2).unwrap();
        assert!((beta_a - beta_b).abs() < 1e-12);
    }
}
