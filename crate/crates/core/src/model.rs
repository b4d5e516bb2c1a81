//! Per-model computations for one invalid-instrument set ω: the GMM
//! pseudo-likelihood fit, its conditional β posterior, the marginal log
//! score used to weight models, and the heteroscedastic one-step variant.
//!
//! # Score normalization
//!
//! The pseudo-likelihood of the moment vector `n^{-1} Z'(y - R_ω θ)` is a
//! Gaussian density whose variance estimate `σ̂²_ε(ω) = n^{-1}‖y - ŷ_ω‖²`
//! depends on the model, so no `σ̂²`-dependent factor can be treated as a
//! shared constant. The log marginal score is therefore the *complete*
//! Gaussian integral of that density over the flat prior on θ_ω:
//!
//! ```text
//! log_marginal(ω) = ((k − p)/2)·ln(2π·σ̂²_ε)
//!                   − ½·logdet(R'_ω P_Z R_ω)
//!                   − ½·logdet(n⁻¹ Z'Z)
//!                   − ‖P_Z(y − ŷ_ω)‖² / (2σ̂²_ε),        k = 1 + |ω|.
//! ```
//!
//! Every quantity above is evaluated from [`SufficientStats`] alone via
//! `A = Z'R_ω`, `R'_ω P_Z R_ω = A'(Z'Z)⁻¹A`, `R'_ω P_Z y = A'(Z'Z)⁻¹Z'y`,
//! and `‖P_Z(y − ŷ_ω)‖² = (Z'y − Aθ̂)'(Z'Z)⁻¹(Z'y − Aθ̂)`. This one
//! statement is the normalization used everywhere in the crate (model
//! search, truncated and exhaustive averaging, validity probabilities).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::{symmetrize, Dataset, SufficientStats};

const LN_2PI: f64 = 1.8378770664093453;

/// How the identifiability constraint counts indices when a forced-invalid
/// block is present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CardinalityRule {
    /// `|ω \ forced| < (p − |forced|)/2`: the constraint applies to the
    /// candidate block only (the default).
    CandidateBlock,
    /// `|ω| < p/2`: forced indices count against the limit too.
    TotalCount,
}

/// One invalid-instrument set: the sorted index list `omega` together with
/// the forced-invalid block it always contains.
///
/// Instances are only constructed through [`ModelSpace`], which enforces
/// range, uniqueness, forced-containment, and the cardinality constraint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelIndex {
    omega: Vec<usize>,
    forced: Vec<usize>,
}

impl ModelIndex {
    /// All invalid indices, strictly increasing.
    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    /// The forced-invalid block, strictly increasing.
    pub fn forced(&self) -> &[usize] {
        &self.forced
    }

    /// Free (non-forced) invalid indices, strictly increasing.
    pub fn candidates(&self) -> Vec<usize> {
        self.omega
            .iter()
            .copied()
            .filter(|j| self.forced.binary_search(j).is_err())
            .collect()
    }

    /// Number of invalid indices including the forced block.
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    /// True when even the forced block is empty.
    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Number of non-forced invalid indices.
    pub fn candidate_len(&self) -> usize {
        self.omega.len() - self.forced.len()
    }

    /// Whether instrument `j` is treated as invalid under this model.
    pub fn contains(&self, j: usize) -> bool {
        self.omega.binary_search(&j).is_ok()
    }
}

/// The space of admissible invalid-instrument sets for a given instrument
/// count, forced block, and cardinality rule. All [`ModelIndex`] values are
/// minted here so their invariants hold by construction.
#[derive(Clone, Debug)]
pub struct ModelSpace {
    p: usize,
    forced: Vec<usize>,
    free: Vec<usize>,
    rule: CardinalityRule,
    max_candidate_len: usize,
}

impl ModelSpace {
    /// Space over `p` instruments with the given forced-invalid block and
    /// the default candidate-block cardinality rule.
    pub fn new(p: usize, forced: &[usize]) -> Result<Self> {
        Self::with_rule(p, forced, CardinalityRule::CandidateBlock)
    }

    /// Space with an explicit cardinality rule.
    pub fn with_rule(p: usize, forced: &[usize], rule: CardinalityRule) -> Result<Self> {
        if p < 1 {
            return Err(Error::InvalidInput("need at least one instrument".into()));
        }
        let mut forced: Vec<usize> = forced.to_vec();
        forced.sort_unstable();
        forced.dedup();
        if let Some(&bad) = forced.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidInput(format!(
                "forced-invalid index {bad} out of range for p = {p}"
            )));
        }
        let free_count = p - forced.len();
        if free_count == 0 {
            return Err(Error::InvalidInput(
                "every instrument is forced invalid; nothing is left to identify the effect".into(),
            ));
        }
        let max_candidate_len = match rule {
            // largest k with k < free_count / 2
            CardinalityRule::CandidateBlock => (free_count - 1) / 2,
            // largest k with |forced| + k < p / 2
            CardinalityRule::TotalCount => {
                let cap = (p - 1) / 2; // largest admissible |omega|
                match cap.checked_sub(forced.len()) {
                    Some(k) => k,
                    None => {
                        return Err(Error::InvalidInput(
                            "forced-invalid block alone violates the cardinality constraint".into(),
                        ))
                    }
                }
            }
        };
        let free = (0..p).filter(|j| forced.binary_search(j).is_err()).collect();
        Ok(ModelSpace { p, forced, free, rule, max_candidate_len })
    }

    /// Instrument count.
    pub fn p(&self) -> usize {
        self.p
    }

    /// The forced-invalid block.
    pub fn forced(&self) -> &[usize] {
        &self.forced
    }

    /// Indices not in the forced block, strictly increasing.
    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    /// The active cardinality rule.
    pub fn rule(&self) -> CardinalityRule {
        self.rule
    }

    /// Largest admissible number of non-forced invalid indices.
    pub fn max_candidate_len(&self) -> usize {
        self.max_candidate_len
    }

    /// Builds the model whose non-forced invalid indices are `candidates`.
    pub fn model(&self, candidates: &[usize]) -> Result<ModelIndex> {
        let mut cand: Vec<usize> = candidates.to_vec();
        cand.sort_unstable();
        let before = cand.len();
        cand.dedup();
        if cand.len() != before {
            return Err(Error::InvalidInput("duplicate candidate index".into()));
        }
        for &j in &cand {
            if j >= self.p {
                return Err(Error::InvalidInput(format!(
                    "candidate index {j} out of range for p = {}",
                    self.p
                )));
            }
            if self.forced.binary_search(&j).is_ok() {
                return Err(Error::InvalidInput(format!(
                    "index {j} is already in the forced-invalid block"
                )));
            }
        }
        if cand.len() > self.max_candidate_len {
            return Err(Error::InvalidInput(format!(
                "{} candidate indices exceed the cardinality limit of {}",
                cand.len(),
                self.max_candidate_len
            )));
        }
        let mut omega = self.forced.clone();
        omega.extend_from_slice(&cand);
        omega.sort_unstable();
        Ok(ModelIndex { omega, forced: self.forced.clone() })
    }

    /// The default starting model: forced block only.
    pub fn forced_only(&self) -> ModelIndex {
        ModelIndex { omega: self.forced.clone(), forced: self.forced.clone() }
    }

    /// Checks that `m` belongs to this space.
    pub fn validate(&self, m: &ModelIndex) -> Result<()> {
        if m.forced != self.forced {
            return Err(Error::InvalidInput("model carries a different forced block".into()));
        }
        self.model(&m.candidates()).map(|_| ())
    }

    /// All single-index moves from `m`: first each removal of a non-forced
    /// index (ascending), then each admissible addition of an absent index
    /// (ascending). `m` itself is never included.
    pub fn neighborhood(&self, m: &ModelIndex) -> Vec<ModelIndex> {
        let cand = m.candidates();
        let mut out = Vec::with_capacity(self.p);
        for drop in &cand {
            let rest: Vec<usize> = cand.iter().copied().filter(|j| j != drop).collect();
            out.push(self.model(&rest).expect("removal stays admissible"));
        }
        if cand.len() < self.max_candidate_len {
            for &j in &self.free {
                if m.contains(j) {
                    continue;
                }
                let mut grown = cand.clone();
                grown.push(j);
                out.push(self.model(&grown).expect("checked addition"));
            }
        }
        out
    }

    /// Number of admissible models, saturating at `u128::MAX`.
    pub fn model_count(&self) -> u128 {
        let nc = self.free.len() as u128;
        let mut total: u128 = 0;
        let mut binom: u128 = 1; // C(nc, 0)
        for k in 0..=(self.max_candidate_len as u128) {
            if k > 0 {
                binom = match binom
                    .checked_mul(nc - (k - 1))
                    .map(|v| v / k)
                {
                    Some(v) => v,
                    None => return u128::MAX,
                };
            }
            total = match total.checked_add(binom) {
                Some(v) => v,
                None => return u128::MAX,
            };
        }
        total
    }

    /// Enumerates every admissible model, ordered by candidate-set size and
    /// lexicographically within each size. Guarded by `limit` (the
    /// exhaustive-search cap).
    pub fn enumerate(&self, limit: u128) -> Result<Vec<ModelIndex>> {
        let count = self.model_count();
        if count > limit {
            return Err(Error::TooLargeForExhaustive { count, limit });
        }
        let mut out = Vec::with_capacity(count as usize);
        let nc = self.free.len();
        for size in 0..=self.max_candidate_len.min(nc) {
            // Lexicographic combinations of `size` positions out of nc.
            let mut idx: Vec<usize> = (0..size).collect();
            loop {
                let cand: Vec<usize> = idx.iter().map(|&i| self.free[i]).collect();
                out.push(self.model(&cand).expect("enumerated model admissible"));
                // Advance to the next combination, rightmost position first.
                let mut pos = size;
                let mut advanced = false;
                while pos > 0 {
                    pos -= 1;
                    if idx[pos] != pos + nc - size {
                        idx[pos] += 1;
                        for q in (pos + 1)..size {
                            idx[q] = idx[q - 1] + 1;
                        }
                        advanced = true;
                        break;
                    }
                }
                if !advanced {
                    break;
                }
            }
        }
        debug_assert_eq!(out.len() as u128, count);
        Ok(out)
    }
}

/// The fitted state of one model: GMM point estimates, residual variance,
/// marginal log score, and the conditional β posterior.
#[derive(Clone, Debug)]
pub struct ModelFit {
    /// The invalid-instrument set this fit belongs to.
    pub omega: ModelIndex,
    /// `(β̂, α̂_ω)`: the minimizer of the projected moment quadratic.
    pub theta_hat: DVector<f64>,
    /// `σ̂²_ε = n⁻¹ ‖y − ŷ_ω‖²`.
    pub sigma2_hat: f64,
    /// Marginal log score under the normalization stated in the module docs.
    pub log_marginal: f64,
    /// Mean of the conditional posterior `β | ω, D`.
    pub beta_mean: f64,
    /// Variance of the conditional posterior `β | ω, D`.
    pub beta_var: f64,
}

/// Assembles `A = Z'R_ω = [Z'd, (Z'Z)_{·,ω}]` (`p x k`).
fn cross_design(stats: &SufficientStats, omega: &ModelIndex) -> DMatrix<f64> {
    let p = stats.p();
    let k = 1 + omega.len();
    let mut a = DMatrix::zeros(p, k);
    a.column_mut(0).copy_from(&stats.ztd);
    for (col, &j) in omega.omega().iter().enumerate() {
        a.column_mut(col + 1).copy_from(&stats.ztz.column(j));
    }
    a
}

/// `R'_ω y` and `R'_ω R_ω` assembled from the cross products.
fn design_moments(stats: &SufficientStats, omega: &ModelIndex) -> (DVector<f64>, DMatrix<f64>) {
    let k = 1 + omega.len();
    let mut rty = DVector::zeros(k);
    rty[0] = stats.dty;
    let mut rtr = DMatrix::zeros(k, k);
    rtr[(0, 0)] = stats.dtd;
    for (a, &j) in omega.omega().iter().enumerate() {
        rty[a + 1] = stats.zty[j];
        rtr[(0, a + 1)] = stats.ztd[j];
        rtr[(a + 1, 0)] = stats.ztd[j];
        for (b, &l) in omega.omega().iter().enumerate() {
            rtr[(a + 1, b + 1)] = stats.ztz[(j, l)];
        }
    }
    (rty, rtr)
}

fn logdet_from_chol(chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Fits one model from sufficient statistics alone: O(p³) regardless of n.
///
/// Returns [`Error::SingularModel`] when `A'(Z'Z)⁻¹A` is not positive
/// definite (collinear design through the projection); the search layer
/// turns that into a −∞ score instead of aborting.
pub fn fit_model(stats: &SufficientStats, omega: &ModelIndex) -> Result<ModelFit> {
    let p = stats.p();
    let n = stats.n as f64;
    let k = 1 + omega.len();
    if omega.omega().last().is_some_and(|&j| j >= p) {
        return Err(Error::InvalidInput(format!(
            "model index out of range for p = {p}"
        )));
    }

    let a = cross_design(stats, omega);
    let w = stats.solve_ztz(&a); // (Z'Z)^{-1} A
    let gram = symmetrize(a.transpose() * &w); // R'PzR
    let chol = Cholesky::new(gram).ok_or(Error::SingularModel)?;
    let rpy = w.transpose() * &stats.zty; // A'(Z'Z)^{-1} Z'y
    let theta = chol.solve(&rpy);

    let (rty, rtr) = design_moments(stats, omega);
    let sigma2 = ((stats.yty - 2.0 * theta.dot(&rty) + theta.dot(&(&rtr * &theta))) / n).max(0.0);

    // ‖Pz (y - yhat)‖² from the moment residual Z'y - A theta.
    let moment_resid = &stats.zty - &a * &theta;
    let proj_rss = moment_resid.dot(&stats.solve_ztz_vec(&moment_resid)).max(0.0);

    let logdet_gram = logdet_from_chol(&chol);
    let logdet_ztz_over_n = stats.logdet_ztz() - (p as f64) * n.ln();
    let log_marginal = if sigma2 > 0.0 {
        0.5 * (k as f64 - p as f64) * (LN_2PI + sigma2.ln())
            - 0.5 * logdet_gram
            - 0.5 * logdet_ztz_over_n
            - proj_rss / (2.0 * sigma2)
    } else {
        // Degenerate zero-residual fit: the pseudo-likelihood has no finite
        // normalization. Treat the model as infinitely favored.
        f64::INFINITY
    };

    // (1,1) entry of (R'PzR)^{-1} for the conditional beta variance.
    let mut e0 = DVector::zeros(k);
    e0[0] = 1.0;
    let inv_col = chol.solve(&e0);
    let beta_var = sigma2 * inv_col[0];

    Ok(ModelFit {
        omega: omega.clone(),
        beta_mean: theta[0],
        theta_hat: theta,
        sigma2_hat: sigma2,
        log_marginal,
        beta_var,
    })
}

/// Marginal log score accessor; same code path as [`fit_model`].
pub fn log_marginal(stats: &SufficientStats, omega: &ModelIndex) -> Result<f64> {
    fit_model(stats, omega).map(|f| f.log_marginal)
}

/// `n^{-1} Z' Diag(r ∘ r) Z`: the residual-weighted moment covariance.
pub(crate) fn moment_weight(z: &DMatrix<f64>, resid: &DVector<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut scaled = z.clone();
    for i in 0..n {
        let r = resid[i];
        scaled.row_mut(i).apply(|v| *v *= r);
    }
    symmetrize(scaled.transpose() * scaled / (n as f64))
}

/// One-step feasible heteroscedastic fit: residuals from the homoscedastic
/// fit weight the moment covariance, and the marginal log score is again the
/// complete Gaussian integral of the weighted pseudo-likelihood:
///
/// ```text
/// (k/2)·ln(2πn) − ½·logdet(R'Z Σ̂⁻¹ Z'R) − min_θ(q)/(2n)
///   − (p/2)·ln(2π) − ½·logdet(Σ̂),     Σ̂ = n⁻¹ Z' Diag{rr'} Z.
/// ```
///
/// `stats` must be the sufficient statistics of `data`.
pub fn hetero_fit_model(
    data: &Dataset,
    stats: &SufficientStats,
    omega: &ModelIndex,
) -> Result<ModelFit> {
    let p = stats.p();
    let n = stats.n as f64;
    let k = 1 + omega.len();

    let homo = fit_model(stats, omega)?;

    // n-dimensional residual of the homoscedastic fit.
    let mut resid = data.y.clone();
    resid.axpy(-homo.theta_hat[0], &data.d, 1.0);
    for (idx, &j) in omega.omega().iter().enumerate() {
        resid.axpy(-homo.theta_hat[idx + 1], &data.z.column(j).into_owned(), 1.0);
    }

    let weight = moment_weight(&data.z, &resid);
    let chol_w = Cholesky::new(weight).ok_or(Error::SingularWeight)?;

    let a = cross_design(stats, omega);
    let sa = chol_w.solve(&a); // Σ̂^{-1} A
    let h = symmetrize(a.transpose() * &sa);
    let chol_h = Cholesky::new(h).ok_or(Error::SingularModel)?;
    let g = sa.transpose() * &stats.zty;
    let theta = chol_h.solve(&g);
    let c0 = stats.zty.dot(&chol_w.solve(&stats.zty));
    let min_q = (c0 - g.dot(&theta)).max(0.0);

    let log_marginal = 0.5 * (k as f64) * (LN_2PI + n.ln())
        - 0.5 * logdet_from_chol(&chol_h)
        - min_q / (2.0 * n)
        - 0.5 * (p as f64) * LN_2PI
        - 0.5 * logdet_from_chol(&chol_w);

    let mut e0 = DVector::zeros(k);
    e0[0] = 1.0;
    let beta_var = n * chol_h.solve(&e0)[0];

    Ok(ModelFit {
        omega: omega.clone(),
        beta_mean: theta[0],
        theta_hat: theta,
        sigma2_hat: homo.sigma2_hat,
        log_marginal,
        beta_var,
    })
}
