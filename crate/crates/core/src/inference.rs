//! Model-averaged posterior of the causal effect and its summaries.
//!
//! Given the acceptable model set, the posterior of β is a finite Gaussian
//! mixture: one conditional normal per acceptable model, weighted by the
//! normalized marginal scores. The point estimate is the mixture mean, the
//! standard error is the square root of the full mixture variance (law of
//! total variance), and the 95% interval is equal-tailed (2.5%/97.5%
//! mixture quantiles found by bisection).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{fit_model, hetero_fit_model, ModelFit, ModelIndex, ModelSpace};
use crate::search::{escort_probs, AcceptableSet, EXHAUSTIVE_LIMIT};
use crate::stats::{Dataset, SufficientStats};

/// Estimator identities, in the canonical reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Ordinary least squares of y on d (ignores instruments entirely).
    Ols,
    /// Two-stage least squares treating every instrument as valid.
    NaiveTsls,
    /// Median of the per-instrument ratio estimates.
    Median,
    /// Model average over the full admissible model space.
    TraditionalBayes,
    /// Model average over the truncated (acceptable) model set.
    ProposedBayes,
    /// Two-stage least squares given the true invalid set.
    OracleTsls,
}

impl Method {
    /// Every method, in canonical reporting order.
    pub const ALL: [Method; 6] = [
        Method::Ols,
        Method::NaiveTsls,
        Method::Median,
        Method::TraditionalBayes,
        Method::ProposedBayes,
        Method::OracleTsls,
    ];

    /// Stable machine-readable tag (used in CSV/JSON output).
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::NaiveTsls => "naive_tsls",
            Method::Median => "median",
            Method::TraditionalBayes => "traditional_bayes",
            Method::ProposedBayes => "proposed_bayes",
            Method::OracleTsls => "oracle_tsls",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// A finite Gaussian mixture for β: `(weight, mean, variance)` per model.
#[derive(Clone, Debug)]
pub struct BetaPosterior {
    components: Vec<(f64, f64, f64)>,
}

impl BetaPosterior {
    /// Builds a mixture, validating that weights are a probability vector
    /// (sum within 1e-12 of one) and variances are finite and nonnegative.
    pub fn new(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        let mut total = 0.0;
        for &(w, m, v) in &components {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!("bad mixture weight {w}")));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("mixture component mean"));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("bad mixture variance {v}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(BetaPosterior { components })
    }

    /// `(weight, mean, variance)` triples.
    pub fn components(&self) -> &[(f64, f64, f64)] {
        &self.components
    }
}

/// Normalized posterior weights of the acceptable models, aligned with
/// [`AcceptableSet::iter`] order: `exp(score − log-sum-exp of scores)`.
pub fn acceptable_weights(a: &AcceptableSet) -> Result<Vec<f64>> {
    let scores: Vec<f64> = a.iter().map(|(_, s)| s).collect();
    escort_probs(&scores, 1.0)
}

/// Mixture posterior of β over the acceptable set; each model's component
/// is the conditional normal from its fit, weighted by normalized scores.
pub fn beta_posterior(
    a: &AcceptableSet,
    fits: &HashMap<ModelIndex, ModelFit>,
) -> Result<BetaPosterior> {
    if a.is_empty() {
        return Err(Error::AllSingular);
    }
    let weights = acceptable_weights(a)?;
    let mut components = Vec::with_capacity(weights.len());
    for ((model, _), w) in a.iter().zip(weights) {
        let fit = fits.get(model).ok_or(Error::MissingFit)?;
        components.push((w, fit.beta_mean, fit.beta_var));
    }
    BetaPosterior::new(components)
}

/// Fits every acceptable model, keyed by its index set.
pub fn fit_acceptable(
    stats: &SufficientStats,
    a: &AcceptableSet,
) -> Result<HashMap<ModelIndex, ModelFit>> {
    let mut fits = HashMap::with_capacity(a.len());
    for (model, _) in a.iter() {
        fits.insert(model.clone(), fit_model(stats, model)?);
    }
    Ok(fits)
}

/// Heteroscedastic counterpart of [`fit_acceptable`].
pub fn hetero_fit_acceptable(
    data: &Dataset,
    stats: &SufficientStats,
    a: &AcceptableSet,
) -> Result<HashMap<ModelIndex, ModelFit>> {
    let mut fits = HashMap::with_capacity(a.len());
    for (model, _) in a.iter() {
        fits.insert(model.clone(), hetero_fit_model(data, stats, model)?);
    }
    Ok(fits)
}

/// Untruncated model average: every admissible model, weighted by its
/// marginal score. Exhaustive by construction, so it is guarded by the
/// enumeration limit. Singular models get zero weight.
pub fn traditional_beta_posterior(
    stats: &SufficientStats,
    p: usize,
    forced: &[usize],
) -> Result<BetaPosterior> {
    let space = ModelSpace::new(p, forced)?;
    let models = space.enumerate(EXHAUSTIVE_LIMIT)?;
    let mut scores = Vec::with_capacity(models.len());
    let mut fits: Vec<Option<ModelFit>> = Vec::with_capacity(models.len());
    for m in &models {
        match fit_model(stats, m) {
            Ok(f) => {
                scores.push(f.log_marginal);
                fits.push(Some(f));
            }
            Err(_) => {
                scores.push(f64::NEG_INFINITY);
                fits.push(None);
            }
        }
    }
    let weights = escort_probs(&scores, 1.0)?;
    let components: Vec<(f64, f64, f64)> = weights
        .into_iter()
        .zip(&fits)
        .filter_map(|(w, f)| f.as_ref().map(|f| (w, f.beta_mean, f.beta_var)))
        .collect();
    BetaPosterior::new(components)
}

/// Mixture mean: `Σ wᵢ mᵢ`.
pub fn mixture_mean(post: &BetaPosterior) -> f64 {
    post.components.iter().map(|(w, m, _)| w * m).sum()
}

/// Full mixture variance by the law of total variance,
/// `Σ wᵢ (vᵢ + mᵢ²) − mean²`, evaluated in the cancellation-free form
/// `Σ wᵢ vᵢ + Σ wᵢ (mᵢ − mean)²` so a single-component mixture returns its
/// component variance exactly.
pub fn mixture_variance(post: &BetaPosterior) -> f64 {
    let mean = mixture_mean(post);
    post.components
        .iter()
        .map(|(w, m, v)| w * v + w * (m - mean) * (m - mean))
        .sum()
}

/// Mixture CDF at `x`. A zero-variance component contributes a unit step at
/// its mean.
pub fn mixture_cdf(post: &BetaPosterior, x: f64) -> f64 {
    let mut acc = 0.0;
    for &(w, m, v) in &post.components {
        if v > 0.0 {
            // std dev is positive and finite here, so the constructor cannot fail
            let normal = Normal::new(m, v.sqrt()).expect("valid normal component");
            acc += w * normal.cdf(x);
        } else if x >= m {
            acc += w;
        }
    }
    acc
}

/// Mixture quantile by bisection. The initial bracket spans every component
/// mean ± 10 standard deviations and widens adaptively if the target mass
/// still lies outside.
pub fn mixture_quantile(post: &BetaPosterior, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!("quantile level must be in (0,1), got {q}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, m, v) in &post.components {
        let s = v.sqrt();
        lo = lo.min(m - 10.0 * s);
        hi = hi.max(m + 10.0 * s);
    }
    let mut pad = (hi - lo).max(1.0);
    while mixture_cdf(post, lo) > q {
        lo -= pad;
        pad *= 2.0;
    }
    let mut pad = (hi - lo).max(1.0);
    while mixture_cdf(post, hi) < q {
        hi += pad;
        pad *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let c = mixture_cdf(post, mid);
        if (c - q).abs() <= 1e-12 {
            return Ok(mid);
        }
        if c < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Per-instrument posterior probability of validity: entry `j` sums the
/// weights of acceptable models that do NOT flag instrument `j` as invalid.
/// Forced-invalid indices therefore come out exactly 0.
pub fn validity_probabilities(a: &AcceptableSet, p: usize) -> Result<Vec<f64>> {
    let weights = acceptable_weights(a)?;
    let mut probs = vec![0.0; p];
    for ((model, _), w) in a.iter().zip(weights) {
        if let Some(&bad) = model.omega().iter().find(|&&j| j >= p) {
            return Err(Error::InvalidInput(format!(
                "model flags instrument {bad}, out of range for p = {p}"
            )));
        }
        for (j, slot) in probs.iter_mut().enumerate() {
            if !model.contains(j) {
                *slot += w;
            }
        }
    }
    Ok(probs)
}

/// One estimator's reported summary: point estimate, standard error, and a
/// 95% interval, plus per-instrument validity probabilities when the method
/// produces them.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    /// Which estimator produced this report.
    pub method: Method,
    /// Point estimate of β.
    pub estimate: f64,
    /// Standard error (posterior SD for Bayes methods).
    pub se: f64,
    /// Lower end of the 95% interval.
    pub lo: f64,
    /// Upper end of the 95% interval.
    pub hi: f64,
    /// Posterior probability each instrument is valid (Bayes methods only).
    pub validity: Option<Vec<f64>>,
}

impl EstimateReport {
    /// Report with a normal-approximation interval `estimate ± 1.96·se`.
    pub fn normal_approx(method: Method, estimate: f64, se: f64) -> Self {
        EstimateReport {
            method,
            estimate,
            se,
            lo: estimate - 1.96 * se,
            hi: estimate + 1.96 * se,
            validity: None,
        }
    }

    /// Report summarizing a mixture posterior: mean, full-mixture SD, and
    /// the equal-tailed 95% credible interval.
    pub fn from_posterior(
        method: Method,
        post: &BetaPosterior,
        validity: Option<Vec<f64>>,
    ) -> Result<Self> {
        Ok(EstimateReport {
            method,
            estimate: mixture_mean(post),
            se: mixture_variance(post).sqrt(),
            lo: mixture_quantile(post, 0.025)?,
            hi: mixture_quantile(post, 0.975)?,
            validity,
        })
    }
}
