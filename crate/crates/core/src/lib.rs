//! Causal-effect estimation with many instrumental variables when some
//! instruments may be invalid (directly affecting the outcome).
//!
//! The centerpiece is a likelihood-free Bayesian estimator: each candidate
//! set ω of invalid instruments gets a GMM pseudo-likelihood score, a
//! shotgun stochastic search collects the models whose posterior mass is
//! within a factor `c` of the best one found, and the causal effect β is
//! summarized from the resulting mixture of conditional normals. Reference
//! estimators (OLS, naïve and oracle TSLS, the median estimator) and a
//! Monte Carlo harness for the standard simulation designs are included.
//!
//! Modules:
//! - [`stats`]: centering, sufficient statistics, SPD helpers.
//! - [`model`]: per-ω fits, marginal scores, heteroscedastic variant.
//! - [`search`]: escort-weighted shotgun search and exhaustive enumeration.
//! - [`inference`]: model-averaged β posterior and report summaries.
//! - [`baselines`]: OLS, naïve/oracle TSLS, median estimator.
//! - [`simulate`]: data-generating processes and the Monte Carlo driver.

pub mod baselines;
pub mod error;
pub mod inference;
pub mod model;
pub mod search;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use inference::{
    acceptable_weights, beta_posterior, fit_acceptable, hetero_fit_acceptable, mixture_cdf,
    mixture_mean, mixture_quantile, mixture_variance, traditional_beta_posterior,
    validity_probabilities, BetaPosterior, EstimateReport, Method,
};
pub use model::{
    fit_model, hetero_fit_model, log_marginal, CardinalityRule, ModelFit, ModelIndex, ModelSpace,
};
pub use search::{
    escort_probs, exhaustive_search, hetero_marginal_evaluator, marginal_evaluator,
    shotgun_search, AcceptableSet, SearchConfig, EXHAUSTIVE_LIMIT,
};
pub use simulate::{
    gen_dataset, gen_dataset_skeleton, replicate_rngs, run_monte_carlo, DgpCase, DgpModel,
    DgpSpec, DgpTruth, McSummary, MethodSummary, SIM_OMEGA_STAR, SIM_P,
};
pub use stats::{center, compute_suffstats, logdet_spd, spd_solve, Dataset, SufficientStats};

pub use baselines::{median_estimator, naive_tsls, ols, oracle_tsls};
