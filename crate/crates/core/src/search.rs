//! Stochastic shotgun search over invalid-instrument sets, maintaining the
//! acceptable model set: the models whose posterior mass is within a factor
//! `c` of the best model seen.
//!
//! Each iteration scores the full single-move neighborhood of the current
//! model, re-thresholds the acceptable set against the running maximum over
//! everything scored so far, and samples the next model from the
//! neighborhood with escort probabilities (posterior mass raised to the
//! power `tau`, which flattens the landscape for `tau < 1` so the chain
//! does not get stuck at a local mode). Scores are cached, so no model is
//! evaluated twice per search.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelIndex, ModelSpace};

/// Cap on exhaustive enumeration (number of models).
pub const EXHAUSTIVE_LIMIT: u128 = 1 << 20;

/// Tuning knobs of the shotgun search.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Number of chain iterations.
    pub iterations: usize,
    /// Acceptance ratio threshold: models within a factor `c` of the best
    /// posterior mass stay in the acceptable set.
    pub c: f64,
    /// Escort order for the proposal distribution (0 < tau, typically < 1).
    pub tau: f64,
    /// Seed of the search's own random stream.
    pub seed: u64,
    /// Starting model; defaults to the forced-invalid block alone.
    pub initial: Option<ModelIndex>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { iterations: 1000, c: 3.0, tau: 0.1, seed: 0, initial: None }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidInput("need at least one search iteration".into()));
        }
        if !(self.c >= 1.0) {
            return Err(Error::InvalidInput(format!("threshold c must be >= 1, got {}", self.c)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// The set of models whose log score is within `ln c` of the best score
/// observed, together with those scores.
#[derive(Clone, Debug)]
pub struct AcceptableSet {
    entries: BTreeMap<ModelIndex, f64>,
    c: f64,
    log_c: f64,
    log_max: f64,
}

impl AcceptableSet {
    /// Empty set with the given ratio threshold (`c >= 1`).
    pub fn new(c: f64) -> Result<Self> {
        if !(c >= 1.0) {
            return Err(Error::InvalidInput(format!("threshold c must be >= 1, got {c}")));
        }
        Ok(AcceptableSet { entries: BTreeMap::new(), c, log_c: c.ln(), log_max: f64::NEG_INFINITY })
    }

    /// Offers a scored model; keeps it only while its score stays within
    /// `ln c` of the running maximum. Singular models (score -inf, or NaN)
    /// are never admitted.
    pub fn insert(&mut self, model: &ModelIndex, score: f64) {
        if score.is_nan() || score == f64::NEG_INFINITY {
            return;
        }
        if score < self.log_max - self.log_c {
            return;
        }
        self.entries.insert(model.clone(), score);
        if score > self.log_max {
            self.log_max = score;
            let floor = self.log_max - self.log_c;
            self.entries.retain(|_, s| *s >= floor);
        }
    }

    /// Ratio threshold.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Best log score seen (not merely best retained).
    pub fn log_max(&self) -> f64 {
        self.log_max
    }

    /// Number of acceptable models.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when nothing has been admitted.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Acceptable models and their log scores, ascending by index set.
    pub fn iter(&self) -> impl Iterator<Item = (&ModelIndex, f64)> {
        self.entries.iter().map(|(m, s)| (m, *s))
    }

    /// The highest-scoring model; ties go to the lexicographically smallest
    /// index set.
    pub fn best_model(&self) -> Option<(&ModelIndex, f64)> {
        let mut best: Option<(&ModelIndex, f64)> = None;
        for (m, s) in self.iter() {
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((m, s)),
            }
        }
        best
    }

    /// Log score of a member, if present.
    pub fn score_of(&self, m: &ModelIndex) -> Option<f64> {
        self.entries.get(m).copied()
    }
}

/// Escort probabilities: mass proportional to `exp(tau * score)`, computed
/// with log-sum-exp. `-inf` scores receive probability 0; if any score is
/// `+inf` (degenerate perfect fit) the mass is split evenly among those.
pub fn escort_probs(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if scores.iter().all(|s| *s == f64::NEG_INFINITY || s.is_nan()) {
        return Err(Error::AllSingular);
    }
    let n_top = scores.iter().filter(|s| **s == f64::INFINITY).count();
    if n_top > 0 {
        let share = 1.0 / n_top as f64;
        return Ok(scores
            .iter()
            .map(|s| if *s == f64::INFINITY { share } else { 0.0 })
            .collect());
    }
    let m = scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores
        .iter()
        .map(|s| if s.is_finite() { (tau * (s - m)).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn cached_score<F: FnMut(&ModelIndex) -> f64>(
    cache: &mut HashMap<ModelIndex, f64>,
    evaluator: &mut F,
    model: &ModelIndex,
) -> f64 {
    if let Some(s) = cache.get(model) {
        return *s;
    }
    let s = evaluator(model);
    cache.insert(model.clone(), s);
    s
}

/// Runs the shotgun stochastic search and returns the acceptable set.
///
/// The evaluator returns the marginal log score of a model, or `-inf` for a
/// singular one (see [`marginal_evaluator`]). Identical configurations and
/// seeds produce identical results. Errors with [`Error::AllSingular`] only
/// if the initial model and its entire neighborhood are singular.
pub fn shotgun_search<F: FnMut(&ModelIndex) -> f64>(
    mut evaluator: F,
    space: &ModelSpace,
    config: &SearchConfig,
) -> Result<AcceptableSet> {
    config.validate()?;
    let initial = match &config.initial {
        Some(m) => {
            space.validate(m)?;
            m.clone()
        }
        None => space.forced_only(),
    };

    let mut cache: HashMap<ModelIndex, f64> = HashMap::new();
    let mut accept = AcceptableSet::new(config.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let s0 = cached_score(&mut cache, &mut evaluator, &initial);
    accept.insert(&initial, s0);
    let mut current = initial;

    for _ in 0..config.iterations {
        let mut nbd = space.neighborhood(&current);
        if nbd.is_empty() {
            break;
        }
        let scores: Vec<f64> = nbd
            .iter()
            .map(|m| cached_score(&mut cache, &mut evaluator, m))
            .collect();
        for (m, s) in nbd.iter().zip(&scores) {
            accept.insert(m, *s);
        }
        let probs = match escort_probs(&scores, config.tau) {
            Ok(p) => p,
            Err(Error::AllSingular) => {
                if accept.is_empty() {
                    return Err(Error::AllSingular);
                }
                break; // chain is stuck; the acceptable set is still valid
            }
            Err(e) => return Err(e),
        };
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (i, pr) in probs.iter().enumerate() {
            acc += pr;
            if u < acc {
                pick = i;
                break;
            }
        }
        current = nbd.swap_remove(pick);
    }

    if accept.is_empty() {
        return Err(Error::AllSingular);
    }
    Ok(accept)
}

/// Scores every admissible model and returns the exact acceptable set.
/// Guarded by [`EXHAUSTIVE_LIMIT`]; errors with
/// [`Error::TooLargeForExhaustive`] beyond it.
pub fn exhaustive_search<F: FnMut(&ModelIndex) -> f64>(
    mut evaluator: F,
    space: &ModelSpace,
    c: f64,
) -> Result<AcceptableSet> {
    let models = space.enumerate(EXHAUSTIVE_LIMIT)?;
    let mut accept = AcceptableSet::new(c)?;
    for m in &models {
        accept.insert(m, evaluator(m));
    }
    if accept.is_empty() {
        return Err(Error::AllSingular);
    }
    Ok(accept)
}

/// Adapts a homoscedastic model fit into a search evaluator: singular
/// models score `-inf` instead of erroring.
pub fn marginal_evaluator(
    stats: &crate::stats::SufficientStats,
) -> impl FnMut(&ModelIndex) -> f64 + '_ {
    move |m| match crate::model::log_marginal(stats, m) {
        Ok(s) => s,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Heteroscedastic counterpart of [`marginal_evaluator`].
pub fn hetero_marginal_evaluator<'a>(
    data: &'a crate::stats::Dataset,
    stats: &'a crate::stats::SufficientStats,
) -> impl FnMut(&ModelIndex) -> f64 + 'a {
    move |m| match crate::model::hetero_fit_model(data, stats, m) {
        Ok(f) => f.log_marginal,
        Err(_) => f64::NEG_INFINITY,
    }
}
