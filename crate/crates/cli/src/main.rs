//! `ivbgmm`: estimate a causal effect from data with many instruments,
//! some possibly invalid, or run the Monte Carlo harness over the standard
//! simulation designs.
//!
//! Two commands:
//! - `fit`: read a CSV, run the requested estimators, write a report
//!   (JSON by default) with per-method estimates, standard errors, and
//!   95% intervals; the model-averaging method additionally reports its
//!   acceptable models and per-instrument validity probabilities.
//! - `simulate`: run replicated experiments on a built-in design and
//!   write the summary table (CSV by default; also an aligned text table).
//!
//! Exit codes: 0 success, 2 I/O or parse failure (including command-line
//! usage errors), 3 input validation failure (rank-deficient instruments,
//! NaN values, inconsistent configuration), 4 estimator failure. Every
//! failure prints a single JSON line on standard error with fields
//! `code`, `kind`, and `message`.
//!
//! Data are always centered internally; the intercept is never modeled,
//! and there is deliberately no flag to switch centering off. Reports
//! would silently change meaning on uncentered data, so the escape hatch
//! is refused rather than offered.

mod input;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivbgmm::{
    acceptable_weights, beta_posterior, compute_suffstats, fit_acceptable, gen_dataset,
    hetero_fit_acceptable, hetero_marginal_evaluator, marginal_evaluator, median_estimator,
    naive_tsls, ols, replicate_rngs, run_monte_carlo, shotgun_search, traditional_beta_posterior,
    validity_probabilities, Dataset, DgpCase, DgpModel, DgpSpec, EstimateReport, Method,
    ModelIndex, ModelSpace, SearchConfig, SufficientStats,
};
use report::{MethodOutcome, RunEcho};

/// Failure carrying the process exit code and a machine-readable kind.
pub struct CliError {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

impl CliError {
    /// I/O or parse failure (exit 2).
    pub fn parse(kind: &str, message: String) -> Self {
        CliError { code: 2, kind: kind.to_owned(), message }
    }

    /// Configuration or data validation failure (exit 3).
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: 3, kind: "InvalidConfig".to_owned(), message: message.into() }
    }

    /// Library errors keep their variant name as the kind; data-contract
    /// violations exit 3, estimation failures exit 4.
    pub fn from_core(e: ivbgmm::Error) -> Self {
        use ivbgmm::Error as E;
        let (code, kind) = match &e {
            E::NonFinite(_) => (3, "NonFinite"),
            E::RankDeficient(_) => (3, "RankDeficient"),
            E::InvalidInput(_) => (3, "InvalidInput"),
            E::NotSymmetric(_) => (3, "NotSymmetric"),
            E::NotPositiveDefinite => (3, "NotPositiveDefinite"),
            E::TooLargeForExhaustive { .. } => (3, "TooLargeForExhaustive"),
            E::SingularModel => (4, "SingularModel"),
            E::SingularWeight => (4, "SingularWeight"),
            E::AllSingular => (4, "AllSingular"),
            E::MissingFit => (4, "MissingFit"),
            E::ZeroFirstStage(_) => (4, "ZeroFirstStage"),
        };
        CliError { code, kind: kind.to_owned(), message: e.to_string() }
    }

    fn json_line(&self) -> String {
        serde_json::json!({
            "code": self.code,
            "kind": self.kind,
            "message": self.message,
        })
        .to_string()
    }
}

#[derive(Parser)]
#[command(
    name = "ivbgmm",
    version,
    about = "Causal-effect estimation with many instruments, some possibly invalid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the effect of an exposure on an outcome from a CSV file.
    Fit(FitArgs),
    /// Run Monte Carlo replicates of a built-in simulation design.
    Simulate(SimArgs),
}

/// Output format for reports and tables.
#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
    Text,
}

/// Simulation design case.
#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    /// No effect; all invalid instruments equally strong.
    A,
    /// No effect; invalid instruments stronger than valid ones.
    B,
    /// Effect 0.5; all invalid instruments equally strong.
    C,
    /// Effect 0.5; invalid instruments stronger than valid ones.
    D,
}

impl From<CaseArg> for DgpCase {
    fn from(c: CaseArg) -> DgpCase {
        match c {
            CaseArg::A => DgpCase::A,
            CaseArg::B => DgpCase::B,
            CaseArg::C => DgpCase::C,
            CaseArg::D => DgpCase::D,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file: header row, comma-separated, '.' decimals.
    #[arg(long)]
    input: PathBuf,

    /// Name of the outcome column.
    #[arg(long)]
    outcome: String,

    /// Name of the exposure column.
    #[arg(long)]
    exposure: String,

    /// Comma-separated instrument columns, in the order they enter Z.
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,

    /// Instruments treated as invalid in every model (e.g. known covariates).
    #[arg(long = "forced-invalid", value_delimiter = ',')]
    forced_invalid: Vec<String>,

    /// Acceptance ratio: models scoring within a factor c of the best stay.
    #[arg(long, default_value_t = 3.0)]
    c: f64,

    /// Escort temperature of the search's proposal distribution.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,

    /// Number of stochastic search iterations.
    #[arg(long, default_value_t = 1000)]
    iters: usize,

    /// RNG seed for the search (env var IVBGMM_SEED overrides).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Score models with the heteroscedasticity-robust moment weight.
    #[arg(long)]
    hetero: bool,

    /// Start the search at the instruments with the largest median-estimator
    /// direct effects instead of the forced-invalid set alone.
    #[arg(long = "init-median")]
    init_median: bool,

    /// Comma-separated methods to run (ols, naive_tsls, median,
    /// traditional_bayes, proposed_bayes).
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = [
            "ols".to_owned(),
            "naive_tsls".to_owned(),
            "median".to_owned(),
            "proposed_bayes".to_owned(),
        ]
    )]
    methods: Vec<String>,

    /// Write the report to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Report format.
    #[arg(long, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
}

#[derive(Args)]
struct SimArgs {
    /// Error model: 1 = Gaussian, 2 = heavy-tailed (exponential scale mixture).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    model: u8,

    /// Design case (a/b: no effect; c/d: effect 0.5).
    #[arg(long, value_enum, default_value_t = CaseArg::A)]
    case: CaseArg,

    /// Sample size per replicate.
    #[arg(long, default_value_t = 500)]
    n: usize,

    /// Number of Monte Carlo replicates.
    #[arg(long, default_value_t = 100)]
    reps: usize,

    /// Base seed; each replicate derives its own streams from it
    /// (env var IVBGMM_SEED overrides).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Comma-separated methods to run (default: all).
    #[arg(
        long,
        value_delimiter = ',',
        default_values_t = [
            "ols".to_owned(),
            "naive_tsls".to_owned(),
            "median".to_owned(),
            "traditional_bayes".to_owned(),
            "proposed_bayes".to_owned(),
            "oracle_tsls".to_owned(),
        ]
    )]
    methods: Vec<String>,

    /// Worker threads for replicates; results are identical for any count.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Write the table to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Table format.
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,

    /// Also write the first replicate's dataset to this CSV file.
    #[arg(long = "emit-data")]
    emit_data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.code)
        }
    }
}

/// The seed from IVBGMM_SEED when set, otherwise the flag value.
fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var("IVBGMM_SEED") {
        Ok(text) => text.trim().parse::<u64>().map_err(|_| {
            CliError::parse(
                "SeedParse",
                format!("IVBGMM_SEED must be an unsigned integer, got '{text}'"),
            )
        }),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(CliError::parse("SeedParse", "IVBGMM_SEED is not valid UTF-8".to_owned()))
        }
    }
}

/// Parses method tags, deduplicates, and returns them in canonical order.
fn parse_methods(tags: &[String], allow_oracle: bool) -> Result<Vec<Method>, CliError> {
    let mut requested = Vec::new();
    for tag in tags {
        let m: Method = tag.parse().map_err(CliError::from_core)?;
        if !requested.contains(&m) {
            requested.push(m);
        }
    }
    if requested.is_empty() {
        return Err(CliError::validation("at least one method is required"));
    }
    if !allow_oracle && requested.contains(&Method::OracleTsls) {
        return Err(CliError::validation(
            "oracle_tsls needs the true invalid set, which only the simulator knows; \
             it is not available for fit",
        ));
    }
    Ok(Method::ALL.into_iter().filter(|m| requested.contains(m)).collect())
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::parse("Io", format!("cannot write '{}': {e}", p.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Search start for --init-median: the free instruments with the largest
/// absolute direct effects under the median estimator, up to the
/// cardinality cap (ties broken by index).
fn median_start(stats: &SufficientStats, space: &ModelSpace) -> Result<ModelIndex, CliError> {
    let (_beta, alpha) = median_estimator(stats).map_err(CliError::from_core)?;
    let mut ranked = space.free_indices().to_vec();
    ranked.sort_by(|&i, &j| alpha[j].abs().total_cmp(&alpha[i].abs()).then(i.cmp(&j)));
    let mut chosen: Vec<usize> =
        ranked.into_iter().take(space.max_candidate_len()).collect();
    chosen.sort_unstable();
    space.model(&chosen).map_err(CliError::from_core)
}

fn from_report(rep: EstimateReport) -> MethodOutcome {
    MethodOutcome {
        method: rep.method,
        estimate: rep.estimate,
        se: Some(rep.se),
        ci95: Some((rep.lo, rep.hi)),
        validity: rep.validity,
        acceptable: None,
    }
}

/// Runs the search, averages the acceptable models, and collects the
/// model-level artifacts for the report.
fn proposed_outcome(
    data: &Dataset,
    stats: &SufficientStats,
    forced: &[usize],
    hetero: bool,
    init_median: bool,
    base_config: &SearchConfig,
) -> Result<MethodOutcome, CliError> {
    let space = ModelSpace::new(data.p, forced).map_err(CliError::from_core)?;
    let mut config = base_config.clone();
    if init_median {
        config.initial = Some(median_start(stats, &space)?);
    }
    let found = if hetero {
        shotgun_search(hetero_marginal_evaluator(data, stats), &space, &config)
    } else {
        shotgun_search(marginal_evaluator(stats), &space, &config)
    }
    .map_err(CliError::from_core)?;
    let fits = if hetero {
        hetero_fit_acceptable(data, stats, &found)
    } else {
        fit_acceptable(stats, &found)
    }
    .map_err(CliError::from_core)?;
    let post = beta_posterior(&found, &fits).map_err(CliError::from_core)?;
    let validity = validity_probabilities(&found, data.p).map_err(CliError::from_core)?;
    let weights = acceptable_weights(&found).map_err(CliError::from_core)?;
    let acceptable: Vec<(Vec<usize>, f64)> = found
        .iter()
        .zip(weights)
        .map(|((model, _), w)| (model.omega().to_vec(), w))
        .collect();
    let rep = EstimateReport::from_posterior(Method::ProposedBayes, &post, Some(validity))
        .map_err(CliError::from_core)?;
    Ok(MethodOutcome {
        method: rep.method,
        estimate: rep.estimate,
        se: Some(rep.se),
        ci95: Some((rep.lo, rep.hi)),
        validity: rep.validity,
        acceptable: Some(acceptable),
    })
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let seed = effective_seed(args.seed)?;

    if args.instruments.is_empty() {
        return Err(CliError::validation("at least one instrument column is required"));
    }
    if args.outcome == args.exposure {
        return Err(CliError::validation("outcome and exposure must be different columns"));
    }
    for (i, name) in args.instruments.iter().enumerate() {
        if args.instruments[..i].contains(name) {
            return Err(CliError::validation(format!("instrument '{name}' listed twice")));
        }
        if *name == args.outcome || *name == args.exposure {
            return Err(CliError::validation(format!(
                "column '{name}' cannot be both an instrument and the outcome or exposure"
            )));
        }
    }
    let mut forced_idx = Vec::new();
    for name in &args.forced_invalid {
        let j = args.instruments.iter().position(|i| i == name).ok_or_else(|| {
            CliError::validation(format!(
                "forced-invalid column '{name}' is not among the instruments"
            ))
        })?;
        if !forced_idx.contains(&j) {
            forced_idx.push(j);
        }
    }
    forced_idx.sort_unstable();

    let methods = parse_methods(&args.methods, false)?;
    if args.hetero && methods.contains(&Method::TraditionalBayes) {
        return Err(CliError::validation(
            "traditional_bayes supports only the homoscedastic score; \
             drop --hetero or that method",
        ));
    }

    let data = input::read_fit_csv(&args.input, &args.outcome, &args.exposure, &args.instruments)?;
    let stats = compute_suffstats(&data).map_err(CliError::from_core)?;
    let config = SearchConfig {
        iterations: args.iters,
        c: args.c,
        tau: args.tau,
        seed,
        initial: None,
    };

    let mut outcomes = Vec::with_capacity(methods.len());
    for method in &methods {
        let outcome = match method {
            Method::Ols => from_report(ols(&stats).map_err(CliError::from_core)?),
            Method::NaiveTsls => from_report(naive_tsls(&stats).map_err(CliError::from_core)?),
            Method::Median => {
                let (beta, _alpha) = median_estimator(&stats).map_err(CliError::from_core)?;
                MethodOutcome {
                    method: Method::Median,
                    estimate: beta,
                    se: None,
                    ci95: None,
                    validity: None,
                    acceptable: None,
                }
            }
            Method::TraditionalBayes => {
                let post = traditional_beta_posterior(&stats, data.p, &forced_idx)
                    .map_err(CliError::from_core)?;
                from_report(
                    EstimateReport::from_posterior(Method::TraditionalBayes, &post, None)
                        .map_err(CliError::from_core)?,
                )
            }
            Method::ProposedBayes => proposed_outcome(
                &data,
                &stats,
                &forced_idx,
                args.hetero,
                args.init_median,
                &config,
            )?,
            Method::OracleTsls => unreachable!("rejected by parse_methods"),
        };
        outcomes.push(outcome);
    }

    let echo = RunEcho {
        n: data.n,
        p: data.p,
        c: args.c,
        tau: args.tau,
        iterations: args.iters,
        seed,
        hetero: args.hetero,
    };
    let rendered = match args.format {
        OutFormat::Json => report::fit_json(&echo, &outcomes),
        OutFormat::Csv => report::fit_csv(&outcomes),
        OutFormat::Text => report::fit_text(&outcomes),
    };
    write_output(args.output.as_deref(), &rendered)
}

fn cmd_simulate(args: SimArgs) -> Result<(), CliError> {
    let seed = effective_seed(args.seed)?;
    let methods = parse_methods(&args.methods, true)?;
    if args.threads == 0 {
        return Err(CliError::validation("--threads must be at least 1"));
    }
    // The pool can only be installed once per process; a second no-op
    // attempt (e.g. in-process reuse) is harmless because results are
    // thread-count invariant anyway.
    rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global().ok();

    let model = match args.model {
        1 => DgpModel::Gaussian,
        _ => DgpModel::Laplace,
    };
    let spec = DgpSpec::new(model, args.case.into(), args.n);

    if let Some(path) = &args.emit_data {
        let (mut rng, _) = replicate_rngs(seed, 0);
        let (data, _truth) = gen_dataset(&spec, &mut rng).map_err(CliError::from_core)?;
        write_output(Some(path), &report::dataset_csv(&data))?;
    }

    let summary = run_monte_carlo(&spec, &methods, args.reps, seed).map_err(CliError::from_core)?;
    let rendered = match args.format {
        OutFormat::Json => report::sim_json(&summary),
        OutFormat::Csv => report::sim_csv(&summary),
        OutFormat::Text => report::sim_text(&summary),
    };
    write_output(args.output.as_deref(), &rendered)?;
    // A file destination still gets a human-readable echo on stdout.
    if args.output.is_some() && args.format != OutFormat::Text {
        print!("{}", report::sim_text(&summary));
    }
    Ok(())
}
