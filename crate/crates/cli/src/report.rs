//! Report rendering: canonical JSON (sorted keys, shortest round-trip
//! floats — parsing an emitted report and re-serializing it reproduces the
//! bytes exactly), CSV tables, and aligned human-readable text tables.
//!
//! Missing values (the median estimator reports no standard error, and
//! point-only methods have no coverage) appear as `null` in JSON and `NA`
//! in CSV/text.

use ivbgmm::{Dataset, McSummary, Method};
use serde_json::{json, Value};

/// Per-method result of `fit`, plus the model-averaging artifacts carried
/// only by the acceptable-set method.
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: f64,
    /// Standard error; the median estimator has none.
    pub se: Option<f64>,
    /// 95% interval (equal-tailed credible for Bayes methods).
    pub ci95: Option<(f64, f64)>,
    /// Per-instrument probability of being valid.
    pub validity: Option<Vec<f64>>,
    /// Acceptable models as (invalid set, posterior weight), ascending.
    pub acceptable: Option<Vec<(Vec<usize>, f64)>>,
}

/// Fixed run parameters echoed into the JSON report.
pub struct RunEcho {
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub tau: f64,
    pub iterations: usize,
    pub seed: u64,
    pub hetero: bool,
}

/// Shortest round-trip decimal text for a float.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".to_owned())
}

/// Fixed-width cell with 4 decimals, or NA.
fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "NA".to_owned(),
    }
}

fn json_opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

/// Canonical serialization: sorted object keys (the default map is ordered),
/// two-space indentation, trailing newline.
fn to_canonical(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization cannot fail");
    s.push('\n');
    s
}

/// JSON report for `fit`: run parameters plus one entry per method.
pub fn fit_json(echo: &RunEcho, outcomes: &[MethodOutcome]) -> String {
    let mut methods = serde_json::Map::new();
    for o in outcomes {
        let mut entry = serde_json::Map::new();
        entry.insert("estimate".into(), json!(o.estimate));
        entry.insert("se".into(), json_opt(o.se));
        entry.insert(
            "ci95".into(),
            o.ci95.map_or(Value::Null, |(lo, hi)| json!([lo, hi])),
        );
        if let Some(acc) = &o.acceptable {
            let models: Vec<Value> = acc
                .iter()
                .map(|(omega, weight)| json!({"omega": omega, "weight": weight}))
                .collect();
            entry.insert("acceptable_models".into(), Value::Array(models));
        }
        if let Some(validity) = &o.validity {
            entry.insert("validity_probabilities".into(), json!(validity));
        }
        methods.insert(o.method.tag().to_owned(), Value::Object(entry));
    }
    let report = json!({
        "config": {
            "c": echo.c,
            "hetero": echo.hetero,
            "iterations": echo.iterations,
            "n": echo.n,
            "p": echo.p,
            "seed": echo.seed,
            "tau": echo.tau,
        },
        "methods": methods,
    });
    to_canonical(&report)
}

/// CSV report for `fit`: one row per method.
pub fn fit_csv(outcomes: &[MethodOutcome]) -> String {
    let mut s = String::from("method,estimate,se,lo,hi\n");
    for o in outcomes {
        let (lo, hi) = match o.ci95 {
            Some((lo, hi)) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            o.method.tag(),
            fmt_f64(o.estimate),
            fmt_opt(o.se),
            fmt_opt(lo),
            fmt_opt(hi),
        ));
    }
    s
}

/// Aligned text table for `fit`.
pub fn fit_text(outcomes: &[MethodOutcome]) -> String {
    let mut s = format!(
        "{:<18} {:>10} {:>10} {:>10} {:>10}\n",
        "method", "estimate", "se", "lo", "hi"
    );
    for o in outcomes {
        let (lo, hi) = match o.ci95 {
            Some((lo, hi)) => (Some(lo), Some(hi)),
            None => (None, None),
        };
        s.push_str(&format!(
            "{:<18} {:>10} {:>10} {:>10} {:>10}\n",
            o.method.tag(),
            cell(Some(o.estimate)),
            cell(o.se),
            cell(lo),
            cell(hi),
        ));
    }
    s
}

/// JSON rendering of a Monte Carlo summary.
pub fn sim_json(summary: &McSummary) -> String {
    let methods: Vec<Value> = summary
        .methods
        .iter()
        .map(|m| {
            json!({
                "bias": m.bias,
                "cp": json_opt(m.coverage),
                "failures": m.failures,
                "method": m.method.tag(),
                "mse": m.mse,
                "var": json_opt(m.avg_var),
            })
        })
        .collect();
    let report = json!({
        "methods": methods,
        "reps": summary.reps,
        "seed": summary.seed,
    });
    to_canonical(&report)
}

/// CSV rendering of a Monte Carlo summary: `method,bias,var,mse,cp`.
pub fn sim_csv(summary: &McSummary) -> String {
    let mut s = String::from("method,bias,var,mse,cp\n");
    for m in &summary.methods {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            m.method.tag(),
            fmt_f64(m.bias),
            fmt_opt(m.avg_var),
            fmt_f64(m.mse),
            fmt_opt(m.coverage),
        ));
    }
    s
}

/// Aligned text table of a Monte Carlo summary.
pub fn sim_text(summary: &McSummary) -> String {
    let mut s = format!(
        "{:<18} {:>9} {:>9} {:>9} {:>9}\n",
        "method", "bias", "var", "mse", "cp"
    );
    for m in &summary.methods {
        s.push_str(&format!(
            "{:<18} {:>9} {:>9} {:>9} {:>9}\n",
            m.method.tag(),
            cell(Some(m.bias)),
            cell(m.avg_var),
            cell(Some(m.mse)),
            cell(m.coverage),
        ));
    }
    s
}

/// Dataset as CSV with header `y,d,z1..zp` (values are centered).
pub fn dataset_csv(data: &Dataset) -> String {
    let mut s = String::from("y,d");
    for j in 1..=data.p {
        s.push_str(&format!(",z{j}"));
    }
    s.push('\n');
    for i in 0..data.n {
        s.push_str(&fmt_f64(data.y[i]));
        s.push(',');
        s.push_str(&fmt_f64(data.d[i]));
        for j in 0..data.p {
            s.push(',');
            s.push_str(&fmt_f64(data.z[(i, j)]));
        }
        s.push('\n');
    }
    s
}
