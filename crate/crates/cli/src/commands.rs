use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use pca_debias::estimators::{confidence_interval, debiased_estimate, plugin_with_sigma};
use pca_debias::lowerbound::{class_bound, exact_van_trees, van_trees_evaluate};
use pca_debias::montecarlo::{bias_sweep, run_scenario_detailed, BiasPoint, EstimatorKind, ReplicateResult, Scenario};
use pca_debias::{Error, SampleSet, SummaryReport};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::output::{emit, render, Table};
use crate::CliError;

pub struct Options {
    pub out: Option<PathBuf>,
    pub format: Format,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Options {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Per-scenario failure record; the run continues past it.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioError {
    pub scenario: usize,
    pub name: Option<String>,
    pub kind: String,
    pub message: String,
}

impl ScenarioError {
    fn new(k: usize, s: &Scenario, e: &Error) -> Self {
        ScenarioError {
            scenario: k,
            name: s.name.clone(),
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn with_seed(s: &Scenario, seed: Option<u64>) -> Scenario {
    Scenario {
        master_seed: seed.unwrap_or(s.master_seed),
        ..s.clone()
    }
}

fn finish(errors: &[ScenarioError]) -> Result<(), CliError> {
    if errors.is_empty() {
        Ok(())
    } else {
        let msg = errors
            .iter()
            .map(|e| format!("scenario[{}]: {}", e.scenario, e.message))
            .collect::<Vec<_>>()
            .join("; ");
        Err(CliError::Runtime(msg))
    }
}

pub const SUMMARY_COLUMNS: &[&str] = &[
    "scenario",
    "name",
    "estimator",
    "n",
    "reps",
    "master_seed",
    "successes",
    "failures",
    "failure_rate",
    "truth",
    "sigma",
    "effective_rank",
    "bias_theoretical",
    "mean_estimate",
    "mean_error",
    "stderr",
    "mean_standardized",
    "stderr_standardized",
    "ks_to_normal",
    "ks_feasible",
    "coverage",
    "risk",
    "risk_stderr",
    "mean_d_check",
    "clamp_rate",
    "floor_rate",
    "mean_m",
    "degenerate",
    "warnings",
    "error",
    "wall_time",
];

pub const REPLICATE_COLUMNS: &[&str] = &[
    "scenario",
    "index",
    "estimate",
    "aligned_error",
    "scaled_error",
    "standardized",
    "feasible",
    "sigma_hat",
    "ci_covers",
    "d_check",
    "m",
    "clamped",
    "floored",
    "failure",
];

fn summary_record(k: usize, rep: &SummaryReport) -> Value {
    let mut v = serde_json::to_value(rep).expect("report serializes");
    let s = &rep.scenario;
    let o = v.as_object_mut().unwrap();
    o.insert("scenario".into(), json!(k));
    o.insert("name".into(), json!(s.name));
    o.insert("estimator".into(), serde_json::to_value(s.estimator).unwrap());
    o.insert("n".into(), json!(s.n));
    o.insert("master_seed".into(), json!(s.master_seed));
    v
}

#[derive(Serialize)]
struct SimulateDoc<'a> {
    command: &'static str,
    reports: &'a [SummaryReport],
    errors: &'a [ScenarioError],
}

pub fn simulate(cfg: &RunConfig, opts: &Options, replicates: Option<&Path>) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut indices = Vec::new();
    let mut errors = Vec::new();
    let mut records: Vec<(usize, Vec<ReplicateResult>)> = Vec::new();
    let total = cfg.scenarios.len();
    for (k, base) in cfg.scenarios.iter().enumerate() {
        let s = with_seed(base, opts.seed);
        let label = s.name.clone().unwrap_or_else(|| format!("#{k}"));
        match run_scenario_detailed(&s) {
            Ok((rep, results)) => {
                opts.note(format!(
                    "scenario {}/{total} {label}: {} reps, {} failures, {:.2}s",
                    k + 1,
                    rep.reps,
                    rep.failures,
                    rep.wall_time
                ));
                for w in &rep.warnings {
                    opts.note(format!("  warning: {w}"));
                }
                reports.push(rep);
                indices.push(k);
                records.push((k, results));
            }
            Err(e) => {
                opts.note(format!("scenario {}/{total} {label}: error: {e}", k + 1));
                errors.push(ScenarioError::new(k, &s, &e));
            }
        }
    }
    let doc = SimulateDoc {
        command: "simulate",
        reports: &reports,
        errors: &errors,
    };
    let text = render(opts.format, &doc, || {
        let mut t = Table::new(SUMMARY_COLUMNS.to_vec());
        for (k, rep) in indices.iter().zip(&reports) {
            t.push_record(&summary_record(*k, rep));
        }
        for e in &errors {
            t.push_record(&json!({"scenario": e.scenario, "name": e.name, "error": e.message}));
        }
        t
    });
    emit(&text, opts.out.as_deref())?;
    if let Some(path) = replicates {
        let text = match opts.format {
            Format::Json => crate::output::to_json(
                &records
                    .iter()
                    .map(|(k, rs)| json!({"scenario": k, "replicates": rs}))
                    .collect::<Vec<_>>(),
            ),
            Format::Csv => {
                let mut t = Table::new(REPLICATE_COLUMNS.to_vec());
                for (k, rs) in &records {
                    for r in rs {
                        let mut v = serde_json::to_value(r).unwrap();
                        v.as_object_mut().unwrap().insert("scenario".into(), json!(k));
                        t.push_record(&v);
                    }
                }
                t.to_csv()
            }
        };
        emit(&text, Some(path))?;
    }
    finish(&errors)
}

pub const CURVE_COLUMNS: &[&str] = &[
    "scenario",
    "name",
    "tail_dim",
    "effective_rank",
    "bias",
    "bias_stderr",
    "bias_theoretical",
    "plugin_mean_error",
    "plugin_stderr",
    "debiased_mean_error",
    "debiased_stderr",
    "error",
];

#[derive(Serialize)]
struct Curve {
    scenario: usize,
    name: Option<String>,
    points: Vec<BiasPoint>,
}

pub fn bias_curve(cfg: &RunConfig, opts: &Options) -> Result<(), CliError> {
    let sweep = cfg
        .bias_curve
        .as_ref()
        .ok_or_else(|| CliError::Config("bias-curve needs a [bias_curve] table with tail_dims".into()))?;
    let mut curves = Vec::new();
    let mut errors = Vec::new();
    for (k, base) in cfg.scenarios.iter().enumerate() {
        let s = with_seed(base, opts.seed);
        let start = Instant::now();
        match bias_sweep(&s, &sweep.tail_dims) {
            Ok(points) => {
                for p in &points {
                    if let Some(msg) = &p.error {
                        errors.push(ScenarioError {
                            scenario: k,
                            name: s.name.clone(),
                            kind: "sweep_point".into(),
                            message: format!("tail_dim {}: {msg}", p.tail_dim),
                        });
                    }
                }
                opts.note(format!("bias curve {k}: {} points, {:.2}s", points.len(), start.elapsed().as_secs_f64()));
                curves.push(Curve {
                    scenario: k,
                    name: s.name.clone(),
                    points,
                });
            }
            Err(e) => errors.push(ScenarioError::new(k, &s, &e)),
        }
    }
    let doc = json!({"command": "bias_curve", "curves": curves, "errors": errors});
    let text = render(opts.format, &doc, || {
        let mut t = Table::new(CURVE_COLUMNS.to_vec());
        for c in &curves {
            for p in &c.points {
                t.push_record(&json!({
                    "scenario": c.scenario,
                    "name": c.name,
                    "tail_dim": p.tail_dim,
                    "effective_rank": p.effective_rank,
                    "bias": p.bias.map(|b| b.value),
                    "bias_stderr": p.bias.map(|b| b.stderr),
                    "bias_theoretical": p.bias.map(|b| b.theoretical),
                    "plugin_mean_error": p.plugin_mean_error,
                    "plugin_stderr": p.plugin_stderr,
                    "debiased_mean_error": p.debiased_mean_error,
                    "debiased_stderr": p.debiased_stderr,
                    "error": p.error,
                }));
            }
        }
        t
    });
    emit(&text, opts.out.as_deref())?;
    finish(&errors)
}

pub const LOWERBOUND_COLUMNS: &[&str] = &[
    "scenario",
    "name",
    "n",
    "c",
    "bound",
    "sigma2",
    "ratio",
    "numerator",
    "denominator",
    "sigma_factor",
    "b_norm",
    "remainder_b1",
    "remainder_fisher",
    "prior_info",
    "remainder_d1",
    "exact",
    "class_bound",
    "admissible",
    "violations",
];

pub fn lowerbound(cfg: &RunConfig, opts: &Options) -> Result<(), CliError> {
    let lb = cfg
        .lowerbound
        .as_ref()
        .ok_or_else(|| CliError::Config("lowerbound needs a [lowerbound] table with c".into()))?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (k, s) in cfg.scenarios.iter().enumerate() {
        let prepared = s.model.build().and_then(|m| Ok((s.u.resolve(&m, s.r)?, m)));
        let (u, model) = match prepared {
            Ok(x) => x,
            Err(e) => {
                errors.push(ScenarioError::new(k, s, &e));
                continue;
            }
        };
        let ns = lb.n.clone().unwrap_or_else(|| vec![s.n as f64]);
        for &n in &ns {
            for &c in &lb.c {
                match van_trees_evaluate(&model, s.r, &u, n, c) {
                    Ok(res) => {
                        let mut v = serde_json::to_value(&res).unwrap();
                        let o = v.as_object_mut().unwrap();
                        o.insert("scenario".into(), json!(k));
                        o.insert("name".into(), json!(s.name));
                        o.insert("ratio".into(), json!(res.bound / res.sigma2));
                        o.insert("exact".into(), json!(exact_van_trees(&model, s.r, &u, n, c).ok()));
                        o.insert(
                            "class_bound".into(),
                            json!(lb.class.as_ref().map(|cl| cl.sigma0_sq * class_bound(cl.a, cl.sigma0_sq, u.norm(), n, c))),
                        );
                        o.insert("admissible".into(), json!(res.violations.is_empty()));
                        rows.push(v);
                    }
                    Err(e) => {
                        errors.push(ScenarioError::new(k, s, &e));
                        break;
                    }
                }
            }
        }
    }
    let doc = json!({"command": "lowerbound", "results": rows, "errors": errors});
    let text = render(opts.format, &doc, || {
        let mut t = Table::new(LOWERBOUND_COLUMNS.to_vec());
        for r in &rows {
            t.push_record(r);
        }
        t
    });
    emit(&text, opts.out.as_deref())?;
    finish(&errors)
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    pub data: PathBuf,
    pub r: usize,
    pub u: String,
    pub tau: f64,
    pub m: Option<usize>,
    pub estimator: EstimatorKind,
    pub alpha: f64,
}

pub fn read_samples(path: &Path) -> Result<SampleSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| CliError::Config(format!("{}: row {}, column {}: {f:?} is not a finite number", path.display(), i + 1, j + 1)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no rows", path.display())));
    }
    SampleSet::from_rows(&rows).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A functional for data without a model: a coordinate list or `e<k>`.
pub fn parse_functional(spec: &str, d: usize) -> Result<DVector<f64>, CliError> {
    let s = spec.trim();
    if let Some(k) = s.strip_prefix('e').and_then(|k| k.parse::<usize>().ok()) {
        if k == 0 || k > d {
            return Err(CliError::Config(format!("u = {s}: index out of range 1..={d}")));
        }
        let mut v = DVector::zeros(d);
        v[k - 1] = 1.0;
        return Ok(v);
    }
    let xs = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| CliError::Config(format!("u = {s:?}: expected e<k> or a comma-separated list of {d} numbers")))?;
    if xs.len() != d {
        return Err(CliError::Config(format!("u has {} coordinates, data dimension is {d}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) || xs.iter().all(|x| *x == 0.0) {
        return Err(CliError::Config("u must be finite and nonzero".into()));
    }
    Ok(DVector::from_vec(xs))
}

#[derive(Debug, Serialize)]
pub struct EstimateRecord {
    pub n: usize,
    pub d: usize,
    pub estimator: EstimatorKind,
    pub r: usize,
    pub tau: f64,
    pub alpha: f64,
    pub value: f64,
    pub sigma_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_hat: Option<f64>,
    pub d_check: Option<f64>,
    pub n_prime: Option<usize>,
    pub m: Option<usize>,
    pub clamped: Option<bool>,
    pub floored: Option<bool>,
    pub theta: Vec<f64>,
}

pub const ESTIMATE_COLUMNS: &[&str] = &[
    "n", "d", "estimator", "r", "tau", "alpha", "value", "sigma_hat", "ci_low", "ci_high", "r_hat", "d_check", "n_prime",
    "m", "clamped", "floored",
];

pub fn estimate(args: &EstimateArgs, opts: &Options) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Config(format!("alpha must lie in (0, 1), got {}", args.alpha)));
    }
    let x = read_samples(&args.data)?;
    let u = parse_functional(&args.u, x.dim)?;
    let runtime = |e: Error| CliError::Runtime(e.to_string());
    let base = |value: f64, sigma_hat: f64, theta: &DVector<f64>| -> Result<EstimateRecord, CliError> {
        let (lo, hi) = confidence_interval(value, sigma_hat, x.n, args.alpha).map_err(runtime)?;
        Ok(EstimateRecord {
            n: x.n,
            d: x.dim,
            estimator: args.estimator,
            r: args.r,
            tau: args.tau,
            alpha: args.alpha,
            value,
            sigma_hat,
            ci_low: lo,
            ci_high: hi,
            r_hat: None,
            d_check: None,
            n_prime: None,
            m: None,
            clamped: None,
            floored: None,
            theta: theta.iter().copied().collect(),
        })
    };
    let record = match args.estimator {
        EstimatorKind::Plugin => {
            let (est, sigma_hat) = plugin_with_sigma(&x, args.r, args.tau, &u).map_err(runtime)?;
            base(est.value, sigma_hat, &est.theta_hat)?
        }
        EstimatorKind::Debiased => {
            let est = debiased_estimate(&x, args.r, args.tau, &u, args.m).map_err(runtime)?;
            EstimateRecord {
                r_hat: Some(est.r_hat),
                d_check: Some(est.d_check),
                n_prime: Some(est.splits.0),
                m: Some(est.splits.1),
                clamped: Some(est.clamped),
                floored: Some(est.floored),
                ..base(est.value, est.sigma_hat, &est.theta_check)?
            }
        }
    };
    opts.note(format!("estimate from {} rows x {} columns", x.n, x.dim));
    let text = render(opts.format, &record, || {
        let mut t = Table::new(ESTIMATE_COLUMNS.to_vec());
        t.push_record(&serde_json::to_value(&record).unwrap());
        t
    });
    emit(&text, opts.out.as_deref())
}
