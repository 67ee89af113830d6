//! Replicated experiments: scenarios, deterministic parallel replication and
//! the summary statistics reported for them.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cluster::{tau_warning, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::estimators::{debiased_estimate, normal_quantile, plugin_with_sigma, variance_true, LossFunction};
use crate::perturbation::{a_r, bias_oracle_mc, BiasEstimate};
use crate::sampling::{draw, CovarianceModel, ModelSpec};

/// Failure rate above which a report carries a warning.
pub const FAILURE_WARN_RATE: f64 = 0.01;

/// Seed for replicate `index` under `master`.
///
/// `z = master + (index + 1) * 0x9E3779B97F4A7C15 (mod 2^64)`, then the
/// SplitMix64 finalizer: `z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
/// z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31`. Each step is a
/// bijection, so distinct indices give distinct seeds for a fixed master.
pub fn seed_derive(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sum by recursive halving; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and its standard error (`NaN` error for fewer than two values).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = pairwise_sum(xs) / k;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Kolmogorov distance between the empirical CDF of `sample` and `Phi`.
pub fn ks_distance(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::validation("ks_distance of an empty sample"));
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(Error::validation("ks_distance: sample contains NaN"));
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let k = xs.len() as f64;
    let mut worst = 0.0_f64;
    for (i, x) in xs.iter().enumerate() {
        let phi = normal_cdf(*x);
        let above = ((i + 1) as f64 / k - phi).abs();
        let below = (i as f64 / k - phi).abs();
        worst = worst.max(above).max(below);
    }
    Ok(worst)
}

/// Empirical `inf_t { P(|xi - eta| >= t) + t }` over paired draws.
pub fn paired_distance(xi: &[f64], eta: &[f64]) -> Result<f64> {
    if xi.len() != eta.len() || xi.is_empty() {
        return Err(Error::validation("paired_distance needs two non-empty samples of equal length"));
    }
    let mut diffs: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| (a - b).abs()).collect();
    diffs.sort_by(f64::total_cmp);
    let k = diffs.len();
    // Just above diffs[j], only the strictly larger differences are counted.
    let mut best = diffs.iter().filter(|&&d| d > 0.0).count() as f64 / k as f64;
    for j in 0..k {
        let larger = diffs[j + 1..].iter().filter(|&&d| d > diffs[j]).count();
        best = best.min(larger as f64 / k as f64 + diffs[j]);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Plugin,
    #[default]
    Debiased,
}

/// The functional vector `u`: explicit coordinates or a named construction
/// such as `"e2"`, `"theta1"`, `"theta_r"` or `"(theta1+e3)/sqrt2"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionalSpec {
    Coordinates(Vec<f64>),
    Named(String),
}

impl FunctionalSpec {
    pub fn resolve(&self, model: &CovarianceModel, r: usize) -> Result<DVector<f64>> {
        let d = model.dim();
        let u = match self {
            FunctionalSpec::Coordinates(xs) => {
                if xs.len() != d {
                    return Err(Error::validation(format!("u has {} coordinates, model dimension is {d}", xs.len())));
                }
                DVector::from_column_slice(xs)
            }
            FunctionalSpec::Named(name) => {
                let compact: String = name.chars().filter(|c| !c.is_whitespace()).collect();
                let pair = ["/sqrt2", "/sqrt(2)"]
                    .iter()
                    .find_map(|suffix| compact.strip_suffix(suffix))
                    .and_then(|s| s.strip_prefix('('))
                    .and_then(|s| s.strip_suffix(')'));
                match pair {
                    Some(inner) => {
                        let (a, b) = inner
                            .split_once('+')
                            .ok_or_else(|| Error::validation(format!("cannot parse functional {name:?}")))?;
                        (named_atom(a, model, r)? + named_atom(b, model, r)?) / SQRT_2
                    }
                    None => named_atom(&compact, model, r)?,
                }
            }
        };
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("u has non-finite entries"));
        }
        if u.iter().all(|x| *x == 0.0) {
            return Err(Error::validation("u must be nonzero"));
        }
        Ok(u)
    }
}

fn named_atom(atom: &str, model: &CovarianceModel, r: usize) -> Result<DVector<f64>> {
    let d = model.dim();
    let index = |digits: &str| -> Result<usize> {
        digits
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=d).contains(k))
            .ok_or_else(|| Error::validation(format!("bad index in functional atom {atom:?} (dimension {d})")))
    };
    if atom == "theta_r" {
        return model.dec.simple_eigenvector(r);
    }
    if let Some(k) = atom.strip_prefix("theta") {
        return model.dec.simple_eigenvector(index(k)?);
    }
    if let Some(k) = atom.strip_prefix('e') {
        let mut v = DVector::zeros(d);
        v[index(k)? - 1] = 1.0;
        return Ok(v);
    }
    Err(Error::validation(format!("unknown functional atom {atom:?}")))
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_alpha() -> f64 {
    0.05
}

fn default_r() -> usize {
    1
}

/// A reproducible Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default = "default_r")]
    pub r: usize,
    pub u: FunctionalSpec,
    pub n: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub estimator: EstimatorKind,
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub loss: LossFunction,
}

impl Scenario {
    /// Checks that need no model construction.
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::validation(format!("reps must be at least 2, got {}", self.reps)));
        }
        if self.r == 0 {
            return Err(Error::validation("r must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::validation("n must be at least 1"));
        }
        if self.estimator == EstimatorKind::Debiased && self.n < 13 {
            return Err(Error::validation(format!("debiased estimator needs n >= 13 for a three-way split, got {}", self.n)));
        }
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(Error::validation(format!("tau must lie in (0, 2), got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::validation(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(m) = self.m {
            if m == 0 || 3 * self.n.saturating_sub(2 * m) <= self.n {
                return Err(Error::validation(format!("m = {m} leaves n' = n - 2m <= n/3 for n = {}", self.n)));
            }
        }
        self.loss.validate()
    }

    /// Build the model and the fixed quantities every replicate needs.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        let model = self.model.build()?;
        let u = self.u.resolve(&model, self.r)?;
        let theta = model.dec.simple_eigenvector(self.r)?;
        let sigma2 = variance_true(&model.dec, self.r, &u)?;
        if !(sigma2 > 0.0) {
            return Err(Error::validation("sigma_r^2(Sigma; u) is zero, so the standardized statistic is undefined"));
        }
        let mut warnings = Vec::new();
        if let Some(w) = tau_warning(self.tau, model.gap_ratio(self.r)?) {
            warnings.push(w);
        }
        Ok(Prepared {
            truth: theta.dot(&u),
            sigma: sigma2.sqrt(),
            z: normal_quantile(1.0 - self.alpha / 2.0),
            effective_rank: model.effective_rank()?,
            bias_theoretical: a_r(&model.dec, self.r).ok().map(|a| -a / (2.0 * self.n as f64)),
            model,
            u,
            theta,
            warnings,
        })
    }
}

/// A scenario's model and derived constants.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: CovarianceModel,
    pub u: DVector<f64>,
    pub theta: DVector<f64>,
    /// `<theta_r, u>`.
    pub truth: f64,
    /// `sigma_r(Sigma; u)`.
    pub sigma: f64,
    pub z: f64,
    pub effective_rank: f64,
    pub bias_theoretical: Option<f64>,
    pub warnings: Vec<String>,
}

/// One replicate. Either `failure` is set or every statistic is.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    /// Estimate after sign alignment to `theta_r`.
    pub estimate: Option<f64>,
    pub aligned_error: Option<f64>,
    /// `sqrt(n) * aligned_error`.
    pub scaled_error: Option<f64>,
    /// Standardized by the true `sigma_r(Sigma; u)`.
    pub standardized: Option<f64>,
    /// Standardized by `sigma_r(Sigma_hat; u)`.
    pub feasible: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub ci_covers: Option<bool>,
    pub d_check: Option<f64>,
    pub m: Option<usize>,
    pub clamped: Option<bool>,
    pub floored: Option<bool>,
    pub failure: Option<String>,
}

impl ReplicateResult {
    fn failed(index: usize, err: &Error) -> Self {
        ReplicateResult {
            index,
            estimate: None,
            aligned_error: None,
            scaled_error: None,
            standardized: None,
            feasible: None,
            sigma_hat: None,
            ci_covers: None,
            d_check: None,
            m: None,
            clamped: None,
            floored: None,
            failure: Some(err.kind().to_string()),
        }
    }

    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }
}

struct RawEstimate {
    value: f64,
    first: DVector<f64>,
    sigma_hat: f64,
    d_check: Option<f64>,
    m: Option<usize>,
    clamped: Option<bool>,
    floored: Option<bool>,
}

fn estimate_once(s: &Scenario, p: &Prepared, index: usize) -> Result<RawEstimate> {
    let x = draw(&p.model, s.n, seed_derive(s.master_seed, index as u64))?;
    match s.estimator {
        EstimatorKind::Plugin => {
            let (est, sigma_hat) = plugin_with_sigma(&x, s.r, s.tau, &p.u)?;
            Ok(RawEstimate {
                value: est.value,
                first: est.theta_hat,
                sigma_hat,
                d_check: None,
                m: None,
                clamped: None,
                floored: None,
            })
        }
        EstimatorKind::Debiased => {
            let est = debiased_estimate(&x, s.r, s.tau, &p.u, s.m)?;
            Ok(RawEstimate {
                value: est.value,
                first: est.theta_first,
                sigma_hat: est.sigma_hat,
                d_check: Some(est.d_check),
                m: Some(est.splits.1),
                clamped: Some(est.clamped),
                floored: Some(est.floored),
            })
        }
    }
}

pub fn run_replicate(s: &Scenario, p: &Prepared, index: usize) -> ReplicateResult {
    let raw = match estimate_once(s, p, index) {
        Ok(raw) => raw,
        Err(e) => return ReplicateResult::failed(index, &e),
    };
    let sign = if raw.first.dot(&p.theta) < 0.0 { -1.0 } else { 1.0 };
    let estimate = sign * raw.value;
    let error = estimate - p.truth;
    let scaled = (s.n as f64).sqrt() * error;
    ReplicateResult {
        index,
        estimate: Some(estimate),
        aligned_error: Some(error),
        scaled_error: Some(scaled),
        standardized: Some(scaled / p.sigma),
        feasible: Some(scaled / raw.sigma_hat),
        sigma_hat: Some(raw.sigma_hat),
        ci_covers: Some(covers(scaled, raw.sigma_hat, p.z)),
        d_check: raw.d_check,
        m: raw.m,
        clamped: raw.clamped,
        floored: raw.floored,
        failure: None,
    }
}

fn covers(scaled_error: f64, sigma_hat: f64, z: f64) -> bool {
    scaled_error.abs() <= z * sigma_hat
}

/// Run every replicate of a prepared scenario, in parallel, ordered by index.
pub fn run_replicates(s: &Scenario, p: &Prepared) -> Vec<ReplicateResult> {
    (0..s.reps).into_par_iter().map(|i| run_replicate(s, p, i)).collect()
}

fn successes<'a>(results: &'a [ReplicateResult]) -> Result<Vec<&'a ReplicateResult>> {
    let ok: Vec<_> = results.iter().filter(|r| r.is_success()).collect();
    if ok.is_empty() {
        return Err(Error::Degenerate("every replicate failed".into()));
    }
    Ok(ok)
}

/// Fraction of successful replicates whose interval at level `alpha`
/// contains `<theta_r, u>`.
pub fn coverage(results: &[ReplicateResult], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let ok = successes(results)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let hits = ok
        .iter()
        .filter(|r| covers(r.scaled_error.unwrap_or(f64::NAN), r.sigma_hat.unwrap_or(f64::NAN), z))
        .count();
    Ok(hits as f64 / ok.len() as f64)
}

fn values(ok: &[&ReplicateResult], f: impl Fn(&ReplicateResult) -> Option<f64>) -> Vec<f64> {
    ok.iter().filter_map(|r| f(r)).collect()
}

/// Mean loss of the oracle-standardized statistic.
pub fn risk(results: &[ReplicateResult], loss: &LossFunction) -> Result<f64> {
    let ok = successes(results)?;
    let losses: Vec<f64> = values(&ok, |r| r.standardized.map(|z| loss.eval(z)));
    Ok(pairwise_sum(&losses) / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub scenario: Scenario,
    pub reps: usize,
    pub successes: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub failure_kinds: BTreeMap<String, usize>,
    pub truth: f64,
    pub sigma: f64,
    pub effective_rank: f64,
    pub bias_theoretical: Option<f64>,
    pub mean_estimate: Option<f64>,
    pub mean_error: Option<f64>,
    pub stderr: Option<f64>,
    pub mean_standardized: Option<f64>,
    pub stderr_standardized: Option<f64>,
    pub ks_to_normal: Option<f64>,
    pub ks_feasible: Option<f64>,
    pub coverage: Option<f64>,
    pub risk: Option<f64>,
    pub risk_stderr: Option<f64>,
    pub mean_d_check: Option<f64>,
    pub clamp_rate: Option<f64>,
    pub floor_rate: Option<f64>,
    pub mean_m: Option<f64>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

impl SummaryReport {
    /// Copy with the timing field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> SummaryReport {
        SummaryReport {
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

fn rate(ok: &[&ReplicateResult], f: impl Fn(&ReplicateResult) -> Option<bool>) -> Option<f64> {
    let flags: Vec<bool> = ok.iter().filter_map(|r| f(r)).collect();
    (!flags.is_empty()).then(|| flags.iter().filter(|b| **b).count() as f64 / flags.len() as f64)
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| pairwise_sum(xs) / xs.len() as f64)
}

pub fn summarize(s: &Scenario, p: &Prepared, results: &[ReplicateResult], wall_time: f64) -> SummaryReport {
    let ok: Vec<&ReplicateResult> = results.iter().filter(|r| r.is_success()).collect();
    let failures = results.len() - ok.len();
    let failure_rate = failures as f64 / results.len() as f64;
    let mut failure_kinds = BTreeMap::new();
    for r in results {
        if let Some(kind) = &r.failure {
            *failure_kinds.entry(kind.clone()).or_insert(0) += 1;
        }
    }
    let mut warnings = p.warnings.clone();
    if failure_rate > FAILURE_WARN_RATE {
        warnings.push(format!("failure rate {failure_rate:.4} exceeds {FAILURE_WARN_RATE}"));
    }
    let errors = values(&ok, |r| r.aligned_error);
    let std = values(&ok, |r| r.standardized);
    let feasible = values(&ok, |r| r.feasible);
    let losses = values(&ok, |r| r.standardized.map(|z| s.loss.eval(z)));
    let pair = |xs: &[f64]| -> (Option<f64>, Option<f64>) {
        if xs.is_empty() {
            return (None, None);
        }
        let (m, se) = mean_and_stderr(xs);
        (Some(m), se.is_finite().then_some(se))
    };
    let (mean_error, stderr) = pair(&errors);
    let (mean_standardized, stderr_standardized) = pair(&std);
    let (risk, risk_stderr) = pair(&losses);
    let ms: Vec<f64> = ok.iter().filter_map(|r| r.m.map(|m| m as f64)).collect();
    SummaryReport {
        scenario: s.clone(),
        reps: results.len(),
        successes: ok.len(),
        failures,
        failure_rate,
        failure_kinds,
        truth: p.truth,
        sigma: p.sigma,
        effective_rank: p.effective_rank,
        bias_theoretical: p.bias_theoretical,
        mean_estimate: mean_of(&values(&ok, |r| r.estimate)),
        mean_error,
        stderr,
        mean_standardized,
        stderr_standardized,
        ks_to_normal: ks_distance(&std).ok(),
        ks_feasible: ks_distance(&feasible).ok(),
        coverage: coverage(results, s.alpha).ok(),
        risk,
        risk_stderr,
        mean_d_check: mean_of(&values(&ok, |r| r.d_check)),
        clamp_rate: rate(&ok, |r| r.clamped),
        floor_rate: rate(&ok, |r| r.floored),
        mean_m: mean_of(&ms),
        degenerate: ok.is_empty(),
        warnings,
        wall_time,
    }
}

/// Run a scenario end to end. Replicate failures are counted, not fatal.
pub fn run_scenario(s: &Scenario) -> Result<SummaryReport> {
    Ok(run_scenario_detailed(s)?.0)
}

/// [`run_scenario`] that also returns the per-replicate records.
pub fn run_scenario_detailed(s: &Scenario) -> Result<(SummaryReport, Vec<ReplicateResult>)> {
    let p = s.prepare()?;
    let start = Instant::now();
    let results = run_replicates(s, &p);
    let report = summarize(s, &p, &results, start.elapsed().as_secs_f64());
    Ok((report, results))
}

/// One point of an effective-rank sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasPoint {
    pub tail_dim: usize,
    pub effective_rank: Option<f64>,
    pub bias: Option<BiasEstimate>,
    pub plugin_mean_error: Option<f64>,
    pub plugin_stderr: Option<f64>,
    pub debiased_mean_error: Option<f64>,
    pub debiased_stderr: Option<f64>,
    pub error: Option<String>,
}

fn sweep_point(base: &Scenario, tail_dim: usize) -> Result<BiasPoint> {
    let s = Scenario {
        model: base.model.with_tail_dim(tail_dim)?,
        ..base.clone()
    };
    let p = s.prepare()?;
    let bias = bias_oracle_mc(&p.model, s.r, s.n, s.reps, s.master_seed)?;
    let plugin = run_scenario(&Scenario {
        estimator: EstimatorKind::Plugin,
        ..s.clone()
    })?;
    let debiased = run_scenario(&Scenario {
        estimator: EstimatorKind::Debiased,
        ..s
    })?;
    Ok(BiasPoint {
        tail_dim,
        effective_rank: Some(p.effective_rank),
        bias: Some(bias),
        plugin_mean_error: plugin.mean_error,
        plugin_stderr: plugin.stderr,
        debiased_mean_error: debiased.mean_error,
        debiased_stderr: debiased.stderr,
        error: None,
    })
}

/// Bias and mean estimation error across tail dimensions of the base
/// model. A failing point records its error and the sweep continues.
pub fn bias_sweep(base: &Scenario, tail_dims: &[usize]) -> Result<Vec<BiasPoint>> {
    if tail_dims.is_empty() {
        return Err(Error::validation("bias sweep grid is empty"));
    }
    base.validate()?;
    base.model.with_tail_dim(tail_dims[0])?;
    Ok(tail_dims
        .iter()
        .map(|&d| {
            sweep_point(base, d).unwrap_or_else(|e| BiasPoint {
                tail_dim: d,
                effective_rank: None,
                bias: None,
                plugin_mean_error: None,
                plugin_stderr: None,
                debiased_mean_error: None,
                debiased_stderr: None,
                error: Some(e.to_string()),
            })
        })
        .collect())
}
