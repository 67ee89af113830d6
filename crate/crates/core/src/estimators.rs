//! Plug-in and sample-split debiased estimators of `<theta_r, u>`, the
//! asymptotic variance `sigma_r^2(Sigma; u)` and confidence intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cluster::{check_tau, delta_clusters};
use crate::error::{Error, Result};
use crate::sampling::{SampleSet, SampleSpectrum};
use crate::spectral::{decompose_default, schatten_norm, spectral_gaps, DistinctEigenvalue, SchattenP, SpectralDecomposition, SymMatrix};

/// Floor on `<t2, t3>` before the square root in the correction factor.
pub const DENOMINATOR_FLOOR: f64 = 1.0 / 16.0;

/// Lower clamp on the correction factor.
pub const FACTOR_CLAMP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PluginEstimate {
    pub value: f64,
    pub theta_hat: DVector<f64>,
    pub delta: f64,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedEstimate {
    pub value: f64,
    pub theta_check: DVector<f64>,
    /// Eigenvector estimate from the first subsample, before correction.
    pub theta_first: DVector<f64>,
    pub d_check: f64,
    /// `(n', m)`.
    pub splits: (usize, usize),
    pub sigma_hat: f64,
    /// The `d_check ∨ 1/2` clamp was active.
    pub clamped: bool,
    /// The floor on `<t2, t3>` was active.
    pub floored: bool,
    /// Effective rank of the full-sample covariance used for the split rule.
    pub r_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFunction {
    Squared,
    Absolute,
    Huber { k: f64 },
}

impl Default for LossFunction {
    fn default() -> Self {
        LossFunction::Squared
    }
}

impl LossFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossFunction::Huber { k } if !(*k > 0.0) || !k.is_finite() => {
                Err(Error::validation(format!("huber k must be positive, got {k}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            LossFunction::Squared => x * x,
            LossFunction::Absolute => a,
            LossFunction::Huber { k } => {
                if a <= k {
                    0.5 * x * x
                } else {
                    k * (a - 0.5 * k)
                }
            }
        }
    }

    /// Constants `(c1, c2)` with `loss(x) <= c1 exp(c2 x)` for `x >= 0`.
    pub fn domination(&self) -> (f64, f64) {
        // x^2 <= e^x, x <= e^x and huber(x) <= x^2 / 2 on x >= 0.
        (1.0, 1.0)
    }

    pub fn name(&self) -> String {
        match self {
            LossFunction::Squared => "squared".into(),
            LossFunction::Absolute => "absolute".into(),
            LossFunction::Huber { k } => format!("huber({k})"),
        }
    }
}

fn check_u(dim: usize, u: &DVector<f64>) -> Result<()> {
    if u.len() != dim {
        return Err(Error::validation(format!("u has length {}, expected {dim}", u.len())));
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("u has non-finite entries"));
    }
    Ok(())
}

/// `mu_r sum_{s != r} mu_s |P_s u|^2 / (mu_r - mu_s)^2` for the group
/// containing eigenvalue index `index`. Eigenvectors beyond the stored
/// columns belong to the zero eigenvalue and contribute nothing.
fn variance_from_pairs(
    groups: &[DistinctEigenvalue],
    vectors: &DMatrix<f64>,
    index: usize,
    u: &DVector<f64>,
) -> Result<f64> {
    let (pos, target) = groups
        .iter()
        .enumerate()
        .find(|(_, g)| g.indices.contains(&index))
        .ok_or(Error::Index { index: index + 1, len: vectors.nrows() })?;
    if target.multiplicity() != 1 {
        return Err(Error::Multiplicity {
            r: pos + 1,
            multiplicity: target.multiplicity(),
        });
    }
    let coeffs = vectors.tr_mul(u);
    let mu_r = target.value;
    let mut sum = 0.0;
    for (s, g) in groups.iter().enumerate() {
        if s == pos {
            continue;
        }
        let norm2: f64 = g
            .indices
            .clone()
            .filter(|&j| j < coeffs.len())
            .map(|j| coeffs[j] * coeffs[j])
            .sum();
        sum += g.value * norm2 / (mu_r - g.value).powi(2);
    }
    Ok(mu_r * sum)
}

/// `sigma_r^2(Sigma; u)` in the explicit-sum form and as
/// `1/2 ||Sigma^{1/2} D Sigma^{1/2}||_2^2` with
/// `D = theta_r ⊗ C_r u + C_r u ⊗ theta_r`.
pub fn variance_forms(dec: &SpectralDecomposition, r: usize, u: &DVector<f64>) -> Result<(f64, f64)> {
    check_u(dec.dim(), u)?;
    let g = dec.group(r)?;
    let sum = variance_from_pairs(dec.groups(), dec.eigenvectors(), g.indices.start, u)?;
    let theta = dec.simple_eigenvector(r)?;
    let cu = dec.apply_resolvent(r, u)?;
    let v = dec.eigenvectors();
    let root = |x: &DVector<f64>| -> DVector<f64> {
        let mut c = v.tr_mul(x);
        for (cj, l) in c.iter_mut().zip(dec.eigenvalues()) {
            *cj *= l.max(0.0).sqrt();
        }
        v * c
    };
    let (x, y) = (root(&theta), root(&cu));
    let m = &x * y.transpose() + &y * x.transpose();
    Ok((sum, 0.5 * m.norm_squared()))
}

/// `sigma_r^2(Sigma; u) = mu_r <Sigma C_r u, C_r u>`.
pub fn variance_true(dec: &SpectralDecomposition, r: usize, u: &DVector<f64>) -> Result<f64> {
    let (sum, d_form) = variance_forms(dec, r, u)?;
    let (g_r, _) = spectral_gaps(dec, r)?;
    let scale = sum.abs().max(dec.norm().powi(2) / (g_r * g_r) * u.norm_squared() * 1e-6);
    debug_assert!((sum - d_form).abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE), "{sum} vs {d_form}");
    Ok(sum)
}

/// `sigma_r^2` from the spectrum of a sample covariance.
pub fn spectrum_variance(spectrum: &SampleSpectrum, r: usize, u: &DVector<f64>) -> Result<f64> {
    check_u(spectrum.dim(), u)?;
    let g = spectrum.groups().get(r.wrapping_sub(1)).ok_or(Error::Index {
        index: r,
        len: spectrum.groups().len(),
    })?;
    variance_from_pairs(spectrum.groups(), spectrum.vectors(), g.indices.start, u)
}

/// `sigma_r(Sigma_hat; u)` from the full sample.
pub fn variance_estimate(samples: &SampleSet, r: usize, u: &DVector<f64>) -> Result<f64> {
    let spectrum = SampleSpectrum::from_block(&samples.block(0, samples.n))?;
    Ok(spectrum_variance(&spectrum, r, u)?.max(0.0).sqrt())
}

/// Singleton delta-cluster `r` of a sample spectrum: `(eigenvector, delta)`.
fn cluster_vector(spectrum: &SampleSpectrum, r: usize, tau: f64) -> Result<(DVector<f64>, f64)> {
    check_tau(tau)?;
    let delta = tau * spectrum.norm();
    if delta == 0.0 {
        return Err(Error::domain("delta-clusters of a zero sample covariance are undefined"));
    }
    let cluster = delta_clusters(spectrum.eigenvalues(), delta)?.cluster(r)?;
    if cluster.len() != 1 {
        return Err(Error::Multiplicity {
            r,
            multiplicity: cluster.len(),
        });
    }
    Ok((spectrum.eigenvector(cluster.start)?, delta))
}

pub fn plugin_estimate(samples: &SampleSet, r: usize, tau: f64, u: &DVector<f64>) -> Result<PluginEstimate> {
    check_u(samples.dim, u)?;
    plugin_from_spectrum(&SampleSpectrum::from_block(&samples.block(0, samples.n))?, r, tau, u)
}

/// Plug-in estimate and `sigma_r(Sigma_hat; u)` from one decomposition of the full sample.
pub fn plugin_with_sigma(samples: &SampleSet, r: usize, tau: f64, u: &DVector<f64>) -> Result<(PluginEstimate, f64)> {
    check_u(samples.dim, u)?;
    let spectrum = SampleSpectrum::from_block(&samples.block(0, samples.n))?;
    let est = plugin_from_spectrum(&spectrum, r, tau, u)?;
    Ok((est, spectrum_variance(&spectrum, r, u)?.max(0.0).sqrt()))
}

fn plugin_from_spectrum(spectrum: &SampleSpectrum, r: usize, tau: f64, u: &DVector<f64>) -> Result<PluginEstimate> {
    let (theta_hat, delta) = cluster_vector(spectrum, r, tau)?;
    Ok(PluginEstimate {
        value: theta_hat.dot(u),
        theta_hat,
        delta,
        r,
    })
}

/// `(n', m)` with `m = clamp(ceil(n^{3/4} r_hat^{1/4}), 4, floor(n/4))` and
/// `n' = n - 2m`.
pub fn split_sizes(n: usize, r_hat: f64) -> Result<(usize, usize)> {
    if !(r_hat >= 1.0) || !r_hat.is_finite() {
        return Err(Error::validation(format!("r_hat must be at least 1, got {r_hat}")));
    }
    let raw = ((n as f64).powf(0.75) * r_hat.powf(0.25)).ceil();
    let upper = (n / 4) as f64;
    let m = raw.min(upper).max(4.0) as usize;
    if n < 2 * m || 3 * (n - 2 * m) <= n {
        return Err(Error::validation(format!(
            "n = {n} is too small for a three-way split (need n' = n - 2m > n/3 with m >= 4)"
        )));
    }
    Ok((n - 2 * m, m))
}

/// `<t1, t2> / max(<t2, t3>, 1/16)^{1/2}` and whether the floor engaged.
pub fn debias_factor(t1: &DVector<f64>, t2: &DVector<f64>, t3: &DVector<f64>) -> (f64, bool) {
    let inner = t2.dot(t3);
    let floored = inner < DENOMINATOR_FLOOR;
    (t1.dot(t2) / inner.max(DENOMINATOR_FLOOR).sqrt(), floored)
}

/// Three-way split estimator: the eigenvector from the first `n'` rows is
/// rescaled by a length correction estimated from the next two blocks of `m`
/// rows.
pub fn debiased_estimate(
    samples: &SampleSet,
    r: usize,
    tau: f64,
    u: &DVector<f64>,
    m: Option<usize>,
) -> Result<DebiasedEstimate> {
    check_u(samples.dim, u)?;
    check_tau(tau)?;
    let n = samples.n;
    if n < 12 {
        return Err(Error::validation(format!("debiased estimator needs n >= 12, got {n}")));
    }
    let full = SampleSpectrum::from_block(&samples.block(0, n))?;
    if full.norm() == 0.0 {
        return Err(Error::domain("sample covariance is zero"));
    }
    let r_hat = full.trace() / full.norm();
    let (n1, m) = match m {
        Some(m) => {
            if m < 1 || 3 * n.saturating_sub(2 * m) <= n {
                return Err(Error::validation(format!(
                    "split m = {m} leaves n' = n - 2m <= n/3 for n = {n}"
                )));
            }
            (n - 2 * m, m)
        }
        None => split_sizes(n, r_hat.max(1.0))?,
    };
    let blocks = [(0, n1), (n1, m), (n1 + m, m)];
    let subsample = |j: usize| -> Result<DVector<f64>> {
        let (start, len) = blocks[j];
        SampleSpectrum::from_block(&samples.block(start, len))
            .and_then(|s| cluster_vector(&s, r, tau))
            .map(|(v, _)| v)
            .map_err(|e| Error::Estimation {
                subsample: j + 1,
                source: Box::new(e),
            })
    };
    let (t1, (t2, t3)) = rayon::join(|| subsample(0), || rayon::join(|| subsample(1), || subsample(2)));
    let t1 = t1?;
    let t2 = crate::cluster::align(&t2?, &t1)?;
    let t3 = crate::cluster::align(&t3?, &t1)?;
    let (d_check, floored) = debias_factor(&t1, &t2, &t3);
    let clamped = d_check < FACTOR_CLAMP;
    let theta_check = &t1 / d_check.max(FACTOR_CLAMP);
    let sigma_hat = spectrum_variance(&full, r, u)?.max(0.0).sqrt();
    Ok(DebiasedEstimate {
        value: theta_check.dot(u),
        theta_check,
        theta_first: t1,
        d_check,
        splits: (n1, m),
        sigma_hat,
        clamped,
        floored,
        r_hat,
    })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `value ± z_{1 - alpha/2} sigma_hat / sqrt(n)`.
pub fn confidence_interval(value: f64, sigma_hat: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(sigma_hat >= 0.0) {
        return Err(Error::validation(format!("sigma_hat must be non-negative, got {sigma_hat}")));
    }
    if n == 0 {
        return Err(Error::validation("n must be at least 1"));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * sigma_hat / (n as f64).sqrt();
    Ok((value - half, value + half))
}

/// `|sigma_r^2(Sigma + E) - sigma_r^2(Sigma)|` and the first-order bound
/// shape `(||Sigma||^2 / g_r^2)(||E|| / g_r)|u|^2`.
pub fn variance_perturbation_check(
    dec: &SpectralDecomposition,
    r: usize,
    u: &DVector<f64>,
    e: &SymMatrix,
) -> Result<(f64, f64)> {
    if e.dim() != dec.dim() {
        return Err(Error::validation("perturbation dimension mismatch"));
    }
    let base = variance_true(dec, r, u)?;
    let (g_r, _) = spectral_gaps(dec, r)?;
    let e_norm = schatten_norm(e, SchattenP::Inf)?;
    if e_norm > g_r / 4.0 {
        return Err(Error::Precondition(format!(
            "||E|| = {e_norm:.3e} exceeds g_r / 4 = {:.3e}",
            g_r / 4.0
        )));
    }
    let index = dec.group(r)?.indices.start;
    let perturbed = decompose_default(&dec.reconstruct().add(e)?)?;
    let moved = variance_from_pairs(perturbed.groups(), perturbed.eigenvectors(), index, u)?;
    let shape = dec.norm().powi(2) / (g_r * g_r) * (e_norm / g_r) * u.norm_squared();
    Ok(((moved - base).abs(), shape))
}
