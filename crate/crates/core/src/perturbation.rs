//! First-order perturbation of spectral projectors and the bias of the
//! empirical eigenvector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::montecarlo::{mean_and_stderr, seed_derive};
use crate::sampling::{draw, CovarianceModel, SampleSpectrum};
use crate::spectral::{
    decompose_default, reduced_resolvent, schatten_norm, SchattenP, SpectralDecomposition, SymMatrix,
    DEFAULT_GROUP_TOL,
};

/// `P_hat_r = P_r + L_r(E) + S_r(E)`.
#[derive(Debug, Clone)]
pub struct PerturbationReport {
    pub linear: SymMatrix,
    pub remainder: SymMatrix,
    pub p_hat: SymMatrix,
    pub rho_u: Option<f64>,
    pub e_norm: f64,
}

impl PerturbationReport {
    /// Attach `rho_r(u)` for a given bias value `b_r`.
    pub fn with_rho(mut self, dec: &SpectralDecomposition, r: usize, b_r: f64, u: &DVector<f64>) -> Result<Self> {
        self.rho_u = Some(rho(dec, r, &self.p_hat, b_r, u)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasEstimate {
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
    /// `-A_r / (2n)`.
    pub theoretical: f64,
}

fn check_vector(dec: &SpectralDecomposition, u: &DVector<f64>) -> Result<()> {
    if u.len() != dec.dim() {
        return Err(Error::validation(format!(
            "vector has length {}, expected {}",
            u.len(),
            dec.dim()
        )));
    }
    Ok(())
}

fn check_matrix(dec: &SpectralDecomposition, e: &SymMatrix) -> Result<()> {
    if e.dim() != dec.dim() {
        return Err(Error::validation(format!(
            "perturbation is {0}x{0}, expected {1}x{1}",
            e.dim(),
            dec.dim()
        )));
    }
    Ok(())
}

/// `L_r(E) = P_r E C_r + C_r E P_r`.
pub fn linear_term(dec: &SpectralDecomposition, r: usize, e: &SymMatrix) -> Result<SymMatrix> {
    check_matrix(dec, e)?;
    let p = dec.projector(r)?;
    let c = reduced_resolvent(dec, r)?;
    let pec: DMatrix<f64> = p.matrix() * e.matrix() * c.matrix();
    Ok(SymMatrix::symmetrize(&pec + pec.transpose()))
}

/// `<L_r(E) theta_r, u>`, evaluated as `<E theta_r, C_r u>`.
pub fn linear_form(dec: &SpectralDecomposition, r: usize, e: &SymMatrix, u: &DVector<f64>) -> Result<f64> {
    check_matrix(dec, e)?;
    check_vector(dec, u)?;
    let theta = dec.simple_eigenvector(r)?;
    let cu = dec.apply_resolvent(r, u)?;
    Ok((e.matrix() * theta).dot(&cu))
}

/// Decompose `P_hat_r - P_r` for `Sigma + E`, matching the perturbed
/// eigenvectors by the index set of group `r`.
pub fn remainder(dec: &SpectralDecomposition, r: usize, e: &SymMatrix) -> Result<PerturbationReport> {
    check_matrix(dec, e)?;
    let range = dec.group(r)?.indices.clone();
    let sigma = dec.reconstruct();
    let perturbed = decompose_default(&sigma.add(e)?)?;
    let lam = perturbed.eigenvalues();
    let tol = DEFAULT_GROUP_TOL * (1.0 + perturbed.norm());
    let cut_before = range.start > 0 && lam[range.start - 1] - lam[range.start] <= tol;
    let cut_after = range.end < lam.len() && lam[range.end - 1] - lam[range.end] <= tol;
    if cut_before || cut_after {
        return Err(Error::Matching(format!(
            "perturbed eigenvalues at the boundary of indices {}..{} coincide",
            range.start + 1,
            range.end
        )));
    }
    let p_hat = perturbed.projector_on(range);
    let p = dec.projector(r)?;
    let linear = linear_term(dec, r, e)?;
    let remainder = SymMatrix::symmetrize(p_hat.matrix() - p.matrix() - linear.matrix());
    Ok(PerturbationReport {
        linear,
        remainder,
        p_hat,
        rho_u: None,
        e_norm: schatten_norm(e, SchattenP::Inf)?,
    })
}

/// `rho_r(u) = <(P_hat_r - (1 + b_r) P_r) theta_r, u>`.
pub fn rho(dec: &SpectralDecomposition, r: usize, p_hat: &SymMatrix, b_r: f64, u: &DVector<f64>) -> Result<f64> {
    check_matrix(dec, p_hat)?;
    check_vector(dec, u)?;
    if !(-1.0..=0.0).contains(&b_r) {
        return Err(Error::domain(format!("bias parameter must lie in [-1, 0], got {b_r}")));
    }
    let theta = dec.simple_eigenvector(r)?;
    Ok((p_hat.matrix() * &theta).dot(u) - (1.0 + b_r) * theta.dot(u))
}

/// `A_r(Sigma)` as `(trace-product form, explicit sum)`.
///
/// The trace form is `2 tr(P_r Sigma P_r) tr(C_r Sigma C_r)`; the sum is
/// `2 m_r sum_{s != r} mu_r mu_s m_s / (mu_r - mu_s)^2`.
pub fn a_r_forms(dec: &SpectralDecomposition, r: usize) -> Result<(f64, f64)> {
    let sum = a_r(dec, r)?;
    let sigma = dec.reconstruct();
    let p = dec.projector(r)?;
    let c = reduced_resolvent(dec, r)?;
    let psp = p.matrix() * sigma.matrix() * p.matrix();
    let csc = c.matrix() * sigma.matrix() * c.matrix();
    Ok((2.0 * psp.trace() * csc.trace(), sum))
}

pub fn a_r(dec: &SpectralDecomposition, r: usize) -> Result<f64> {
    let target = dec.group(r)?;
    if dec.num_groups() < 2 {
        return Err(Error::domain("A_r needs at least two distinct eigenvalues"));
    }
    let mu_r = target.value;
    let sum: f64 = dec
        .groups()
        .iter()
        .enumerate()
        .filter(|&(s, _)| s + 1 != r)
        .map(|(_, g)| g.value * g.multiplicity() as f64 / (mu_r - g.value).powi(2))
        .sum();
    Ok(2.0 * target.multiplicity() as f64 * mu_r * sum)
}

/// Leading term `-A_r / (2n)` of the bias `b_r`.
pub fn bias_approx(dec: &SpectralDecomposition, r: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::validation("n must be at least 1"));
    }
    Ok(-a_r(dec, r)? / (2.0 * n as f64))
}

/// Monte Carlo estimate of `E <theta_hat_r, theta_r>^2 - 1`, where
/// `theta_hat_r` is the eigenvector of `Sigma_hat` at the index of
/// `theta_r`.
pub fn bias_oracle_mc(model: &CovarianceModel, r: usize, n: usize, reps: usize, seed: u64) -> Result<BiasEstimate> {
    if reps < 2 {
        return Err(Error::validation("bias_oracle_mc needs at least 2 replicates"));
    }
    let theta = model.dec.simple_eigenvector(r)?;
    let index = model.dec.group(r)?.indices.start;
    let theoretical = bias_approx(&model.dec, r, n)?;
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let x = draw(model, n, seed_derive(seed, i as u64))?;
            let spectrum = SampleSpectrum::from_block(&x.block(0, n))?;
            let v = spectrum.eigenvector(index)?;
            Ok(v.dot(&theta).powi(2) - 1.0)
        })
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_and_stderr(&values);
    Ok(BiasEstimate {
        value,
        stderr,
        reps,
        theoretical,
    })
}
