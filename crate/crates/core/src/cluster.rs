//! Delta-clusters of a spectrum and the empirical spectral projectors built
//! from them.
//!
//! Eigenvalues are walked in descending order; a new cluster starts wherever
//! the gap to the previous eigenvalue is at least `delta`. This is the same
//! partition as repeatedly peeling off the top cluster `A \ [0, lambda_delta(A))`.

use std::ops::Range;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::spectral::{fix_sign, SpectralDecomposition, SymMatrix};

/// Default relative cluster width, `delta = tau * ||Sigma_hat||`.
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaClustering {
    pub delta: f64,
    /// Index ranges into the descending eigenvalue list.
    pub clusters: Vec<Range<usize>>,
}

impl DeltaClustering {
    pub fn nu(&self) -> usize {
        self.clusters.len()
    }

    /// Index range of cluster `r` (1-based).
    pub fn cluster(&self, r: usize) -> Result<Range<usize>> {
        if r == 0 {
            return Err(Error::Index { index: 0, len: self.nu() });
        }
        self.clusters.get(r - 1).cloned().ok_or(Error::ClusterNotFound {
            r,
            nu: self.nu(),
            delta: self.delta,
        })
    }
}

pub fn delta_clusters(eigs: &[f64], delta: f64) -> Result<DeltaClustering> {
    if eigs.is_empty() {
        return Err(Error::validation("empty eigenvalue list"));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::validation(format!("delta must be positive, got {delta}")));
    }
    if eigs.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("non-finite eigenvalue"));
    }
    if eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::validation("eigenvalues must be sorted in non-increasing order"));
    }
    let mut clusters = Vec::new();
    let mut start = 0;
    for j in 1..eigs.len() {
        if eigs[j - 1] - eigs[j] >= delta {
            clusters.push(start..j);
            start = j;
        }
    }
    clusters.push(start..eigs.len());
    Ok(DeltaClustering { delta, clusters })
}

/// Empirical spectral projector `P_hat_r^delta` for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterProjector {
    pub r: usize,
    pub delta: f64,
    pub tau: f64,
    pub projector: SymMatrix,
    pub cluster: Range<usize>,
    /// Unit eigenvector when the cluster is a singleton.
    pub eigvec: Option<DVector<f64>>,
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 2.0) {
        return Err(Error::validation(format!("tau must lie in (0, 2), got {tau}")));
    }
    Ok(())
}

/// Returns a warning when `tau` violates `tau < 1/(4a) ∧ 2` for gap ratio
/// bound `a`.
pub fn tau_warning(tau: f64, a: f64) -> Option<String> {
    let limit = (1.0 / (4.0 * a)).min(2.0);
    (tau >= limit).then(|| {
        format!("tau = {tau} is not below 1/(4a) ∧ 2 = {limit:.4} for a = {a:.4}; cluster recovery is not guaranteed")
    })
}

pub fn empirical_projector(dec: &SpectralDecomposition, r: usize, tau: f64) -> Result<ClusterProjector> {
    check_tau(tau)?;
    let delta = tau * dec.norm();
    if delta == 0.0 {
        return Err(Error::domain("delta-clusters of the zero matrix are undefined"));
    }
    let cluster = delta_clusters(dec.eigenvalues(), delta)?.cluster(r)?;
    let projector = dec.projector_on(cluster.clone());
    let eigvec = (cluster.len() == 1).then(|| fix_sign(dec.eigenvector(cluster.start)));
    Ok(ClusterProjector {
        r,
        delta,
        tau,
        projector,
        cluster,
        eigvec,
    })
}

/// Sign `v` so that `<v, reference> >= 0`; an exact zero leaves `v` unchanged.
pub fn align(v: &DVector<f64>, reference: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != reference.len() {
        return Err(Error::validation("align: dimension mismatch"));
    }
    if reference.iter().all(|x| *x == 0.0) {
        return Err(Error::validation("align: zero reference vector"));
    }
    if v.dot(reference) < 0.0 {
        Ok(-v)
    } else {
        Ok(v.clone())
    }
}
