//! Dense symmetric spectral machinery.
//!
//! Eigenvalues are kept in non-increasing order and grouped into distinct
//! eigenvalues `mu_1 > mu_2 > ...` with multiplicities. Group ranks are
//! 1-based throughout the crate (`r = 1` is the top eigenvalue), matching the
//! usual statistical convention; eigenvalue indices are 0-based.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when merging numerically equal eigenvalues.
pub const DEFAULT_GROUP_TOL: f64 = 1e-9;

/// A real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Absolute tolerance on `|a_ij - a_ji|`.
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::validation(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::validation("matrix has dimension 0"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("matrix has non-finite entries"));
        }
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                let diff = (m[(i, j)] - m[(j, i)]).abs();
                if diff > Self::SYMMETRY_TOL {
                    return Err(Error::validation(format!(
                        "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:.3e}"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Replaces `m` by `(m + m^T) / 2`. Used for products that are symmetric
    /// in exact arithmetic.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::validation("rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(values: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    /// `x x^T` for a vector `x`.
    pub fn outer(x: &DVector<f64>) -> Self {
        SymMatrix(x * x.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        self.check_dim(other)?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        self.check_dim(other)?;
        Ok(SymMatrix(&self.0 - &other.0))
    }

    /// Frobenius norm from the entries.
    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn quadratic_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * y))
    }

    pub(crate) fn check_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::validation(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// A distinct eigenvalue `mu_r` with the contiguous block of eigenvalue
/// indices `Delta_r` that it occupies in the descending list.
#[derive(Debug, Clone, PartialEq)]
pub struct DistinctEigenvalue {
    pub value: f64,
    pub indices: Range<usize>,
}

impl DistinctEigenvalue {
    pub fn multiplicity(&self) -> usize {
        self.indices.len()
    }
}

/// Eigendecomposition `S = sum_s mu_s P_s` with descending eigenvalues.
///
/// Projectors are formed on demand; storing all of them would take `O(d^3)`
/// memory.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    groups: Vec<DistinctEigenvalue>,
}

/// Decompose a symmetric matrix, merging eigenvalues closer than
/// `group_tol * (1 + ||S||)`.
pub fn decompose(s: &SymMatrix, group_tol: f64) -> Result<SpectralDecomposition> {
    if !(group_tol >= 0.0) {
        return Err(Error::validation("group_tol must be non-negative"));
    }
    let d = s.dim();
    let m = s.matrix();
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100 * d.max(10)).ok_or_else(|| {
        Error::Numerical {
            dim: d,
            max_abs: m.amax(),
            frobenius: m.norm(),
        }
    })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let eigenvectors = DMatrix::from_fn(d, d, |i, k| eig.eigenvectors[(i, order[k])]);
    SpectralDecomposition::from_parts(eigenvalues, eigenvectors, group_tol)
}

/// [`decompose`] with [`DEFAULT_GROUP_TOL`].
pub fn decompose_default(s: &SymMatrix) -> Result<SpectralDecomposition> {
    decompose(s, DEFAULT_GROUP_TOL)
}

/// Flip `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    if let Some(k) = argmax_abs(v.as_slice()) {
        if v[k] < 0.0 {
            v.neg_mut();
        }
    }
    v
}

fn argmax_abs(xs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, x) in xs.iter().enumerate() {
        let a = x.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((k, a));
        }
    }
    best.map(|(k, _)| k)
}

pub(crate) fn group_eigenvalues(eigenvalues: &[f64], tol: f64) -> Vec<DistinctEigenvalue> {
    let mut groups = Vec::new();
    let mut start = 0;
    for j in 1..=eigenvalues.len() {
        if j == eigenvalues.len() || eigenvalues[j - 1] - eigenvalues[j] > tol {
            let block = &eigenvalues[start..j];
            let value = block.iter().sum::<f64>() / block.len() as f64;
            groups.push(DistinctEigenvalue {
                value,
                indices: start..j,
            });
            start = j;
        }
    }
    groups
}

impl SpectralDecomposition {
    /// Assemble a decomposition from descending eigenvalues and matching
    /// orthonormal eigenvector columns. Column signs are normalized.
    pub fn from_parts(
        eigenvalues: Vec<f64>,
        mut eigenvectors: DMatrix<f64>,
        group_tol: f64,
    ) -> Result<Self> {
        let d = eigenvalues.len();
        if eigenvectors.nrows() != d || eigenvectors.ncols() != d {
            return Err(Error::validation("eigenvector matrix must be d x d"));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::validation("eigenvalues must be non-increasing"));
        }
        for k in 0..d {
            let col = fix_sign(eigenvectors.column(k).into_owned());
            eigenvectors.set_column(k, &col);
        }
        let norm = eigenvalues.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let groups = group_eigenvalues(&eigenvalues, group_tol * (1.0 + norm));
        Ok(SpectralDecomposition {
            eigenvalues,
            eigenvectors,
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Unit eigenvector for eigenvalue index `j` (0-based).
    pub fn eigenvector(&self, j: usize) -> DVector<f64> {
        self.eigenvectors.column(j).into_owned()
    }

    pub fn groups(&self) -> &[DistinctEigenvalue] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Distinct eigenvalue of rank `r` (1-based).
    pub fn group(&self, r: usize) -> Result<&DistinctEigenvalue> {
        if r == 0 || r > self.groups.len() {
            return Err(Error::Index {
                index: r,
                len: self.groups.len(),
            });
        }
        Ok(&self.groups[r - 1])
    }

    /// Operator norm, `max_j |lambda_j|`.
    pub fn norm(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Orthogonal projector `P_r` onto the eigenspace of `mu_r`.
    pub fn projector(&self, r: usize) -> Result<SymMatrix> {
        let g = self.group(r)?;
        Ok(self.projector_on(g.indices.clone()))
    }

    /// Projector onto the span of eigenvectors `indices`.
    pub fn projector_on(&self, indices: Range<usize>) -> SymMatrix {
        let v = self.eigenvectors.columns(indices.start, indices.len());
        SymMatrix::symmetrize(&v * v.transpose())
    }

    /// `P_r x` without forming `P_r`.
    pub fn project(&self, r: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.group(r)?;
        let v = self.eigenvectors.columns(g.indices.start, g.indices.len());
        Ok(&v * (v.transpose() * x))
    }

    /// Eigenvector `theta_r` of a simple eigenvalue.
    pub fn simple_eigenvector(&self, r: usize) -> Result<DVector<f64>> {
        let g = self.group(r)?;
        if g.multiplicity() != 1 {
            return Err(Error::Multiplicity {
                r,
                multiplicity: g.multiplicity(),
            });
        }
        Ok(self.eigenvector(g.indices.start))
    }

    /// `f(S) = sum_j f(lambda_j) v_j v_j^T`, with `f` evaluated per eigenvalue
    /// index.
    pub fn spectral_function(&self, f: impl Fn(usize, f64) -> f64) -> SymMatrix {
        let v = &self.eigenvectors;
        let weights =
            DVector::from_iterator(self.dim(), self.eigenvalues.iter().enumerate().map(|(j, &l)| f(j, l)));
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * weights[k]);
        SymMatrix::symmetrize(scaled * v.transpose())
    }

    /// `sum_s mu_s P_s`.
    pub fn reconstruct(&self) -> SymMatrix {
        let mut mu = vec![0.0; self.dim()];
        for g in &self.groups {
            for j in g.indices.clone() {
                mu[j] = g.value;
            }
        }
        self.spectral_function(|j, _| mu[j])
    }

    /// Weight `1 / (mu_r - mu_s)` for every eigenvalue index outside group
    /// `r`, zero inside it.
    fn resolvent_weights(&self, r: usize) -> Result<Vec<f64>> {
        let target = self.group(r)?;
        if self.groups.len() < 2 {
            return Err(Error::domain(
                "reduced resolvent needs at least two distinct eigenvalues",
            ));
        }
        let mut w = vec![0.0; self.dim()];
        for (s, g) in self.groups.iter().enumerate() {
            if s + 1 == r {
                continue;
            }
            let inv = 1.0 / (target.value - g.value);
            for j in g.indices.clone() {
                w[j] = inv;
            }
        }
        Ok(w)
    }

    /// `C_r x` without forming `C_r`.
    pub fn apply_resolvent(&self, r: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.resolvent_weights(r)?;
        let v = &self.eigenvectors;
        let mut coeffs = v.transpose() * x;
        for (c, wj) in coeffs.iter_mut().zip(&w) {
            *c *= wj;
        }
        Ok(v * coeffs)
    }
}

/// Effective rank `tr(S) / ||S||`.
pub fn effective_rank(s: &SymMatrix) -> Result<f64> {
    effective_rank_of(&decompose_default(s)?)
}

pub fn effective_rank_of(dec: &SpectralDecomposition) -> Result<f64> {
    let norm = dec.norm();
    if norm == 0.0 {
        return Err(Error::domain("effective rank of the zero matrix is undefined"));
    }
    Ok(dec.trace() / norm)
}

/// The gap `g_r` of group `r` and `bar g_r = min_{s <= r} g_s`.
///
/// A matrix with a single distinct eigenvalue gets `g_1 = mu_1`, the distance
/// to the zero spectrum of the orthogonal complement.
pub fn spectral_gaps(dec: &SpectralDecomposition, r: usize) -> Result<(f64, f64)> {
    dec.group(r)?;
    let gap = |s: usize| -> f64 {
        let mu = dec.groups[s].value;
        if dec.groups.len() == 1 {
            return mu.abs();
        }
        dec.groups
            .iter()
            .enumerate()
            .filter(|&(t, _)| t != s)
            .map(|(_, g)| (mu - g.value).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let g_r = gap(r - 1);
    let g_bar = (0..r).map(gap).fold(f64::INFINITY, f64::min);
    Ok((g_r, g_bar))
}

/// Reduced resolvent `C_r = sum_{s != r} P_s / (mu_r - mu_s)`.
pub fn reduced_resolvent(dec: &SpectralDecomposition, r: usize) -> Result<SymMatrix> {
    let w = dec.resolvent_weights(r)?;
    Ok(dec.spectral_function(|j, _| w[j]))
}

/// Supported Schatten exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SchattenP {
    /// Nuclear norm.
    One,
    /// Hilbert-Schmidt (Frobenius) norm.
    Two,
    /// Operator norm.
    Inf,
}

impl TryFrom<f64> for SchattenP {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        match p {
            p if p == 1.0 => Ok(SchattenP::One),
            p if p == 2.0 => Ok(SchattenP::Two),
            p if p == f64::INFINITY => Ok(SchattenP::Inf),
            p => Err(Error::validation(format!(
                "unsupported Schatten exponent {p}; expected 1, 2 or infinity"
            ))),
        }
    }
}

/// Schatten norm from a list of eigenvalues.
pub fn schatten_from_eigenvalues(eigenvalues: &[f64], p: SchattenP) -> f64 {
    match p {
        SchattenP::One => eigenvalues.iter().map(|l| l.abs()).sum(),
        SchattenP::Two => eigenvalues.iter().map(|l| l * l).sum::<f64>().sqrt(),
        SchattenP::Inf => eigenvalues.iter().fold(0.0_f64, |a, l| a.max(l.abs())),
    }
}

pub fn schatten_norm(a: &SymMatrix, p: SchattenP) -> Result<f64> {
    Ok(schatten_from_eigenvalues(decompose_default(a)?.eigenvalues(), p))
}

/// `sup_j |lambda_j(A) - lambda_j(B)|` over sorted eigenvalues.
pub fn weyl_deviation(a: &SpectralDecomposition, b: &SpectralDecomposition) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a
        .eigenvalues()
        .iter()
        .zip(b.eigenvalues())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::random_orthogonal;

    fn diag(v: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(v)
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-9, 1.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::Validation(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-13, 1.0]);
        assert!(SymMatrix::new(m).is_ok());
    }

    #[test]
    fn groups_repeated_eigenvalue() {
        let dec = decompose_default(&diag(&[2.0, 1.0, 1.0])).unwrap();
        let g: Vec<_> = dec.groups().iter().map(|g| (g.value, g.multiplicity())).collect();
        assert_eq!(g, vec![(2.0, 1), (1.0, 2)]);
    }

    #[test]
    fn identity_is_one_group() {
        let dec = decompose_default(&SymMatrix::identity(3)).unwrap();
        assert_eq!(dec.num_groups(), 1);
        assert_eq!(dec.groups()[0].multiplicity(), 3);
        let p = dec.projector(1).unwrap();
        assert!((p.matrix() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn conjugated_diagonal_recovers_spectrum() {
        let q = random_orthogonal(5, 17);
        let s = SymMatrix::symmetrize(&q * DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0])) * q.transpose());
        let dec = decompose_default(&s).unwrap();
        assert_eq!(dec.num_groups(), 5);
        for (l, want) in dec.eigenvalues().iter().zip([5.0, 4.0, 3.0, 2.0, 1.0]) {
            assert!((l - want).abs() < 1e-8);
        }
        let err = (dec.reconstruct().matrix() - s.matrix()).norm() / s.frobenius();
        assert!(err < 1e-8);
        for r in 1..=5 {
            let p = dec.projector(r).unwrap();
            assert!((p.matrix() * p.matrix() - p.matrix()).amax() < 1e-8);
        }
    }

    #[test]
    fn eigenvector_sign_rule() {
        let dec = decompose_default(&SymMatrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap()).unwrap();
        for k in 0..2 {
            let v = dec.eigenvector(k);
            let j = argmax_abs(v.as_slice()).unwrap();
            assert!(v[j] > 0.0);
        }
    }

    #[test]
    fn effective_rank_examples() {
        assert!((effective_rank(&SymMatrix::identity(7)).unwrap() - 7.0).abs() < 1e-12);
        assert!((effective_rank(&diag(&[2.0, 1.0, 1.0])).unwrap() - 2.0).abs() < 1e-12);
        let mut v = vec![4.0];
        v.extend([1.0; 9]);
        assert!((effective_rank(&diag(&v)).unwrap() - 3.25).abs() < 1e-12);
        assert!(matches!(effective_rank(&SymMatrix::zeros(3)), Err(Error::Domain(_))));
    }

    #[test]
    fn gap_examples() {
        let dec = decompose_default(&diag(&[3.0, 1.0])).unwrap();
        assert_eq!(spectral_gaps(&dec, 1).unwrap(), (2.0, 2.0));
        let dec = decompose_default(&diag(&[5.0, 4.0, 1.0])).unwrap();
        assert_eq!(spectral_gaps(&dec, 2).unwrap(), (1.0, 1.0));
        assert_eq!(spectral_gaps(&dec, 1).unwrap(), (1.0, 1.0));
        assert_eq!(spectral_gaps(&dec, 3).unwrap(), (3.0, 1.0));
        assert!(matches!(spectral_gaps(&dec, 4), Err(Error::Index { index: 4, len: 3 })));
        assert!(matches!(spectral_gaps(&dec, 0), Err(Error::Index { .. })));
        let flat = decompose_default(&SymMatrix::identity(2).scale(3.0)).unwrap();
        assert_eq!(spectral_gaps(&flat, 1).unwrap(), (3.0, 3.0));
    }

    #[test]
    fn resolvent_examples() {
        let dec = decompose_default(&diag(&[3.0, 1.0])).unwrap();
        let c1 = reduced_resolvent(&dec, 1).unwrap();
        assert!((c1.matrix() - diag(&[0.0, 0.5]).matrix()).amax() < 1e-15);
        let c2 = reduced_resolvent(&dec, 2).unwrap();
        assert!((c2.matrix() - diag(&[-0.5, 0.0]).matrix()).amax() < 1e-15);
        let dec = decompose_default(&diag(&[4.0, 2.0, 1.0])).unwrap();
        let c = reduced_resolvent(&dec, 2).unwrap();
        assert!((c.matrix() - diag(&[-0.5, 0.0, 1.0]).matrix()).amax() < 1e-15);
        let flat = decompose_default(&SymMatrix::identity(3)).unwrap();
        assert!(matches!(reduced_resolvent(&flat, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn resolvent_annihilates_own_projector() {
        let q = random_orthogonal(4, 3);
        let s = SymMatrix::symmetrize(&q * DMatrix::from_diagonal(&DVector::from_vec(vec![6.0, 3.0, 3.0, 1.0])) * q.transpose());
        let dec = decompose_default(&s).unwrap();
        for r in 1..=dec.num_groups() {
            let c = reduced_resolvent(&dec, r).unwrap();
            let p = dec.projector(r).unwrap();
            assert!((c.matrix() * p.matrix()).amax() < 1e-12);
            let (g, _) = spectral_gaps(&dec, r).unwrap();
            let cn = schatten_norm(&c, SchattenP::Inf).unwrap();
            assert!((cn * g - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn schatten_examples() {
        let a = diag(&[1.0, -2.0]);
        assert!((schatten_norm(&a, SchattenP::One).unwrap() - 3.0).abs() < 1e-14);
        assert!((schatten_norm(&a, SchattenP::Two).unwrap() - 5f64.sqrt()).abs() < 1e-14);
        assert!((schatten_norm(&a, SchattenP::Inf).unwrap() - 2.0).abs() < 1e-14);
        assert!(SchattenP::try_from(3.0).is_err());
        assert_eq!(SchattenP::try_from(f64::INFINITY).unwrap(), SchattenP::Inf);
    }

    #[test]
    fn weyl_examples() {
        let a = decompose_default(&diag(&[3.0, 1.0])).unwrap();
        assert_eq!(weyl_deviation(&a, &a).unwrap(), 0.0);
        let b = decompose_default(&diag(&[2.5, 1.2])).unwrap();
        assert!((weyl_deviation(&a, &b).unwrap() - 0.5).abs() < 1e-14);
        let c = decompose_default(&SymMatrix::identity(3)).unwrap();
        assert!(matches!(weyl_deviation(&a, &c), Err(Error::Validation(_))));
    }

    #[test]
    fn apply_resolvent_matches_matrix() {
        let q = random_orthogonal(6, 9);
        let s = SymMatrix::symmetrize(&q * DMatrix::from_diagonal(&DVector::from_vec(vec![6.0, 5.0, 3.0, 3.0, 2.0, 0.5])) * q.transpose());
        let dec = decompose_default(&s).unwrap();
        let x = DVector::from_fn(6, |i, _| (i as f64 + 1.0).sin());
        for r in 1..=dec.num_groups() {
            let dense = reduced_resolvent(&dec, r).unwrap().matrix() * &x;
            let fast = dec.apply_resolvent(r, &x).unwrap();
            assert!((dense - fast).amax() < 1e-12);
        }
    }
}
