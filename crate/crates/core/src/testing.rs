//! Seeded random fixtures shared by unit tests, integration tests and the
//! self-test command.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spectral::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn gaussian_vector(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng(seed);
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))
}

/// Orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    gaussian_matrix(d, d, seed).qr().q()
}

/// Symmetric matrix with Gaussian entries scaled by `scale`.
pub fn random_symmetric(d: usize, scale: f64, seed: u64) -> SymMatrix {
    let g = gaussian_matrix(d, d, seed);
    SymMatrix::symmetrize((&g + g.transpose()) * (0.5 * scale))
}

/// `Q diag(values) Q^T` with a seeded random rotation.
pub fn rotated_diagonal(values: &[f64], seed: u64) -> SymMatrix {
    let q = random_orthogonal(values.len(), seed);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(values));
    SymMatrix::symmetrize(&q * d * q.transpose())
}
