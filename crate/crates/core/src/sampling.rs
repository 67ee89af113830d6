//! Gaussian covariance models and sampling.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::seed_derive;
use crate::spectral::{
    decompose_default, fix_sign, group_eigenvalues, spectral_gaps, DistinctEigenvalue, SpectralDecomposition,
    SymMatrix, DEFAULT_GROUP_TOL,
};

/// Relative tolerance below which negative eigenvalues are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

/// Where a model came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModelMeta {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Closed-form effective rank where the family provides one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_rank: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CovarianceModel {
    pub sigma: SymMatrix,
    pub sqrt: SymMatrix,
    pub dec: SpectralDecomposition,
    pub meta: ModelMeta,
    /// Diagonal of `sqrt` when `sigma` is diagonal, for cheap sampling.
    sqrt_diag: Option<Vec<f64>>,
}

impl CovarianceModel {
    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn effective_rank(&self) -> Result<f64> {
        crate::spectral::effective_rank_of(&self.dec)
    }

    /// `||Sigma|| / bar g_r`, the smallest gap ratio bound `a` this model
    /// satisfies at rank `r`.
    pub fn gap_ratio(&self, r: usize) -> Result<f64> {
        let (_, g_bar) = spectral_gaps(&self.dec, r)?;
        Ok(self.dec.norm() / g_bar)
    }

    /// Smallest eigenvalue, the variance floor `sigma_0^2` of the model class.
    pub fn min_eigenvalue(&self) -> f64 {
        *self.dec.eigenvalues().last().expect("non-empty spectrum")
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0))
}

pub fn make_model(s: SymMatrix) -> Result<CovarianceModel> {
    make_model_with_meta(s, ModelMeta { family: "dense".into(), ..Default::default() })
}

fn make_model_with_meta(s: SymMatrix, meta: ModelMeta) -> Result<CovarianceModel> {
    let dec = decompose_default(&s)?;
    let min = *dec.eigenvalues().last().expect("non-empty spectrum");
    if min < -PSD_TOL * dec.norm() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let sqrt_diag = is_diagonal(s.matrix())
        .then(|| s.matrix().diagonal().iter().map(|x| x.max(0.0).sqrt()).collect::<Vec<_>>());
    let sqrt = match &sqrt_diag {
        Some(diag) => SymMatrix::from_diagonal(diag),
        None => dec.spectral_function(|_, l| l.max(0.0).sqrt()),
    };
    Ok(CovarianceModel {
        sigma: s,
        sqrt,
        dec,
        meta,
        sqrt_diag,
    })
}

/// `Sigma_0 = sum_{s <= r+1} mu_s P_s` with `mu_s = mu1 (1 - (s-1)/a)`, rank-one
/// `P_1..P_r` on the first `r` coordinates and `P_{r+1}` on the next `d`.
pub fn prop32_model(r: usize, a: f64, d: usize, mu1: f64) -> Result<CovarianceModel> {
    if r == 0 {
        return Err(Error::validation("prop32: r must be at least 1"));
    }
    if !(a > r as f64) || !a.is_finite() {
        return Err(Error::validation(format!("prop32: need a > r, got a = {a}, r = {r}")));
    }
    if d == 0 {
        return Err(Error::validation("prop32: tail dimension d must be at least 1"));
    }
    if !(mu1 > 0.0) || !mu1.is_finite() {
        return Err(Error::validation(format!("prop32: mu1 must be positive, got {mu1}")));
    }
    let mu = |s: usize| mu1 * (1.0 - (s - 1) as f64 / a);
    let mut diag: Vec<f64> = (1..=r).map(mu).collect();
    diag.extend(std::iter::repeat_n(mu(r + 1), d));
    let eff = (1..=r).map(|s| 1.0 - (s - 1) as f64 / a).sum::<f64>() + (1.0 - r as f64 / a) * d as f64;
    make_model_with_meta(
        SymMatrix::from_diagonal(&diag),
        ModelMeta {
            family: "prop32".into(),
            r: Some(r),
            a: Some(a),
            tail_dim: Some(d),
            mu1: Some(mu1),
            effective_rank: Some(eff),
            ..Default::default()
        },
    )
}

/// `diag(s_1 + noise, ..., s_l + noise, noise, ..., noise)` of size `d`.
pub fn spiked_model(spikes: &[f64], noise: f64, d: usize) -> Result<CovarianceModel> {
    if d < spikes.len() || d == 0 {
        return Err(Error::validation(format!(
            "spiked: dimension {d} must be positive and at least the number of spikes {}",
            spikes.len()
        )));
    }
    if spikes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::validation("spiked: spikes must be positive and finite"));
    }
    if spikes.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::validation("spiked: spikes must be strictly descending"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::validation(format!("spiked: noise must be non-negative, got {noise}")));
    }
    let mut diag: Vec<f64> = spikes.iter().map(|s| s + noise).collect();
    diag.resize(d, noise);
    make_model_with_meta(
        SymMatrix::from_diagonal(&diag),
        ModelMeta {
            family: "spiked".into(),
            spikes: spikes.to_vec(),
            noise: Some(noise),
            ..Default::default()
        },
    )
}

/// Serializable model description used in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Prop32 {
        r: usize,
        a: f64,
        d: usize,
        #[serde(default = "one")]
        mu1: f64,
    },
    Spiked {
        spikes: Vec<f64>,
        noise: f64,
        d: usize,
    },
    Diagonal {
        values: Vec<f64>,
    },
    Dense {
        rows: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<CovarianceModel> {
        match self {
            ModelSpec::Prop32 { r, a, d, mu1 } => prop32_model(*r, *a, *d, *mu1),
            ModelSpec::Spiked { spikes, noise, d } => spiked_model(spikes, *noise, *d),
            ModelSpec::Diagonal { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation("diagonal: values must be non-empty and finite"));
                }
                make_model_with_meta(
                    SymMatrix::from_diagonal(values),
                    ModelMeta { family: "diagonal".into(), ..Default::default() },
                )
            }
            ModelSpec::Dense { rows } => make_model(SymMatrix::from_rows(rows)?),
        }
    }

    /// Copy with the tail dimension replaced, for effective-rank sweeps.
    pub fn with_tail_dim(&self, d: usize) -> Result<ModelSpec> {
        match self {
            ModelSpec::Prop32 { r, a, mu1, .. } => Ok(ModelSpec::Prop32 { r: *r, a: *a, d, mu1: *mu1 }),
            ModelSpec::Spiked { spikes, noise, .. } => Ok(ModelSpec::Spiked {
                spikes: spikes.clone(),
                noise: *noise,
                d,
            }),
            _ => Err(Error::validation("tail dimension sweeps need a prop32 or spiked model")),
        }
    }
}

/// `n` observations in the rows of `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub n: usize,
    pub dim: usize,
    pub data: DMatrix<f64>,
    /// Master seed, absent for samples loaded from a file.
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::validation("sample set must have at least one row and column"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("sample set contains non-finite entries"));
        }
        Ok(SampleSet {
            n: data.nrows(),
            dim: data.ncols(),
            data,
            seed: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::validation("sample rows have unequal lengths"));
        }
        Self::from_matrix(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    /// Rows `start..start + len`.
    pub fn block(&self, start: usize, len: usize) -> DMatrixView<'_, f64> {
        self.data.rows(start, len)
    }

    /// Copy with every observation multiplied by `c`.
    pub fn scaled(&self, c: f64) -> SampleSet {
        SampleSet {
            data: &self.data * c,
            ..self.clone()
        }
    }
}

/// Standard normal vector for observation `i` under master `seed`.
fn fill_row(z: &mut DMatrix<f64>, i: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_derive(seed, i as u64));
    for j in 0..z.ncols() {
        z[(i, j)] = StandardNormal.sample(&mut rng);
    }
}

/// Draw `n` observations `X_i = Sigma^{1/2} Z_i`. Row `i` uses its own
/// ChaCha8 stream seeded with `seed_derive(seed, i)`.
pub fn draw(model: &CovarianceModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::validation("draw: n must be at least 1"));
    }
    let d = model.dim();
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        fill_row(&mut z, i, seed);
    }
    let data = match &model.sqrt_diag {
        Some(diag) => {
            for (j, s) in diag.iter().enumerate() {
                z.column_mut(j).scale_mut(*s);
            }
            z
        }
        None => z * model.sqrt.matrix(),
    };
    Ok(SampleSet {
        n,
        dim: d,
        data,
        seed: Some(seed),
    })
}

/// `X^T X / k` for the rows of a block.
pub(crate) fn block_covariance(x: &DMatrixView<'_, f64>) -> SymMatrix {
    let k = x.nrows() as f64;
    SymMatrix::symmetrize(x.tr_mul(x) / k)
}

/// `Sigma_hat = n^{-1} sum_j X_j X_j^T`, uncentered.
pub fn sample_covariance(samples: &SampleSet) -> Result<SymMatrix> {
    if samples.data.nrows() == 0 {
        return Err(Error::validation("sample covariance of an empty sample"));
    }
    Ok(block_covariance(&samples.data.rows(0, samples.data.nrows())))
}

/// Relative threshold below which a Gram eigenvalue is treated as zero.
const NULL_TOL: f64 = 1e-12;

/// Eigenvalues and leading eigenvectors of the sample covariance of a block
/// of observations.
///
/// With fewer observations `k` than coordinates `d`, the spectrum is taken
/// from the `k x k` Gram matrix `X X^T / k` and eigenvectors are mapped back
/// by `v = X^T w / sqrt(k lambda)`. Eigenvectors of the zero eigenvalue are
/// then not stored; asking for one falls back to the dense route.
#[derive(Debug, Clone)]
pub struct SampleSpectrum {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
    groups: Vec<DistinctEigenvalue>,
    block: Option<DMatrix<f64>>,
}

impl SampleSpectrum {
    pub fn from_block(x: &DMatrixView<'_, f64>) -> Result<Self> {
        let (k, d) = x.shape();
        if k == 0 || d == 0 {
            return Err(Error::validation("sample spectrum of an empty block"));
        }
        if k >= d {
            return Ok(Self::from_decomposition(&decompose_default(&block_covariance(x))?));
        }
        let gram = SymMatrix::symmetrize(x * x.transpose() / k as f64);
        let dec = decompose_default(&gram)?;
        let top = dec.eigenvalues()[0].max(0.0);
        let rank = dec.eigenvalues().iter().take_while(|&&l| l > NULL_TOL * top).count();
        let mut eigenvalues = dec.eigenvalues()[..rank].to_vec();
        eigenvalues.resize(d, 0.0);
        let mut vectors = DMatrix::zeros(d, rank);
        for j in 0..rank {
            let w = dec.eigenvectors().column(j);
            let v = x.tr_mul(&w) / (k as f64 * eigenvalues[j]).sqrt();
            vectors.set_column(j, &fix_sign(v.normalize()));
        }
        let groups = group_eigenvalues(&eigenvalues, DEFAULT_GROUP_TOL * (1.0 + top));
        Ok(SampleSpectrum {
            eigenvalues,
            vectors,
            groups,
            block: Some(x.into_owned()),
        })
    }

    pub fn from_decomposition(dec: &SpectralDecomposition) -> Self {
        SampleSpectrum {
            eigenvalues: dec.eigenvalues().to_vec(),
            vectors: dec.eigenvectors().clone(),
            groups: dec.groups().to_vec(),
            block: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn groups(&self) -> &[DistinctEigenvalue] {
        &self.groups
    }

    /// Stored eigenvectors, one column per leading eigenvalue.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn norm(&self) -> f64 {
        self.eigenvalues[0].max(-self.eigenvalues[self.dim() - 1])
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Unit eigenvector `j` (0-based) under the largest-entry sign rule.
    pub fn eigenvector(&self, j: usize) -> Result<DVector<f64>> {
        if j >= self.dim() {
            return Err(Error::Index { index: j + 1, len: self.dim() });
        }
        if j < self.vectors.ncols() {
            return Ok(self.vectors.column(j).into_owned());
        }
        let block = self.block.as_ref().expect("dense spectra store every eigenvector");
        let dec = decompose_default(&block_covariance(&block.rows(0, block.nrows())))?;
        Ok(dec.eigenvector(j))
    }
}
