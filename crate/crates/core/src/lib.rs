//! Debiased estimation of linear functionals of principal components from
//! Gaussian samples, with the perturbation-theory primitives, variance
//! estimators, a van Trees lower bound and a Monte Carlo harness.

pub mod cluster;
pub mod error;
pub mod estimators;
pub mod lowerbound;
pub mod montecarlo;
pub mod perturbation;
pub mod sampling;
pub mod spectral;
pub mod testing;

pub use cluster::{align, delta_clusters, empirical_projector, ClusterProjector, DeltaClustering};
pub use error::{Error, Result};
pub use estimators::{
    confidence_interval, debiased_estimate, plugin_estimate, variance_estimate, variance_true, DebiasedEstimate,
    LossFunction, PluginEstimate,
};
pub use lowerbound::{van_trees_bound, van_trees_evaluate, Prior, VanTreesResult};
pub use montecarlo::{bias_sweep, run_scenario, seed_derive, EstimatorKind, FunctionalSpec, Scenario, SummaryReport};
pub use perturbation::{bias_oracle_mc, BiasEstimate, PerturbationReport};
pub use sampling::{draw, make_model, prop32_model, spiked_model, CovarianceModel, ModelSpec, SampleSet};
pub use spectral::{decompose, decompose_default, SpectralDecomposition, SymMatrix};
