//! Gaussian-regularized sliced inverse regression.
//!
//! The crate estimates the direction of a single-index (or few-index)
//! regression by maximum likelihood in the inverse regression model, with an
//! optional Gaussian prior on the direction that regularizes the estimation
//! when the predictor covariance is ill-conditioned or singular. Six built-in
//! priors reproduce the classical estimator, ridge, PCA preprocessing,
//! Tikhonov smoothing and their subspace combinations.
//!
//! * [`design`] — slicing, basis evaluation and empirical moments.
//! * [`priors`] — symbolic priors and their spectral materialization.
//! * [`estimator`] — the unregularized and regularized fits and objectives.
//! * [`forward_link`] — piecewise-linear link estimation and prediction.
//! * [`simulation`] — synthetic models, quality criteria and experiments.
//! * [`artifact`] — JSON persistence of fitted models.

// `!(x > 0.0)` is used on purpose throughout: NaN must fail positivity checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod design;
pub mod error;
pub mod estimator;
pub mod forward_link;
pub mod priors;
pub mod simulation;

pub use artifact::ModelArtifact;
pub use design::{
    compute_moments, indicator_basis, make_slices, w_inverse_indicator, Dataset, DesignMoments,
    SliceAssignment,
};
pub use error::{Error, Result};
pub use estimator::{
    fit_grsir, fit_sir, objective_g, objective_g_omega, snr_estimate, solve_direction_problem,
    FitResult, SingleIndexFit,
};
pub use forward_link::{compute_index, fit_link, predict, PiecewiseLinearLink};
pub use priors::{
    default_cutoff, materialize, materialize_from, project_problem, spectral_decompose,
    PriorMaterialization, PriorSpec, SpectralDecomposition,
};
pub use simulation::{
    default_tau_grid, default_theta_grid, make_population, msc, random_orthogonal, run_experiment,
    sample_model, tau_grid, vsc, CriterionReport, LogBase, Method, ModelId, Population, ReportRow,
    ScenarioConfig,
};
