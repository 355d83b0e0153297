//! Localized Schrödinger bridge samplers.
//!
//! Given only training samples of an unknown distribution, a Schrödinger
//! bridge over the samples turns a Gaussian kernel matrix into a
//! reversible Markov chain (via Sinkhorn scaling) whose conditional mean
//! and covariance drive Langevin-type sampling schemes. Localization
//! replaces the single `d`-dimensional bridge with per-coordinate bridges
//! over low-dimensional dependency sets, which keeps the sample demand
//! independent of the ambient dimension and extends directly to
//! conditional and Bayesian sampling.
//!
//! The crate provides:
//!
//! * [`bridge`] — kernel matrices, Sinkhorn scaling, probability vectors,
//!   conditional means/covariances, and the induced score.
//! * [`localize`] — dependency sets, per-coordinate bridges, and the
//!   containment box that makes localized projections unconditionally
//!   stable.
//! * [`sampler`] — EM-type, split-step, data-aware, Bayesian, conditional
//!   (clamped), and KDE sampling schemes plus the generation and closure
//!   simulation loops.
//! * [`kde`] — the Tweedie/KDE denoiser baseline, global and localized.
//! * [`testbed`] — built-in experiments: periodic Gaussian fields, a
//!   bimodal SDE, and the two-scale Lorenz-96 closure problem.
//! * [`diagnostics`] — covariance rows, histograms, autocovariance,
//!   transition rates.
//! * [`io`] — bit-exact dataset and model files.

pub mod bridge;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kde;
pub mod localize;
pub mod sampler;
pub mod testbed;

pub use bridge::{
    inner_product_kernel_matrix, kernel_matrix, scaled_bistochastic, sinkhorn_fit, BridgeModel,
    DEFAULT_MAX_ITER, DEFAULT_SINKHORN_TOL,
};
pub use data::{Metric, SampleMatrix};
pub use error::{Error, Result};
pub use kde::{localized_kde_update, KdeModel, LocalizedKde};
pub use localize::{
    closure_pair_sets, full_window_sets, periodic_stencil_sets, temporal_markov_sets,
    ContainmentBox, DependencySet, LocalizedBridgeModel,
};
pub use sampler::{
    closure_simulate, generate, ChainMode, ChainState, Clamp, ClosureConfig, SamplerConfig,
    SamplerModel, Scheme,
};
