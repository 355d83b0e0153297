//! Time-stepping schemes and sample generation.
//!
//! All schemes share the template
//!
//! ```text
//! X(n+1) = m(X(n);ε) + sqrt(S(X(n);ε))·Ξ(n),   Ξ(n) ~ N(0, I),
//! ```
//!
//! instantiated globally or per coordinate:
//!
//! * EM-type: `S = 2εI`.
//! * Split-step: noising `X(n+1/2) = X(n) + sqrt(S)·Ξ(n)` followed by the
//!   projection `X(n+1) = m(X(n+1/2);ε)`, so every output is a convex
//!   combination of training data.
//! * Data-aware: `S(x;ε)` is the weighted conditional covariance.
//! * Bayesian: an extra drift `ε·∇log π(y|x)` on the conditional mean.
//! * KDE variants replace the bridge mean with the Tweedie denoiser.
//!
//! Localized schemes draw one full-dimensional noise vector per step and
//! restrict it per coordinate, so the per-coordinate updates see correlated
//! noise. Conditional sampling clamps a fixed index set to target values
//! right after the noising assignment and again after the projection.
//!
//! Chains are reproducible: chain `j` uses a ChaCha stream derived from
//! `(seed, j)`, and reruns give bitwise-identical output.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bridge::BridgeModel;
use crate::data::SampleMatrix;
use crate::error::{Error, Result};
use crate::kde::{KdeModel, LocalizedKde};
use crate::localize::{sqrt_row_noise, LocalizedBridgeModel};

/// Hard guard: a chain whose state exceeds this magnitude aborts with a
/// blow-up error instead of emitting garbage.
const BLOW_UP_GUARD: f64 = 1e6;

/// Gradient of a log-likelihood `x ↦ ∇ log π(y|x)` for Bayesian drift.
pub type LikelihoodGrad = std::sync::Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Time-stepping scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Em,
    SplitStep,
    DataAware,
    LocalizedEm,
    LocalizedSplitStep,
    LocalizedDataAware,
    KdeSplitStep,
    LocalizedKde,
}

impl Scheme {
    pub fn is_localized(self) -> bool {
        matches!(
            self,
            Scheme::LocalizedEm
                | Scheme::LocalizedSplitStep
                | Scheme::LocalizedDataAware
                | Scheme::LocalizedKde
        )
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "em" => Ok(Scheme::Em),
            "split_step" => Ok(Scheme::SplitStep),
            "data_aware" => Ok(Scheme::DataAware),
            "localized_em" => Ok(Scheme::LocalizedEm),
            "localized_split_step" => Ok(Scheme::LocalizedSplitStep),
            "localized_data_aware" => Ok(Scheme::LocalizedDataAware),
            "kde_split_step" => Ok(Scheme::KdeSplitStep),
            "localized_kde" => Ok(Scheme::LocalizedKde),
            other => Err(Error::Parameter(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Em => "em",
            Scheme::SplitStep => "split_step",
            Scheme::DataAware => "data_aware",
            Scheme::LocalizedEm => "localized_em",
            Scheme::LocalizedSplitStep => "localized_split_step",
            Scheme::LocalizedDataAware => "localized_data_aware",
            Scheme::KdeSplitStep => "kde_split_step",
            Scheme::LocalizedKde => "localized_kde",
        }
    }
}

/// Coordinates pinned to fixed values during conditional sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Clamp {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Clamp {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Parameter(format!(
                "{} clamp indices for {} values",
                indices.len(),
                values.len()
            )));
        }
        let mut seen = indices.to_vec();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("clamp indices must be distinct".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("clamp values must be finite".into()));
        }
        Ok(Self { indices, values })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }

    fn apply(&self, x: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            x[i] = v;
        }
    }
}

/// Current sampler state: position, step counter, and the seeded generator.
#[derive(Debug, Clone)]
pub struct ChainState {
    x: DVector<f64>,
    step: usize,
    rng: ChaCha12Rng,
}

impl ChainState {
    /// Starts a chain at `x` with the stream for `(seed, stream)`.
    pub fn new(x: DVector<f64>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { x, step: 0, rng }
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn step(&self) -> usize {
        self.step
    }

    fn draw_noise(&mut self, buf: &mut Vec<f64>) {
        let d = self.x.len();
        buf.clear();
        buf.extend((0..d).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
    }

    fn commit(&mut self, next: DVector<f64>) -> Result<()> {
        self.step += 1;
        if next.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_GUARD) {
            return Err(Error::BlowUp { step: self.step });
        }
        self.x = next;
        Ok(())
    }
}

/// The model a sampling scheme runs against.
#[derive(Debug, Clone)]
pub enum SamplerModel {
    Bridge(BridgeModel),
    Localized(LocalizedBridgeModel),
    Kde(KdeModel),
    LocalizedKde(LocalizedKde),
}

impl SamplerModel {
    pub fn dim(&self) -> usize {
        match self {
            SamplerModel::Bridge(m) => m.dim(),
            SamplerModel::Localized(m) => m.dim(),
            SamplerModel::Kde(m) => m.dim(),
            SamplerModel::LocalizedKde(m) => m.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SamplerModel::Bridge(m) => m.len(),
            SamplerModel::Localized(m) => m.len(),
            SamplerModel::Kde(m) => m.len(),
            SamplerModel::LocalizedKde(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            SamplerModel::Bridge(m) => m.epsilon(),
            SamplerModel::Localized(m) => m.epsilon(),
            SamplerModel::Kde(m) => m.epsilon(),
            SamplerModel::LocalizedKde(m) => m.epsilon(),
        }
    }

    pub fn training_data(&self) -> &SampleMatrix {
        match self {
            SamplerModel::Bridge(m) => m.data(),
            SamplerModel::Localized(m) => m.data(),
            SamplerModel::Kde(m) => m.data(),
            SamplerModel::LocalizedKde(m) => m.model().data(),
        }
    }

    fn supports(&self, scheme: Scheme) -> bool {
        matches!(
            (self, scheme),
            (SamplerModel::Bridge(_), Scheme::Em)
                | (SamplerModel::Bridge(_), Scheme::SplitStep)
                | (SamplerModel::Bridge(_), Scheme::DataAware)
                | (SamplerModel::Localized(_), Scheme::LocalizedEm)
                | (SamplerModel::Localized(_), Scheme::LocalizedSplitStep)
                | (SamplerModel::Localized(_), Scheme::LocalizedDataAware)
                | (SamplerModel::Kde(_), Scheme::KdeSplitStep)
                | (SamplerModel::LocalizedKde(_), Scheme::LocalizedKde)
        )
    }
}

struct Workspace {
    noise: Vec<f64>,
    restricted: Vec<f64>,
    xi_restricted: Vec<f64>,
    weights: Vec<f64>,
}

impl Workspace {
    fn new() -> Self {
        Self {
            noise: Vec::new(),
            restricted: Vec::new(),
            xi_restricted: Vec::new(),
            weights: Vec::new(),
        }
    }
}

fn validate_grad(grad: &[f64], d: usize) -> Result<()> {
    if grad.len() != d {
        return Err(Error::Data(format!(
            "likelihood gradient has dimension {}, expected {d}",
            grad.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Data("likelihood gradient is not finite".into()));
    }
    Ok(())
}

/// Symmetric PSD square root via eigendecomposition with eigenvalues
/// clamped at zero.
fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut eig = s.clone().symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose()
}

fn global_mean_drift_core(
    model: &BridgeModel,
    x: &[f64],
    xi: &[f64],
    grad: Option<&[f64]>,
    data_aware: bool,
) -> Result<DVector<f64>> {
    let mut next = model.conditional_mean(x)?;
    if let Some(g) = grad {
        validate_grad(g, model.dim())?;
        for (n, gi) in next.iter_mut().zip(g) {
            *n += model.epsilon() * gi;
        }
    }
    if data_aware {
        let s = model.conditional_cov(x)?;
        let root = psd_sqrt(&s);
        let noise = root * DVector::from_column_slice(xi);
        next += noise;
    } else {
        let scale = (2.0 * model.epsilon()).sqrt();
        for (n, z) in next.iter_mut().zip(xi) {
            *n += scale * z;
        }
    }
    Ok(next)
}

fn global_split_core(
    model: &BridgeModel,
    x: &[f64],
    xi: &[f64],
    isotropic: bool,
) -> Result<DVector<f64>> {
    let half = if isotropic {
        let scale = (2.0 * model.epsilon()).sqrt();
        DVector::from_fn(x.len(), |i, _| x[i] + scale * xi[i])
    } else {
        let s = model.conditional_cov(x)?;
        let root = psd_sqrt(&s);
        root * DVector::from_column_slice(xi) + DVector::from_column_slice(x)
    };
    model.conditional_mean(half.as_slice())
}

fn localized_mean_drift_core(
    model: &LocalizedBridgeModel,
    x: &[f64],
    xi: &[f64],
    grad: Option<&[f64]>,
    data_aware: bool,
    clamp: Option<&Clamp>,
    ws: &mut Workspace,
) -> Result<DVector<f64>> {
    if let Some(g) = grad {
        validate_grad(g, model.dim())?;
    }
    let mut base = DVector::from_column_slice(x);
    if let Some(c) = clamp {
        c.apply(base.as_mut_slice());
    }
    let mut out = base.clone();
    let eps = model.epsilon();
    let isotropic_scale = (2.0 * eps).sqrt();
    for local in model.locals() {
        let set = &local.set;
        set.restrict_into(base.as_slice(), &mut ws.restricted);
        local.probability_weights_into(&ws.restricted, &mut ws.weights);
        let mean = local.mean_from_weights(&ws.weights);
        let noise = if data_aware {
            let s = local.cov_from_weights(&ws.weights);
            ws.xi_restricted.clear();
            ws.xi_restricted.extend(set.members().iter().map(|&i| xi[i]));
            sqrt_row_noise(&s, set.target_position(), &ws.xi_restricted)?
        } else {
            isotropic_scale * xi[set.alpha()]
        };
        let drift = grad.map_or(0.0, |g| eps * g[set.alpha()]);
        out[set.alpha()] = mean + drift + noise;
    }
    if let Some(c) = clamp {
        c.apply(out.as_mut_slice());
    }
    Ok(out)
}

fn localized_split_core(
    model: &LocalizedBridgeModel,
    x: &[f64],
    xi: &[f64],
    clamp: Option<&Clamp>,
    ws: &mut Workspace,
) -> Result<DVector<f64>> {
    let eps = model.epsilon();
    let scale = (2.0 * eps).sqrt();
    // Noising of the full state; restriction per coordinate commutes with
    // the shared noise draw.
    let mut half = DVector::from_fn(x.len(), |i, _| x[i] + scale * xi[i]);
    if let Some(c) = clamp {
        c.apply(half.as_mut_slice());
    }
    let mut out = DVector::from_column_slice(x);
    for local in model.locals() {
        local.set.restrict_into(half.as_slice(), &mut ws.restricted);
        local.probability_weights_into(&ws.restricted, &mut ws.weights);
        out[local.set.alpha()] = local.mean_from_weights(&ws.weights);
    }
    if let Some(c) = clamp {
        c.apply(out.as_mut_slice());
    }
    Ok(out)
}

fn kde_split_core(model: &KdeModel, x: &[f64], xi: &[f64]) -> Result<DVector<f64>> {
    let scale = (2.0 * model.epsilon()).sqrt();
    let half = DVector::from_fn(x.len(), |i, _| x[i] + scale * xi[i]);
    model.denoiser(half.as_slice())
}

fn localized_kde_core(
    model: &LocalizedKde,
    x: &[f64],
    xi: &[f64],
    clamp: Option<&Clamp>,
    ws: &mut Workspace,
) -> Result<DVector<f64>> {
    let eps = model.epsilon();
    let scale = (2.0 * eps).sqrt();
    let mut half = DVector::from_fn(x.len(), |i, _| x[i] + scale * xi[i]);
    if let Some(c) = clamp {
        c.apply(half.as_mut_slice());
    }
    let mut out = DVector::from_column_slice(x);
    for local in model.locals() {
        local.set.restrict_into(half.as_slice(), &mut ws.restricted);
        local.weights_into(&ws.restricted, &mut ws.weights);
        out[local.set.alpha()] = local.mean_from_weights(&ws.weights);
    }
    if let Some(c) = clamp {
        c.apply(out.as_mut_slice());
    }
    Ok(out)
}

fn dispatch_step(
    model: &SamplerModel,
    scheme: Scheme,
    state: &mut ChainState,
    clamp: Option<&Clamp>,
    grad: Option<&LikelihoodGrad>,
    ws: &mut Workspace,
) -> Result<()> {
    if !model.supports(scheme) {
        return Err(Error::Parameter(format!(
            "scheme '{}' is incompatible with the supplied model",
            scheme.name()
        )));
    }
    if clamp.is_some() && !scheme.is_localized() {
        return Err(Error::Parameter(
            "conditional clamping requires a localized scheme".into(),
        ));
    }
    let grad_vec = match (grad, scheme) {
        (Some(g), Scheme::Em | Scheme::DataAware | Scheme::LocalizedEm | Scheme::LocalizedDataAware) => {
            Some(g(state.x.as_slice()))
        }
        (Some(_), _) => {
            return Err(Error::Parameter(format!(
                "Bayesian drift is not defined for scheme '{}'",
                scheme.name()
            )))
        }
        (None, _) => None,
    };
    let mut xi = std::mem::take(&mut ws.noise);
    state.draw_noise(&mut xi);
    let x = state.x.as_slice();
    let next = match (model, scheme) {
        (SamplerModel::Bridge(m), Scheme::Em) => {
            global_mean_drift_core(m, x, &xi, grad_vec.as_deref(), false)
        }
        (SamplerModel::Bridge(m), Scheme::DataAware) => {
            global_mean_drift_core(m, x, &xi, grad_vec.as_deref(), true)
        }
        (SamplerModel::Bridge(m), Scheme::SplitStep) => global_split_core(m, x, &xi, false),
        (SamplerModel::Localized(m), Scheme::LocalizedEm) => {
            localized_mean_drift_core(m, x, &xi, grad_vec.as_deref(), false, clamp, ws)
        }
        (SamplerModel::Localized(m), Scheme::LocalizedDataAware) => {
            localized_mean_drift_core(m, x, &xi, grad_vec.as_deref(), true, clamp, ws)
        }
        (SamplerModel::Localized(m), Scheme::LocalizedSplitStep) => {
            localized_split_core(m, x, &xi, clamp, ws)
        }
        (SamplerModel::Kde(m), Scheme::KdeSplitStep) => kde_split_core(m, x, &xi),
        (SamplerModel::LocalizedKde(m), Scheme::LocalizedKde) => {
            localized_kde_core(m, x, &xi, clamp, ws)
        }
        _ => unreachable!("compatibility checked above"),
    };
    ws.noise = xi;
    state.commit(next?)
}

/// EM-type update `X(n+1) = m(X(n);ε) + sqrt(2ε)·Ξ(n)`.
pub fn em_step(model: &BridgeModel, state: &mut ChainState) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = global_mean_drift_core(model, state.x.as_slice(), &xi, None, false)?;
    state.commit(next)
}

/// Split-step update with data-aware noising:
/// `X(n+1/2) = X(n) + sqrt(S(X(n);ε))·Ξ(n)`, `X(n+1) = m(X(n+1/2);ε)`.
pub fn split_step(model: &BridgeModel, state: &mut ChainState) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = global_split_core(model, state.x.as_slice(), &xi, false)?;
    state.commit(next)
}

/// Split-step with isotropic noising `sqrt(2ε)·Ξ(n)`; the global
/// counterpart of the localized split-step.
pub fn split_step_isotropic(model: &BridgeModel, state: &mut ChainState) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = global_split_core(model, state.x.as_slice(), &xi, true)?;
    state.commit(next)
}

/// Data-aware update `X(n+1) = m(X(n);ε) + sqrt(S(X(n);ε))·Ξ(n)`.
pub fn data_aware_step(model: &BridgeModel, state: &mut ChainState) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = global_mean_drift_core(model, state.x.as_slice(), &xi, None, true)?;
    state.commit(next)
}

/// Bayesian update
/// `X(n+1) = m(X(n);ε) + ε·∇log π(y|X(n)) + sqrt(S(X(n);ε))·Ξ(n)`.
pub fn bayes_step(
    model: &BridgeModel,
    state: &mut ChainState,
    likelihood_grad: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let grad = likelihood_grad(state.x.as_slice());
    let next = global_mean_drift_core(model, state.x.as_slice(), &xi, Some(&grad), true)?;
    state.commit(next)
}

/// Localized EM-type update `X_α(n+1) = m_α(X_[α](n);ε) + sqrt(2ε)·Ξ_α(n)`
/// with one shared noise draw.
pub fn localized_em_step(model: &LocalizedBridgeModel, state: &mut ChainState) -> Result<()> {
    let mut ws = Workspace::new();
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next =
        localized_mean_drift_core(model, state.x.as_slice(), &xi, None, false, None, &mut ws)?;
    state.commit(next)
}

/// Localized split-step: per-coordinate noising with the shared draw, then
/// per-coordinate projection onto the local conditional mean.
pub fn localized_split_step(model: &LocalizedBridgeModel, state: &mut ChainState) -> Result<()> {
    let mut ws = Workspace::new();
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = localized_split_core(model, state.x.as_slice(), &xi, None, &mut ws)?;
    state.commit(next)
}

/// Localized data-aware update `X_α(n+1) = m_α(X_[α](n);ε) + ξ_α(n)` where
/// `ξ_α` is the target entry of `sqrt(S_α)·Ξ_[α]`.
pub fn localized_data_aware_step(
    model: &LocalizedBridgeModel,
    state: &mut ChainState,
) -> Result<()> {
    let mut ws = Workspace::new();
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next =
        localized_mean_drift_core(model, state.x.as_slice(), &xi, None, true, None, &mut ws)?;
    state.commit(next)
}

/// Localized Bayesian update: adds `ε·(∇log π(y|x))_α` to each local mean,
/// with data-aware noise.
pub fn localized_bayes_step(
    model: &LocalizedBridgeModel,
    state: &mut ChainState,
    likelihood_grad: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<()> {
    let mut ws = Workspace::new();
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let grad = likelihood_grad(state.x.as_slice());
    let next = localized_mean_drift_core(
        model,
        state.x.as_slice(),
        &xi,
        Some(&grad),
        true,
        None,
        &mut ws,
    )?;
    state.commit(next)
}

/// KDE split-step: isotropic noising followed by the Tweedie denoiser.
pub fn kde_split_step(model: &KdeModel, state: &mut ChainState) -> Result<()> {
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = kde_split_core(model, state.x.as_slice(), &xi)?;
    state.commit(next)
}

/// Localized KDE split-step.
pub fn localized_kde_step(model: &LocalizedKde, state: &mut ChainState) -> Result<()> {
    let mut ws = Workspace::new();
    let mut xi = Vec::new();
    state.draw_noise(&mut xi);
    let next = localized_kde_core(model, state.x.as_slice(), &xi, None, &mut ws)?;
    state.commit(next)
}

/// One step of any localized scheme with clamped coordinates: the clamp is
/// applied right after the noising assignment and again to the output.
pub fn conditional_step(
    model: &SamplerModel,
    scheme: Scheme,
    state: &mut ChainState,
    clamp: &Clamp,
) -> Result<()> {
    let mut ws = Workspace::new();
    dispatch_step(model, scheme, state, Some(clamp), None, &mut ws)
}

/// How `generate` arranges its chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChainMode {
    /// One independent chain per output sample, restarted from a random
    /// training column and run for `n_decorrelation` steps.
    #[default]
    Restart,
    /// A single chain emitting every `n_decorrelation`-th state.
    LongChain,
}

/// Configuration for [`generate`].
#[derive(Clone, Default)]
pub struct SamplerConfig {
    pub scheme: Option<Scheme>,
    pub n_decorrelation: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub mode: ChainMode,
    pub clamp: Option<Clamp>,
    pub likelihood_grad: Option<LikelihoodGrad>,
}

impl std::fmt::Debug for SamplerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SamplerConfig")
            .field("scheme", &self.scheme.map(Scheme::name))
            .field("n_decorrelation", &self.n_decorrelation)
            .field("n_samples", &self.n_samples)
            .field("seed", &self.seed)
            .field("mode", &self.mode)
            .field("clamp", &self.clamp)
            .field(
                "likelihood_grad",
                &self.likelihood_grad.as_ref().map(|_| "<fn>"),
            )
            .finish()
    }
}

impl SamplerConfig {
    pub fn new(scheme: Scheme, n_decorrelation: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            scheme: Some(scheme),
            n_decorrelation,
            n_samples,
            seed,
            mode: ChainMode::Restart,
            clamp: None,
            likelihood_grad: None,
        }
    }

    pub fn with_mode(mut self, mode: ChainMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_clamp(mut self, clamp: Clamp) -> Self {
        self.clamp = Some(clamp);
        self
    }

    fn scheme(&self) -> Result<Scheme> {
        self.scheme
            .ok_or_else(|| Error::Parameter("no sampling scheme configured".into()))
    }
}

fn run_chain(
    model: &SamplerModel,
    scheme: Scheme,
    config: &SamplerConfig,
    stream: u64,
    steps: usize,
) -> Result<DVector<f64>> {
    let data = model.training_data();
    let mut state = ChainState::new(DVector::zeros(model.dim()), config.seed, stream);
    let start = state.rng.gen_range(0..data.len());
    state.x.copy_from(&data.column(start));
    if let Some(c) = &config.clamp {
        c.apply(state.x.as_mut_slice());
    }
    let mut ws = Workspace::new();
    for _ in 0..steps {
        dispatch_step(
            model,
            scheme,
            &mut state,
            config.clamp.as_ref(),
            config.likelihood_grad.as_ref(),
            &mut ws,
        )?;
    }
    Ok(state.x)
}

/// Generates `n_samples` new samples.
///
/// Restart mode starts every output at a uniformly chosen training column
/// and runs `n_decorrelation` steps (chain `j` draws from stream `j` of the
/// seed). Long-chain mode runs one chain and emits every
/// `n_decorrelation`-th state. The returned matrix has one sample per
/// column and may be empty when `n_samples == 0`.
pub fn generate(model: &SamplerModel, config: &SamplerConfig) -> Result<DMatrix<f64>> {
    let scheme = config.scheme()?;
    if !model.supports(scheme) {
        return Err(Error::Parameter(format!(
            "scheme '{}' is incompatible with the supplied model",
            scheme.name()
        )));
    }
    if let Some(c) = &config.clamp {
        if !scheme.is_localized() {
            return Err(Error::Parameter(
                "conditional clamping requires a localized scheme".into(),
            ));
        }
        if let Some(max) = c.max_index() {
            if max >= model.dim() {
                return Err(Error::Parameter(format!(
                    "clamp index {max} out of range for dimension {}",
                    model.dim()
                )));
            }
        }
    }
    let d = model.dim();
    let n = config.n_samples;
    if n == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    match config.mode {
        ChainMode::Restart => {
            let columns: Result<Vec<DVector<f64>>> = (0..n as u64)
                .into_par_iter()
                .map(|j| run_chain(model, scheme, config, j, config.n_decorrelation))
                .collect();
            let columns = columns?;
            Ok(DMatrix::from_columns(&columns))
        }
        ChainMode::LongChain => {
            if config.n_decorrelation == 0 {
                return Err(Error::Parameter(
                    "long-chain mode needs a positive thinning interval".into(),
                ));
            }
            let data = model.training_data();
            let mut state = ChainState::new(DVector::zeros(d), config.seed, 0);
            let start = state.rng.gen_range(0..data.len());
            state.x.copy_from(&data.column(start));
            if let Some(c) = &config.clamp {
                c.apply(state.x.as_mut_slice());
            }
            let mut ws = Workspace::new();
            let mut out = DMatrix::zeros(d, n);
            for col in 0..n {
                for _ in 0..config.n_decorrelation {
                    dispatch_step(
                        model,
                        scheme,
                        &mut state,
                        config.clamp.as_ref(),
                        config.likelihood_grad.as_ref(),
                        &mut ws,
                    )?;
                }
                out.column_mut(col).copy_from(&state.x);
            }
            Ok(out)
        }
    }
}

/// Configuration for [`closure_simulate`].
#[derive(Debug, Clone)]
pub struct ClosureConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_decorrelation: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// With `false` the stochastic term is forced to zero and the pure
    /// truncated model is integrated.
    pub use_closure: bool,
}

impl ClosureConfig {
    pub fn new(dt: f64, n_steps: usize, n_decorrelation: usize, seed: u64) -> Self {
        Self {
            dt,
            n_steps,
            n_decorrelation,
            seed,
            scheme: Scheme::LocalizedSplitStep,
            use_closure: true,
        }
    }
}

/// Integrates `z(m+1) = z(m) + (G(z(m)) + ψ(m|z(m)))·Δt` where `ψ(m|z(m))`
/// is sampled by running `n_decorrelation` clamped steps of a localized
/// scheme on the stacked `(z, ψ)` model and reading the `ψ` block.
///
/// The chain for step `m` starts from a random training column under
/// stream `m` of the seed, so runs are reproducible. Returns the
/// `k × (n_steps+1)` trajectory.
pub fn closure_simulate(
    model: &SamplerModel,
    drift: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    z0: &[f64],
    config: &ClosureConfig,
) -> Result<DMatrix<f64>> {
    if !config.dt.is_finite() || config.dt <= 0.0 {
        return Err(Error::Parameter(format!(
            "time step must be positive, got {}",
            config.dt
        )));
    }
    if !config.scheme.is_localized() {
        return Err(Error::Parameter(
            "closure sampling requires a localized scheme".into(),
        ));
    }
    let k = z0.len();
    if model.dim() != 2 * k {
        return Err(Error::Parameter(format!(
            "stacked model dimension {} does not match 2x{} slow variables",
            model.dim(),
            k
        )));
    }
    let data = model.training_data();
    let mut traj = DMatrix::zeros(k, config.n_steps + 1);
    let mut z: Vec<f64> = z0.to_vec();
    traj.column_mut(0).copy_from_slice(&z);
    let mut ws = Workspace::new();
    for m in 0..config.n_steps {
        let psi: Vec<f64> = if config.use_closure {
            let clamp = Clamp::new((0..k).collect(), z.clone())?;
            let mut state = ChainState::new(DVector::zeros(2 * k), config.seed, m as u64);
            let start = state.rng.gen_range(0..data.len());
            state.x.copy_from(&data.column(start));
            clamp.apply(state.x.as_mut_slice());
            for _ in 0..config.n_decorrelation {
                dispatch_step(model, config.scheme, &mut state, Some(&clamp), None, &mut ws)
                    .map_err(|e| match e {
                        Error::BlowUp { .. } => Error::BlowUp { step: m },
                        other => other,
                    })?;
            }
            state.x.as_slice()[k..].to_vec()
        } else {
            vec![0.0; k]
        };
        let g = drift(&z);
        if g.len() != k {
            return Err(Error::Data(format!(
                "drift returned dimension {}, expected {k}",
                g.len()
            )));
        }
        for i in 0..k {
            z[i] += (g[i] + psi[i]) * config.dt;
        }
        if z.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_GUARD) {
            return Err(Error::BlowUp { step: m });
        }
        traj.column_mut(m + 1).copy_from_slice(&z);
    }
    Ok(traj)
}
