//! Localization: per-coordinate Schrödinger bridges over dependency sets.
//!
//! Instead of one bridge in dimension `d`, each coordinate `α` gets a set
//! `Λ(α) ⊂ {0..d}` of coordinates its update is conditionally dependent on,
//! and a bridge is fitted to the restricted samples `x^(j)_[α]`:
//!
//! ```text
//! (T_α)_jk = exp(-‖x^(j)_[α] - x^(k)_[α]‖² / (4ε)),
//! P_α = D(v_α)·T_α·D(v_α)  row-stochastic,
//! w_α(x_[α]) = D(v_α) t_α(x_[α]) / (v_αᵀ t_α(x_[α])),
//! m_α(x_[α];ε) = 𝒳_α w_α(x_[α]).
//! ```
//!
//! Every `m_α` is a convex combination of the row `𝒳_α`, so the vector of
//! localized means always lands inside the per-coordinate min/max box of
//! the training data, for any bandwidth and any query.
//!
//! Coordinate indices are 0-based throughout the API; persisted files use
//! 1-based indices (see the `io` module).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bridge::{nearest_column, normalize_log_weights, sinkhorn_fit_inner, KERNEL_FLOOR};
use crate::data::{Metric, SampleMatrix};
use crate::error::{Error, Result};

/// The coordinates a single component update depends on.
///
/// `members` is ordered and must contain the updated coordinate `alpha`;
/// `target_position` is the position of `alpha` within `members`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencySet {
    alpha: usize,
    members: Vec<usize>,
    target_position: usize,
}

impl DependencySet {
    pub fn new(alpha: usize, members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Parameter("dependency set must be non-empty".into()));
        }
        let mut seen = members.to_vec();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter(format!(
                "dependency set for coordinate {alpha} has duplicate members"
            )));
        }
        let target_position = members
            .iter()
            .position(|&i| i == alpha)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "dependency set must contain its own coordinate {alpha}"
                ))
            })?;
        Ok(Self {
            alpha,
            members,
            target_position,
        })
    }

    /// The coordinate this set updates.
    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Position of `alpha` within `members`.
    pub fn target_position(&self) -> usize {
        self.target_position
    }

    /// `d_α`, the localization dimension.
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }

    /// Gathers the restriction `x_[α]` of a full state vector.
    pub fn restrict_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.members.iter().map(|&i| x[i]));
    }
}

/// Periodic stencil sets `Λ(α) = {α-radius, …, α+radius}` (mod `d`), the
/// nearest-neighbor localization for fields on a periodic grid.
pub fn periodic_stencil_sets(d: usize, radius: usize) -> Result<Vec<DependencySet>> {
    if d == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    if 2 * radius + 1 > d {
        return Err(Error::Parameter(format!(
            "stencil radius {radius} too large for dimension {d}"
        )));
    }
    (0..d)
        .map(|alpha| {
            let members = (0..=2 * radius)
                .map(|o| (alpha + d + o - radius) % d)
                .collect();
            DependencySet::new(alpha, members)
        })
        .collect()
}

/// Dependency sets for a Markovian temporal process sampled at `k+1` times
/// with `s` state components per time: the first time block depends on
/// itself, every later block on itself and its predecessor.
pub fn temporal_markov_sets(s: usize, k: usize) -> Result<Vec<DependencySet>> {
    if s < 1 {
        return Err(Error::Parameter("block size s must be at least 1".into()));
    }
    if k < 2 {
        return Err(Error::Parameter("interval count k must be at least 2".into()));
    }
    let d = (k + 1) * s;
    let mut sets = Vec::with_capacity(d);
    for alpha in 0..s {
        sets.push(DependencySet::new(alpha, (0..s).collect())?);
    }
    for l in 0..k {
        let members: Vec<usize> = (s * l..s * (l + 2)).collect();
        for alpha in s * (l + 1)..s * (l + 2) {
            sets.push(DependencySet::new(alpha, members.clone())?);
        }
    }
    Ok(sets)
}

/// Dependency sets for a stacked state `(z, ψ) ∈ R^{2k}`: the update of
/// each `ψ_α` depends on the three periodic `z`-neighbors and the three
/// periodic `ψ`-neighbors of position `α`. Returns `k` sets (one per
/// `ψ`-coordinate); the `z` block carries no sets and is meant to be
/// clamped during conditional sampling.
pub fn closure_pair_sets(k: usize) -> Result<Vec<DependencySet>> {
    if k < 3 {
        return Err(Error::Parameter(format!(
            "closure sets need at least 3 slow variables, got {k}"
        )));
    }
    (0..k)
        .map(|alpha| {
            let prev = (alpha + k - 1) % k;
            let next = (alpha + 1) % k;
            let members = vec![prev, alpha, next, k + prev, k + alpha, k + next];
            DependencySet::new(k + alpha, members)
        })
        .collect()
}

/// A single full-window set per coordinate; localization with these
/// reproduces the global bridge exactly.
pub fn full_window_sets(d: usize) -> Result<Vec<DependencySet>> {
    (0..d)
        .map(|alpha| DependencySet::new(alpha, (0..d).collect()))
        .collect()
}

/// Per-coordinate min/max box of the training data. Localized conditional
/// means always land inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ContainmentBox {
    pub fn from_data(data: &SampleMatrix) -> Self {
        let (lower, upper) = data.coordinate_bounds();
        Self { lower, upper }
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .enumerate()
                .all(|(i, &v)| self.lower[i] <= v && v <= self.upper[i])
    }
}

/// One fitted per-coordinate bridge: the restricted data, the target row,
/// and the Sinkhorn weights.
#[derive(Debug, Clone)]
pub(crate) struct LocalBridge {
    pub(crate) set: DependencySet,
    /// `𝒳_[α]`, `d_α × m`, columns contiguous.
    pub(crate) restricted: DMatrix<f64>,
    /// `𝒳_α`, the row of target-coordinate values.
    pub(crate) target_row: Vec<f64>,
    /// Range of the target row; convex combinations land here exactly, so
    /// the mean is clamped to it to undo the last ulp of rounding.
    pub(crate) target_range: (f64, f64),
    /// Metric scales restricted to the members.
    pub(crate) scales: Vec<f64>,
    /// Per-coordinate `1/(4·ε·scale)`, folded once for the hot loop.
    pub(crate) logit_factors: Vec<f64>,
    pub(crate) weights: DVector<f64>,
    pub(crate) log_weights: Vec<f64>,
}

impl LocalBridge {
    /// Writes the normalized probability vector `w_α(x_[α])` into `out`.
    pub(crate) fn probability_weights_into(&self, x_restricted: &[f64], out: &mut Vec<f64>) {
        let d_a = self.restricted.nrows();
        let m = self.restricted.ncols();
        let storage = self.restricted.as_slice();
        let factors = &self.logit_factors;
        out.clear();
        out.resize(m, 0.0);
        // The window dimensions of the built-in set families are tiny;
        // fixed-width loops let the compiler keep everything in registers.
        match d_a {
            1 => {
                let f0 = factors[0];
                let x0 = x_restricted[0];
                for (j, slot) in out.iter_mut().enumerate() {
                    let delta = x0 - storage[j];
                    *slot = self.log_weights[j] - delta * delta * f0;
                }
            }
            2 => {
                let (f0, f1) = (factors[0], factors[1]);
                let (x0, x1) = (x_restricted[0], x_restricted[1]);
                for (j, slot) in out.iter_mut().enumerate() {
                    let d0 = x0 - storage[2 * j];
                    let d1 = x1 - storage[2 * j + 1];
                    *slot = self.log_weights[j] - (d0 * d0 * f0 + d1 * d1 * f1);
                }
            }
            _ => {
                for (j, slot) in out.iter_mut().enumerate() {
                    let col = &storage[j * d_a..(j + 1) * d_a];
                    let mut q = 0.0;
                    for i in 0..d_a {
                        let delta = x_restricted[i] - col[i];
                        q += delta * delta * factors[i];
                    }
                    *slot = self.log_weights[j] - q;
                }
            }
        }
        normalize_log_weights(out, || {
            nearest_column(&self.restricted, &self.scales, x_restricted)
        });
    }

    /// `𝒳_α w`, clamped into the range of the target row.
    pub(crate) fn mean_from_weights(&self, w: &[f64]) -> f64 {
        let mean: f64 = self.target_row.iter().zip(w).map(|(a, b)| a * b).sum();
        mean.clamp(self.target_range.0, self.target_range.1)
    }

    /// Weighted covariance of the restricted data under `w`:
    /// `S_α = 𝒳_[α] D(w) 𝒳_[α]ᵀ - (𝒳_[α] w)(𝒳_[α] w)ᵀ`.
    pub(crate) fn cov_from_weights(&self, w: &[f64]) -> DMatrix<f64> {
        let d_a = self.restricted.nrows();
        let storage = self.restricted.as_slice();
        let mut mean = vec![0.0; d_a];
        for (j, &wj) in w.iter().enumerate() {
            let col = &storage[j * d_a..(j + 1) * d_a];
            for i in 0..d_a {
                mean[i] += wj * col[i];
            }
        }
        let mut s = DMatrix::zeros(d_a, d_a);
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            let col = &storage[j * d_a..(j + 1) * d_a];
            for b in 0..d_a {
                let wb = wj * col[b];
                for a in 0..d_a {
                    s[(a, b)] += col[a] * wb;
                }
            }
        }
        for b in 0..d_a {
            for a in 0..d_a {
                s[(a, b)] -= mean[a] * mean[b];
            }
        }
        s
    }
}

/// `d` (or fewer) per-coordinate bridges sharing one data set, bandwidth,
/// and metric.
#[derive(Debug, Clone)]
pub struct LocalizedBridgeModel {
    data: SampleMatrix,
    epsilon: f64,
    metric: Metric,
    locals: Vec<LocalBridge>,
    alpha_to_local: Vec<Option<usize>>,
    containment: ContainmentBox,
}

impl LocalizedBridgeModel {
    /// Fits one Sinkhorn scaling per dependency set. Fits are independent
    /// and run in parallel; results do not depend on scheduling.
    pub fn fit(
        data: SampleMatrix,
        sets: Vec<DependencySet>,
        epsilon: f64,
        metric: Metric,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "bandwidth epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if metric.dim() != data.dim() {
            return Err(Error::Parameter(
                "metric dimension does not match data dimension".into(),
            ));
        }
        Self::validate_sets(&sets, data.dim())?;
        let locals: Result<Vec<LocalBridge>> = sets
            .into_par_iter()
            .map(|set| fit_local(&data, &metric, epsilon, tol, max_iter, set))
            .collect();
        Self::assemble(data, epsilon, metric, locals?)
    }

    /// Assembles a model from persisted per-coordinate weights (no refit).
    pub fn from_parts(
        data: SampleMatrix,
        sets: Vec<DependencySet>,
        epsilon: f64,
        metric: Metric,
        weights: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "bandwidth epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if metric.dim() != data.dim() {
            return Err(Error::Parameter(
                "metric dimension does not match data dimension".into(),
            ));
        }
        Self::validate_sets(&sets, data.dim())?;
        if sets.len() != weights.len() {
            return Err(Error::Data(format!(
                "{} weight vectors for {} dependency sets",
                weights.len(),
                sets.len()
            )));
        }
        let locals: Result<Vec<LocalBridge>> = sets
            .into_iter()
            .zip(weights)
            .map(|(set, v)| {
                if v.len() != data.len() {
                    return Err(Error::Data(format!(
                        "weight vector for coordinate {} has length {}, expected {}",
                        set.alpha(),
                        v.len(),
                        data.len()
                    )));
                }
                if v.iter().any(|&w| !w.is_finite() || w <= 0.0) {
                    return Err(Error::Data(format!(
                        "weights for coordinate {} must be strictly positive",
                        set.alpha()
                    )));
                }
                Ok(build_local(&data, &metric, epsilon, set, v))
            })
            .collect();
        Self::assemble(data, epsilon, metric, locals?)
    }

    fn validate_sets(sets: &[DependencySet], d: usize) -> Result<()> {
        if sets.is_empty() {
            return Err(Error::Parameter("at least one dependency set is required".into()));
        }
        let mut seen = vec![false; d];
        for set in sets {
            if set.alpha() >= d {
                return Err(Error::Parameter(format!(
                    "dependency set coordinate {} out of range for dimension {d}",
                    set.alpha()
                )));
            }
            if set.members().iter().any(|&i| i >= d) {
                return Err(Error::Parameter(format!(
                    "dependency set for coordinate {} has members outside 0..{d}",
                    set.alpha()
                )));
            }
            if seen[set.alpha()] {
                return Err(Error::Parameter(format!(
                    "duplicate dependency set for coordinate {}",
                    set.alpha()
                )));
            }
            seen[set.alpha()] = true;
        }
        Ok(())
    }

    fn assemble(
        data: SampleMatrix,
        epsilon: f64,
        metric: Metric,
        locals: Vec<LocalBridge>,
    ) -> Result<Self> {
        let mut alpha_to_local = vec![None; data.dim()];
        for (i, local) in locals.iter().enumerate() {
            alpha_to_local[local.set.alpha()] = Some(i);
        }
        let containment = ContainmentBox::from_data(&data);
        Ok(Self {
            data,
            epsilon,
            metric,
            locals,
            alpha_to_local,
            containment,
        })
    }

    pub fn data(&self) -> &SampleMatrix {
        &self.data
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn containment_box(&self) -> &ContainmentBox {
        &self.containment
    }

    /// The dependency sets, in fit order.
    pub fn sets(&self) -> impl Iterator<Item = &DependencySet> {
        self.locals.iter().map(|l| &l.set)
    }

    /// Sinkhorn weights `v_α` for the set updating coordinate `alpha`.
    pub fn local_weights(&self, alpha: usize) -> Result<&DVector<f64>> {
        Ok(&self.local(alpha)?.weights)
    }

    pub(crate) fn locals(&self) -> &[LocalBridge] {
        &self.locals
    }

    fn local(&self, alpha: usize) -> Result<&LocalBridge> {
        self.alpha_to_local
            .get(alpha)
            .copied()
            .flatten()
            .map(|i| &self.locals[i])
            .ok_or_else(|| {
                Error::Parameter(format!("no dependency set updates coordinate {alpha}"))
            })
    }

    fn validate_restricted(&self, local: &LocalBridge, x_restricted: &[f64]) -> Result<()> {
        if x_restricted.len() != local.set.cardinality() {
            return Err(Error::Data(format!(
                "restricted query has length {}, expected {} for coordinate {}",
                x_restricted.len(),
                local.set.cardinality(),
                local.set.alpha()
            )));
        }
        if x_restricted.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("restricted query contains non-finite entries".into()));
        }
        Ok(())
    }

    /// `w_α(x_[α])`, the local probability vector on the simplex.
    pub fn local_probability_vector(
        &self,
        alpha: usize,
        x_restricted: &[f64],
    ) -> Result<DVector<f64>> {
        let local = self.local(alpha)?;
        self.validate_restricted(local, x_restricted)?;
        let mut w = Vec::new();
        local.probability_weights_into(x_restricted, &mut w);
        Ok(DVector::from_vec(w))
    }

    /// `m_α(x_[α];ε) = 𝒳_α w_α(x_[α])`, inside the range of the target row.
    pub fn local_conditional_mean(&self, alpha: usize, x_restricted: &[f64]) -> Result<f64> {
        let local = self.local(alpha)?;
        self.validate_restricted(local, x_restricted)?;
        let mut w = Vec::new();
        local.probability_weights_into(x_restricted, &mut w);
        Ok(local.mean_from_weights(&w))
    }

    /// The vector of localized expectation values: coordinate `α` becomes
    /// `m_α(x_[α];ε)`; coordinates without a dependency set keep their
    /// value from `x`. Covered coordinates always land inside the
    /// containment box.
    pub fn localized_mean_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Data(format!(
                "query has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("query contains non-finite entries".into()));
        }
        let mut out = DVector::from_column_slice(x);
        let mut restricted = Vec::new();
        let mut w = Vec::new();
        for local in &self.locals {
            local.set.restrict_into(x, &mut restricted);
            local.probability_weights_into(&restricted, &mut w);
            out[local.set.alpha()] = local.mean_from_weights(&w);
        }
        Ok(out)
    }

    /// Localized data-aware covariance
    /// `S_α = 𝒳_[α] D(w_α) 𝒳_[α]ᵀ - (𝒳_[α] w_α)(𝒳_[α] w_α)ᵀ`.
    pub fn local_conditional_cov(
        &self,
        alpha: usize,
        x_restricted: &[f64],
    ) -> Result<DMatrix<f64>> {
        let local = self.local(alpha)?;
        self.validate_restricted(local, x_restricted)?;
        let mut w = Vec::new();
        local.probability_weights_into(x_restricted, &mut w);
        Ok(local.cov_from_weights(&w))
    }

    /// The scalar noise component `ξ_α`: entry `target_position` of
    /// `sqrt(S_α(x_[α];ε))·ξ_[α]`, with the symmetric PSD square root.
    pub fn local_noise_component(
        &self,
        alpha: usize,
        x_restricted: &[f64],
        xi_restricted: &[f64],
    ) -> Result<f64> {
        let local = self.local(alpha)?;
        self.validate_restricted(local, x_restricted)?;
        if xi_restricted.len() != local.set.cardinality() {
            return Err(Error::Data(format!(
                "noise restriction has length {}, expected {}",
                xi_restricted.len(),
                local.set.cardinality()
            )));
        }
        let s = self.local_conditional_cov(alpha, x_restricted)?;
        sqrt_row_noise(&s, local.set.target_position(), xi_restricted)
    }
}

/// Entry `target` of `sqrt(S)·ξ` for a symmetric PSD matrix `S`, using the
/// eigendecomposition square root with eigenvalues clamped at zero.
pub fn sqrt_row_noise(s: &DMatrix<f64>, target: usize, xi: &[f64]) -> Result<f64> {
    if s.nrows() != s.ncols() || target >= s.nrows() || xi.len() != s.nrows() {
        return Err(Error::Data(format!(
            "inconsistent noise inputs: cov {}x{}, target {target}, noise length {}",
            s.nrows(),
            s.ncols(),
            xi.len()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("covariance has non-finite entries".into()));
    }
    let eig = s.clone().symmetric_eigen();
    // ξ_t = Σ_k sqrt(λ_k) Q_{t,k} (Q_{·,k}ᵀ ξ)
    let mut out = 0.0;
    for k in 0..s.nrows() {
        let lambda = eig.eigenvalues[k].max(0.0);
        if lambda == 0.0 {
            continue;
        }
        let q = eig.eigenvectors.column(k);
        let proj: f64 = q.iter().zip(xi).map(|(a, b)| a * b).sum();
        out += lambda.sqrt() * q[target] * proj;
    }
    Ok(out)
}

fn kernel_matrix_restricted(
    restricted: &DMatrix<f64>,
    inv_scales: &[f64],
    epsilon: f64,
) -> DMatrix<f64> {
    let d_a = restricted.nrows();
    let m = restricted.ncols();
    let storage = restricted.as_slice();
    let inv4eps = 1.0 / (4.0 * epsilon);
    let mut t = DMatrix::from_element(m, m, 1.0);
    for k in 0..m {
        let xk = &storage[k * d_a..(k + 1) * d_a];
        for j in 0..k {
            let xj = &storage[j * d_a..(j + 1) * d_a];
            let mut q = 0.0;
            for i in 0..d_a {
                let delta = xj[i] - xk[i];
                q += delta * delta * inv_scales[i];
            }
            let val = (-q * inv4eps).exp().max(KERNEL_FLOOR);
            t[(j, k)] = val;
            t[(k, j)] = val;
        }
    }
    t
}

fn build_local(
    data: &SampleMatrix,
    metric: &Metric,
    epsilon: f64,
    set: DependencySet,
    weights: DVector<f64>,
) -> LocalBridge {
    let restricted = data.restrict_rows(set.members());
    let target_row = data.row_vec(set.alpha());
    let target_range = row_range(&target_row);
    let scales = metric.restrict(set.members());
    let inv4eps = 1.0 / (4.0 * epsilon);
    let logit_factors = metric
        .restrict_inverse(set.members())
        .into_iter()
        .map(|inv| inv * inv4eps)
        .collect();
    let log_weights = weights.iter().map(|v| v.ln()).collect();
    LocalBridge {
        set,
        restricted,
        target_row,
        target_range,
        scales,
        logit_factors,
        weights,
        log_weights,
    }
}

fn row_range(row: &[f64]) -> (f64, f64) {
    row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn fit_local(
    data: &SampleMatrix,
    metric: &Metric,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    set: DependencySet,
) -> Result<LocalBridge> {
    let restricted = data.restrict_rows(set.members());
    let inv_scales = metric.restrict_inverse(set.members());
    let t = kernel_matrix_restricted(&restricted, &inv_scales, epsilon);
    let weights = sinkhorn_fit_inner(&t, tol, max_iter, Some(set.alpha()))?;
    Ok(build_local(data, metric, epsilon, set, weights))
}
