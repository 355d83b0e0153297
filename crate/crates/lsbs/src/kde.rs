//! Kernel-density denoising: the Sinkhorn-free baseline.
//!
//! The equally weighted Gaussian KDE `π̃_ε(x) ∝ Σ_j exp(-‖x-x^(j)‖²/(2ε))`
//! induces, through Tweedie's formula, the score
//! `s(x;ε) = -(x - D(x;ε))/ε` with denoiser `D(x;ε) = 𝒳 w̃(x)` and weights
//! `w̃^(j)(x) ∝ exp(-‖x-x^(j)‖²/(2ε))`.
//!
//! Note the `2ε` scale here versus `4ε` in the bridge kernel; both are kept
//! exactly as stated. The denoiser localizes the same way the bridge does:
//! restrict to a dependency set, reweight, and project the target row.

use nalgebra::{DMatrix, DVector};

use crate::bridge::{nearest_column, normalize_log_weights};
use crate::data::{Metric, SampleMatrix};
use crate::error::{Error, Result};
use crate::localize::DependencySet;

/// Training data with bandwidth for KDE-based denoising (bandwidth γ = ε).
#[derive(Debug, Clone)]
pub struct KdeModel {
    data: SampleMatrix,
    epsilon: f64,
    metric: Metric,
    bounds: (nalgebra::DVector<f64>, nalgebra::DVector<f64>),
}

impl KdeModel {
    pub fn new(data: SampleMatrix, epsilon: f64, metric: Metric) -> Result<Self> {
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
        let bounds = data.coordinate_bounds();
        Ok(Self {
            data,
            epsilon,
            metric,
            bounds,
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

    fn validate_query(&self, x: &[f64]) -> Result<()> {
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
        Ok(())
    }

    /// Normalized KDE weights `w̃^(j)(x) ∝ exp(-‖x-x^(j)‖²_metric/(2ε))`.
    pub fn weights(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.validate_query(x)?;
        let inv2eps = 1.0 / (2.0 * self.epsilon);
        let m = self.len();
        let mut logits = vec![0.0; m];
        for (j, logit) in logits.iter_mut().enumerate() {
            let q = self.metric.squared_distance(x, self.data.column_slice(j));
            *logit = -q * inv2eps;
        }
        normalize_log_weights(&mut logits, || {
            nearest_column(self.data.matrix(), self.metric.scales(), x)
        });
        Ok(DVector::from_vec(logits))
    }

    /// The denoiser `D(x;ε) = 𝒳 w̃(x)`; a convex combination of the data,
    /// clamped into the per-coordinate data range.
    pub fn denoiser(&self, x: &[f64]) -> Result<DVector<f64>> {
        let w = self.weights(x)?;
        let mut d = self.data.matrix() * w;
        for i in 0..d.len() {
            d[i] = d[i].clamp(self.bounds.0[i], self.bounds.1[i]);
        }
        Ok(d)
    }

    /// Tweedie score `s(x;ε) = -(x - D(x;ε))/ε`.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut d = self.denoiser(x)?;
        for (di, xi) in d.iter_mut().zip(x) {
            *di = -(xi - *di) / self.epsilon;
        }
        Ok(d)
    }
}

/// One localized denoiser per dependency set, with the restrictions
/// precomputed so the sampler loop avoids gathering rows on every step.
#[derive(Debug, Clone)]
pub struct LocalizedKde {
    model: KdeModel,
    locals: Vec<KdeLocal>,
}

#[derive(Debug, Clone)]
pub(crate) struct KdeLocal {
    pub(crate) set: DependencySet,
    pub(crate) restricted: DMatrix<f64>,
    pub(crate) target_row: Vec<f64>,
    pub(crate) target_range: (f64, f64),
    pub(crate) scales: Vec<f64>,
    /// Per-coordinate `1/(2·ε·scale)`, folded once for the hot loop.
    pub(crate) logit_factors: Vec<f64>,
}

impl KdeLocal {
    /// `𝒳_α w̃`, clamped into the range of the target row.
    pub(crate) fn mean_from_weights(&self, w: &[f64]) -> f64 {
        let mean: f64 = self.target_row.iter().zip(w).map(|(a, b)| a * b).sum();
        mean.clamp(self.target_range.0, self.target_range.1)
    }

    pub(crate) fn weights_into(&self, x_restricted: &[f64], out: &mut Vec<f64>) {
        let d_a = self.restricted.nrows();
        let storage = self.restricted.as_slice();
        let factors = &self.logit_factors;
        out.clear();
        out.reserve(self.restricted.ncols());
        for j in 0..self.restricted.ncols() {
            let col = &storage[j * d_a..(j + 1) * d_a];
            let mut q = 0.0;
            for i in 0..d_a {
                let delta = x_restricted[i] - col[i];
                q += delta * delta * factors[i];
            }
            out.push(-q);
        }
        normalize_log_weights(out, || {
            nearest_column(&self.restricted, &self.scales, x_restricted)
        });
    }
}

impl LocalizedKde {
    pub fn new(model: KdeModel, sets: Vec<DependencySet>) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Parameter("at least one dependency set is required".into()));
        }
        let d = model.dim();
        let mut seen = vec![false; d];
        for set in &sets {
            if set.alpha() >= d || set.members().iter().any(|&i| i >= d) {
                return Err(Error::Parameter(format!(
                    "dependency set for coordinate {} out of range for dimension {d}",
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
        let locals = sets
            .into_iter()
            .map(|set| {
                let target_row = model.data().row_vec(set.alpha());
                let target_range = target_row
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                let inv2eps = 1.0 / (2.0 * model.epsilon());
                let logit_factors: Vec<f64> = set
                    .members()
                    .iter()
                    .map(|&i| inv2eps / model.metric().scales()[i])
                    .collect();
                KdeLocal {
                    restricted: model.data().restrict_rows(set.members()),
                    target_row,
                    target_range,
                    scales: model.metric().restrict(set.members()),
                    logit_factors,
                    set,
                }
            })
            .collect();
        Ok(Self { model, locals })
    }

    pub fn model(&self) -> &KdeModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn epsilon(&self) -> f64 {
        self.model.epsilon()
    }

    pub fn sets(&self) -> impl Iterator<Item = &DependencySet> {
        self.locals.iter().map(|l| &l.set)
    }

    pub(crate) fn locals(&self) -> &[KdeLocal] {
        &self.locals
    }

    /// Localized KDE update: coordinate `α` becomes
    /// `𝒳_α w̃_α(x_[α])`; coordinates without a set keep their value.
    pub fn update(&self, x: &[f64]) -> Result<DVector<f64>> {
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
            local.weights_into(&restricted, &mut w);
            out[local.set.alpha()] = local.mean_from_weights(&w);
        }
        Ok(out)
    }
}

/// Convenience wrapper building the restrictions on the fly; prefer
/// [`LocalizedKde`] inside sampling loops.
pub fn localized_kde_update(
    model: &KdeModel,
    sets: &[DependencySet],
    x: &[f64],
) -> Result<DVector<f64>> {
    LocalizedKde::new(model.clone(), sets.to_vec())?.update(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::{full_window_sets, periodic_stencil_sets, ContainmentBox};
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_samples(d: usize, m: usize, seed: u64) -> SampleMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        SampleMatrix::new(DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.5..1.5))).unwrap()
    }

    fn kde(data: SampleMatrix, eps: f64) -> KdeModel {
        let metric = Metric::euclidean(data.dim());
        KdeModel::new(data, eps, metric).unwrap()
    }

    #[test]
    fn weights_single_sample() {
        let model = kde(SampleMatrix::new(dmatrix![1.0]).unwrap(), 0.5);
        let w = model.weights(&[42.0]).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn weights_coincident_samples_split_mass() {
        let model = kde(SampleMatrix::new(dmatrix![0.5, 0.5]).unwrap(), 1.0);
        let w = model.weights(&[7.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn weights_match_direct_normalized_exponentials() {
        let model = kde(random_samples(3, 20, 2), 0.7);
        let x = [0.1, -0.2, 0.4];
        let w = model.weights(&x).unwrap();
        let raw: Vec<f64> = (0..20)
            .map(|j| {
                let q = Metric::euclidean(3).squared_distance(&x, model.data().column_slice(j));
                (-q / (2.0 * 0.7)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        for j in 0..20 {
            assert_abs_diff_eq!(w[j], raw[j] / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn denoiser_returns_isolated_sample() {
        let model = kde(SampleMatrix::new(dmatrix![0.0, 100.0]).unwrap(), 0.1);
        let d = model.denoiser(&[0.0]).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn denoiser_midpoint_for_equidistant_samples() {
        let model = kde(SampleMatrix::new(dmatrix![-2.0, 4.0; 0.0, 0.0]).unwrap(), 0.8);
        let d = model.denoiser(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d[1], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn denoiser_single_sample() {
        let model = kde(SampleMatrix::new(dmatrix![3.0; -1.0]).unwrap(), 0.5);
        let d = model.denoiser(&[9.0, 9.0]).unwrap();
        assert_eq!(d.as_slice(), &[3.0, -1.0]);
    }

    #[test]
    fn score_is_identically_minus_residual_over_epsilon() {
        let model = kde(random_samples(2, 15, 8), 0.4);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let s = model.score(&x).unwrap();
            let d = model.denoiser(&x).unwrap();
            for i in 0..2 {
                assert_abs_diff_eq!(s[i], -(x[i] - d[i]) / 0.4, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn score_vanishes_at_fixed_point() {
        let model = kde(SampleMatrix::new(dmatrix![-1.0, 1.0]).unwrap(), 0.5);
        let s = model.score(&[0.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn score_single_sample_gaussian_pull() {
        let model = kde(SampleMatrix::new(dmatrix![2.0]).unwrap(), 0.25);
        let s = model.score(&[0.0]).unwrap();
        assert_abs_diff_eq!(s[0], 2.0 / 0.25, epsilon = 1e-14);
    }

    #[test]
    fn score_matches_finite_differences_of_log_kde() {
        let model = kde(random_samples(3, 18, 12), 0.6);
        let log_kde = |x: &[f64]| {
            let logs: Vec<f64> = (0..model.len())
                .map(|j| {
                    let q = Metric::euclidean(3)
                        .squared_distance(x, model.data().column_slice(j));
                    -q / (2.0 * model.epsilon())
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let score = model.score(&x).unwrap();
            let h = 1e-5;
            let mut fd = DVector::zeros(3);
            for i in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                fd[i] = (log_kde(&xp) - log_kde(&xm)) / (2.0 * h);
            }
            let rel = (score.clone() - &fd).norm() / fd.norm();
            assert!(rel <= 1e-5, "relative FD mismatch {rel}");
        }
    }

    #[test]
    fn localized_update_with_full_windows_equals_denoiser() {
        let data = random_samples(3, 12, 30);
        let model = kde(data, 0.5);
        let localized = LocalizedKde::new(model.clone(), full_window_sets(3).unwrap()).unwrap();
        let x = [0.4, -0.9, 0.2];
        let global = model.denoiser(&x).unwrap();
        let local = localized.update(&x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(global[i], local[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn localized_update_stays_in_containment_box() {
        let data = random_samples(4, 25, 41);
        let bounds = ContainmentBox::from_data(&data);
        let model = kde(data, 0.2);
        let localized =
            LocalizedKde::new(model, periodic_stencil_sets(4, 1).unwrap()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for scale in [1.0, 100.0, 1e8] {
            for _ in 0..50 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-scale..scale)).collect();
                let out = localized.update(&x).unwrap();
                assert!(bounds.contains(out.as_slice()));
            }
        }
    }

    #[test]
    fn localized_update_single_sample_is_constant() {
        let data = SampleMatrix::new(dmatrix![1.0; 2.0; 3.0]).unwrap();
        let model = kde(data, 0.3);
        let localized =
            LocalizedKde::new(model, periodic_stencil_sets(3, 1).unwrap()).unwrap();
        let a = localized.update(&[0.0, 0.0, 0.0]).unwrap();
        let b = localized.update(&[5.0, -5.0, 9.0]).unwrap();
        assert_eq!(a.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(b.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn free_function_matches_method() {
        let data = random_samples(3, 10, 55);
        let model = kde(data, 0.4);
        let sets = periodic_stencil_sets(3, 1).unwrap();
        let x = [0.1, 0.2, 0.3];
        let via_fn = localized_kde_update(&model, &sets, &x).unwrap();
        let via_struct = LocalizedKde::new(model, sets).unwrap().update(&x).unwrap();
        assert_eq!(via_fn, via_struct);
    }
}
