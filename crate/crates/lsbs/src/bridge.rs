//! Global (unlocalized) Schrödinger bridge machinery.
//!
//! Given samples `x^(j)`, `j = 1..m`, the bridge is built from the symmetric
//! kernel matrix
//!
//! ```text
//! T_jk = exp(-‖x^(k) - x^(j)‖² / (4ε))
//! ```
//!
//! and the Sinkhorn scaling vector `v > 0` that makes
//! `P = D(v)·T·D(v)` a reversible Markov chain with uniform invariant
//! distribution (all row sums of `P` equal 1). The scaling extends to
//! arbitrary states through the probability vector
//!
//! ```text
//! w(x) = D(v)·t(x) / (vᵀ t(x)),    t^(j)(x) = exp(-‖x - x^(j)‖²/(4ε)),
//! ```
//!
//! which yields the conditional mean `m(x;ε) = 𝒳 w(x)`, the data-aware
//! covariance `S(x;ε) = 𝒳 D(w(x)) 𝒳ᵀ - m mᵀ`, and the induced score
//! `∇ log p_ε(x) = (m(x;ε) - x)/ε` with `p_ε(x) = (vᵀ t(x))²`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Metric, SampleMatrix};
use crate::error::{Error, Result};

/// Default Sinkhorn stopping tolerance on the max row-sum deviation of `P`.
pub const DEFAULT_SINKHORN_TOL: f64 = 1e-8;

/// Default Sinkhorn iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Raw kernel entries are floored here so far-field evaluations stay
/// strictly positive.
pub(crate) const KERNEL_FLOOR: f64 = 1e-300;

/// Shifted log-weights below this are dropped before exponentiation: with
/// at most ~1e6 samples, terms under e^-64 ≈ 1.6e-28 of the leading one
/// shift the normalized weights by less than one ulp.
pub(crate) const EXP_NEG_CUTOFF: f64 = -64.0;

/// Normalizes log-weights to a probability vector in place (softmax with
/// max-shift). If every log-weight is `-inf` — squared distances overflow
/// for astronomically distant queries — the mass collapses onto the index
/// supplied by `fallback`, so callers always receive a valid simplex
/// vector.
pub(crate) fn normalize_log_weights(logits: &mut [f64], fallback: impl FnOnce() -> usize) {
    let mut max = f64::NEG_INFINITY;
    for &l in logits.iter() {
        if l > max {
            max = l;
        }
    }
    if !max.is_finite() {
        let j = fallback();
        logits.iter_mut().for_each(|l| *l = 0.0);
        logits[j] = 1.0;
        return;
    }
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        let z = *l - max;
        let w = if z < EXP_NEG_CUTOFF { 0.0 } else { z.exp() };
        *l = w;
        sum += w;
    }
    let inv_sum = 1.0 / sum;
    for l in logits.iter_mut() {
        *l *= inv_sum;
    }
}

/// Index of the sample nearest to `x` under a scaled max-norm. Used only as
/// the far-field tiebreak when squared distances have overflowed.
pub(crate) fn nearest_column(data: &DMatrix<f64>, scales: &[f64], x: &[f64]) -> usize {
    let d = data.nrows();
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for j in 0..data.ncols() {
        let col = &data.as_slice()[j * d..(j + 1) * d];
        let mut dist = 0.0_f64;
        for i in 0..d {
            dist = dist.max((x[i] - col[i]).abs() / scales[i].sqrt());
        }
        if dist < best_dist {
            best_dist = dist;
            best = j;
        }
    }
    best
}

fn validate_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "bandwidth epsilon must be positive and finite, got {epsilon}"
        )));
    }
    Ok(())
}

fn validate_query(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::Data(format!(
            "query has dimension {}, expected {}",
            x.len(),
            d
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("query contains non-finite entries".into()));
    }
    Ok(())
}

/// Symmetric kernel matrix `T_jk = exp(-‖x^(k)-x^(j)‖²_metric / (4ε))`.
///
/// Entries lie in `(0, 1]` with unit diagonal; far-apart pairs are floored
/// at [`KERNEL_FLOOR`].
pub fn kernel_matrix(data: &SampleMatrix, epsilon: f64, metric: &Metric) -> Result<DMatrix<f64>> {
    validate_epsilon(epsilon)?;
    if metric.dim() != data.dim() {
        return Err(Error::Parameter(format!(
            "metric dimension {} does not match data dimension {}",
            metric.dim(),
            data.dim()
        )));
    }
    let m = data.len();
    let mut t = DMatrix::from_element(m, m, 1.0);
    let inv4eps = 1.0 / (4.0 * epsilon);
    for k in 0..m {
        let xk = data.column_slice(k);
        for j in 0..k {
            let q = metric.squared_distance(data.column_slice(j), xk);
            let val = (-q * inv4eps).exp().max(KERNEL_FLOOR);
            t[(j, k)] = val;
            t[(k, j)] = val;
        }
    }
    Ok(t)
}

/// Inner-product kernel `T_jk = exp((x^(k))ᵀ x^(j) / (2ε))`.
///
/// Differs from [`kernel_matrix`] by the diagonal factors
/// `exp(-‖x^(j)‖²/(4ε))`, which the Sinkhorn scaling absorbs, so both
/// kernels produce the same bistochastic matrix `P` (with different `v`).
/// Exponents are shifted down by `max(0, max_jk E_jk - 700)` before
/// exponentiation to avoid overflow; a constant rescaling of `T` leaves `P`
/// unchanged as well.
pub fn inner_product_kernel_matrix(data: &SampleMatrix, epsilon: f64) -> Result<DMatrix<f64>> {
    validate_epsilon(epsilon)?;
    let m = data.len();
    let inv2eps = 1.0 / (2.0 * epsilon);
    let mut exponents = DMatrix::zeros(m, m);
    let mut max_e = f64::NEG_INFINITY;
    for k in 0..m {
        let xk = data.column(k);
        for j in 0..=k {
            let e = data.column(j).dot(&xk) * inv2eps;
            exponents[(j, k)] = e;
            exponents[(k, j)] = e;
            if e > max_e {
                max_e = e;
            }
        }
    }
    let shift = (max_e - 700.0).max(0.0);
    Ok(exponents.map(|e| (e - shift).exp().max(KERNEL_FLOOR)))
}

/// `P = D(v)·T·D(v)` for a fitted scaling vector.
pub fn scaled_bistochastic(t: &DMatrix<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let m = t.nrows();
    DMatrix::from_fn(m, m, |j, k| v[j] * t[(j, k)] * v[k])
}

/// Symmetric matrix-vector product computed row-wise; with `T` symmetric
/// each row dot runs over a contiguous column, and the per-row layout keeps
/// results identical regardless of thread scheduling.
fn symmetric_matvec(t: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let m = t.nrows();
    let storage = t.as_slice();
    let mut out = vec![0.0; m];
    if m >= 512 {
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let col = &storage[j * m..(j + 1) * m];
            *o = col.iter().zip(v).map(|(a, b)| a * b).sum();
        });
    } else {
        for (j, o) in out.iter_mut().enumerate() {
            let col = &storage[j * m..(j + 1) * m];
            *o = col.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Finds the positive vector `v` with `P = D(v)·T·D(v)` row-stochastic, via
/// the symmetric fixed-point update `v ← sqrt(v / (T v))`.
///
/// Stops once `max_k |v_k (Tv)_k - 1| ≤ tol`; fails with the final residual
/// if `max_iter` is exhausted.
pub fn sinkhorn_fit(t: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<DVector<f64>> {
    sinkhorn_fit_inner(t, tol, max_iter, None)
}

pub(crate) fn sinkhorn_fit_inner(
    t: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
    coordinate: Option<usize>,
) -> Result<DVector<f64>> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(Error::Data(format!(
            "kernel matrix must be square and non-empty, got {}x{}",
            t.nrows(),
            t.ncols()
        )));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be positive".into()));
    }
    if t.iter().any(|&e| !e.is_finite() || e <= 0.0) {
        return Err(Error::Data(
            "kernel matrix entries must be strictly positive and finite".into(),
        ));
    }
    let m = t.nrows();
    let max_entry = t.iter().cloned().fold(0.0_f64, f64::max);
    for k in 0..m {
        for j in 0..k {
            if (t[(j, k)] - t[(k, j)]).abs() > 1e-12 * max_entry {
                return Err(Error::Data("kernel matrix is not symmetric".into()));
            }
        }
    }

    let mut v = vec![1.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let u = symmetric_matvec(t, &v);
        residual = v
            .iter()
            .zip(&u)
            .map(|(vj, uj)| (vj * uj - 1.0).abs())
            .fold(0.0_f64, f64::max);
        if residual <= tol {
            return Ok(DVector::from_vec(v));
        }
        for (vj, uj) in v.iter_mut().zip(&u) {
            *vj = (*vj / uj).sqrt();
        }
    }
    Err(Error::SinkhornDiverged {
        residual,
        iterations: max_iter,
        coordinate,
    })
}

/// A fitted global Schrödinger bridge: training data, bandwidth, metric,
/// and the Sinkhorn weights `v`.
#[derive(Debug, Clone)]
pub struct BridgeModel {
    data: SampleMatrix,
    epsilon: f64,
    metric: Metric,
    weights: DVector<f64>,
    log_weights: Vec<f64>,
    bounds: (DVector<f64>, DVector<f64>),
}

impl BridgeModel {
    /// Builds the kernel matrix and runs Sinkhorn scaling on it.
    pub fn fit(
        data: SampleMatrix,
        epsilon: f64,
        metric: Metric,
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let t = kernel_matrix(&data, epsilon, &metric)?;
        let weights = sinkhorn_fit(&t, tol, max_iter)?;
        Self::from_parts(data, epsilon, metric, weights)
    }

    /// Assembles a model from an already-computed scaling vector, e.g. one
    /// loaded from disk. Validates shapes and positivity but does not
    /// re-check the row-sum condition.
    pub fn from_parts(
        data: SampleMatrix,
        epsilon: f64,
        metric: Metric,
        weights: DVector<f64>,
    ) -> Result<Self> {
        validate_epsilon(epsilon)?;
        if metric.dim() != data.dim() {
            return Err(Error::Parameter(
                "metric dimension does not match data dimension".into(),
            ));
        }
        if weights.len() != data.len() {
            return Err(Error::Data(format!(
                "weight vector length {} does not match sample count {}",
                weights.len(),
                data.len()
            )));
        }
        if weights.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::Data("Sinkhorn weights must be strictly positive".into()));
        }
        let log_weights = weights.iter().map(|v| v.ln()).collect();
        let bounds = data.coordinate_bounds();
        Ok(Self {
            data,
            epsilon,
            metric,
            weights,
            log_weights,
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

    /// The Sinkhorn scaling vector `v`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
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

    /// Kernel vector `t^(j)(x) = exp(-‖x-x^(j)‖²_metric/(4ε))`, entries in
    /// `(0, 1]`, floored at [`KERNEL_FLOOR`].
    pub fn transition_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        validate_query(x, self.dim())?;
        let inv4eps = 1.0 / (4.0 * self.epsilon);
        let m = self.len();
        let mut t = DVector::zeros(m);
        for j in 0..m {
            let q = self.metric.squared_distance(x, self.data.column_slice(j));
            t[j] = (-q * inv4eps).exp().max(KERNEL_FLOOR);
        }
        Ok(t)
    }

    /// Probability vector `w(x) = D(v) t(x) / (vᵀ t(x))`, evaluated in the
    /// log domain with max-shift. Collapses onto the nearest sample when
    /// squared distances overflow (far-field fallback).
    pub fn probability_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        validate_query(x, self.dim())?;
        let inv4eps = 1.0 / (4.0 * self.epsilon);
        let m = self.len();
        let mut logits = vec![0.0; m];
        for (j, logit) in logits.iter_mut().enumerate() {
            let q = self.metric.squared_distance(x, self.data.column_slice(j));
            *logit = self.log_weights[j] - q * inv4eps;
        }
        normalize_log_weights(&mut logits, || {
            nearest_column(self.data.matrix(), self.metric.scales(), x)
        });
        Ok(DVector::from_vec(logits))
    }

    /// Conditional mean `m(x;ε) = 𝒳 w(x)`; always a convex combination of
    /// the data columns. Each component is clamped into the per-coordinate
    /// data range, which the exact value never leaves, undoing the last
    /// ulp of rounding in the convex sum.
    pub fn conditional_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        let w = self.probability_vector(x)?;
        let mut mean = self.data.matrix() * w;
        for i in 0..mean.len() {
            mean[i] = mean[i].clamp(self.bounds.0[i], self.bounds.1[i]);
        }
        Ok(mean)
    }

    /// Data-aware conditional covariance
    /// `S(x;ε) = 𝒳 D(w(x)) 𝒳ᵀ - m(x;ε) m(x;ε)ᵀ`. Symmetric and positive
    /// semidefinite up to roundoff.
    pub fn conditional_cov(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let w = self.probability_vector(x)?;
        Ok(self.cov_from_weights(&w))
    }

    pub(crate) fn cov_from_weights(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mean = self.data.matrix() * w;
        let mut s = DMatrix::zeros(d, d);
        for (j, &wj) in w.iter().enumerate() {
            if wj == 0.0 {
                continue;
            }
            let col = self.data.column_slice(j);
            for b in 0..d {
                let wb = wj * col[b];
                for a in 0..d {
                    s[(a, b)] += col[a] * wb;
                }
            }
        }
        for b in 0..d {
            for a in 0..d {
                s[(a, b)] -= mean[a] * mean[b];
            }
        }
        s
    }

    /// Score of the smoothed density `p_ε(x) = (vᵀ t(x))²`:
    /// `∇ log p_ε(x) = (m(x;ε) - x)/ε`.
    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut mean = self.conditional_mean(x)?;
        for (mi, xi) in mean.iter_mut().zip(x) {
            *mi = (*mi - xi) / self.epsilon;
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_samples(d: usize, m: usize, seed: u64) -> SampleMatrix {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        SampleMatrix::new(DMatrix::from_fn(d, m, |_, _| rng.gen_range(-1.5..1.5))).unwrap()
    }

    fn fit(data: SampleMatrix, epsilon: f64) -> BridgeModel {
        let metric = Metric::euclidean(data.dim());
        BridgeModel::fit(data, epsilon, metric, 1e-12, 10_000).unwrap()
    }

    #[test]
    fn kernel_single_sample_is_one() {
        let data = SampleMatrix::new(dmatrix![0.7]).unwrap();
        let t = kernel_matrix(&data, 0.3, &Metric::euclidean(1)).unwrap();
        assert_eq!(t, dmatrix![1.0]);
    }

    #[test]
    fn kernel_at_squared_distance_four_epsilon() {
        // ‖x1 - x2‖² = 4ε=> off-diagonal e^{-1}.
        let eps = 0.25;
        let data = SampleMatrix::new(dmatrix![0.0, 1.0]).unwrap();
        let t = kernel_matrix(&data, eps, &Metric::euclidean(1)).unwrap();
        assert_abs_diff_eq!(t[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 0)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(t[(0, 0)], 1.0);
        assert_eq!(t[(1, 1)], 1.0);
    }

    #[test]
    fn kernel_of_coincident_samples_is_all_ones() {
        let data = SampleMatrix::new(dmatrix![0.3, 0.3; -1.0, -1.0]).unwrap();
        let t = kernel_matrix(&data, 1.0, &Metric::euclidean(2)).unwrap();
        assert_eq!(t, DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn kernel_rejects_bad_epsilon() {
        let data = SampleMatrix::new(dmatrix![0.0]).unwrap();
        assert!(kernel_matrix(&data, 0.0, &Metric::euclidean(1)).is_err());
        assert!(kernel_matrix(&data, -1.0, &Metric::euclidean(1)).is_err());
        assert!(kernel_matrix(&data, f64::NAN, &Metric::euclidean(1)).is_err());
    }

    #[test]
    fn sinkhorn_single_entry() {
        let v = sinkhorn_fit(&dmatrix![1.0], 1e-12, 100).unwrap();
        assert_eq!(v, dvector![1.0]);
    }

    #[test]
    fn sinkhorn_two_by_two_closed_form() {
        // For T = [[1, t], [t, 1]] the row-sum condition gives
        // v = (1+t)^{-1/2} in both components.
        for t_off in [0.1, 0.5, 0.9, 0.999] {
            let t = dmatrix![1.0, t_off; t_off, 1.0];
            let v = sinkhorn_fit(&t, 1e-14, 1000).unwrap();
            let expected = (1.0 + t_off).powf(-0.5);
            assert_abs_diff_eq!(v[0], expected, epsilon = 1e-12);
            assert_abs_diff_eq!(v[1], expected, epsilon = 1e-12);
            let p = scaled_bistochastic(&t, &v);
            assert_abs_diff_eq!(p[(0, 0)], 1.0 / (1.0 + t_off), epsilon = 1e-12);
            assert_abs_diff_eq!(p[(0, 1)], t_off / (1.0 + t_off), epsilon = 1e-12);
        }
    }

    #[test]
    fn sinkhorn_random_kernel_is_bistochastic() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut t = DMatrix::from_fn(5, 5, |_, _| rng.gen_range(0.05..1.0));
        t = &t * t.transpose(); // symmetric positive entries
        let v = sinkhorn_fit(&t, 1e-12, 10_000).unwrap();
        let p = scaled_bistochastic(&t, &v);
        for k in 0..5 {
            let row_sum: f64 = (0..5).map(|j| p[(k, j)]).sum();
            assert_abs_diff_eq!(row_sum, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sinkhorn_reports_divergence_with_residual() {
        let t = dmatrix![1.0, 0.5; 0.5, 1.0];
        match sinkhorn_fit(&t, 1e-14, 1) {
            Err(Error::SinkhornDiverged { residual, iterations, .. }) => {
                assert!(residual > 0.0);
                assert_eq!(iterations, 1);
            }
            other => panic!("expected divergence error, got {other:?}"),
        }
    }

    #[test]
    fn sinkhorn_rejects_asymmetric_or_nonpositive() {
        assert!(sinkhorn_fit(&dmatrix![1.0, 0.2; 0.8, 1.0], 1e-8, 100).is_err());
        assert!(sinkhorn_fit(&dmatrix![1.0, 0.0; 0.0, 1.0], 1e-8, 100).is_err());
    }

    #[test]
    fn transition_vector_examples() {
        let eps = 0.25;
        let data = SampleMatrix::new(dmatrix![0.0, 1.0]).unwrap();
        let model = fit(data, eps);
        // At a training sample the matching entry is exactly 1.
        let t = model.transition_vector(&[0.0]).unwrap();
        assert_eq!(t[0], 1.0);
        assert_abs_diff_eq!(t[1], (-1.0f64).exp(), epsilon = 1e-15);
        // Far from all data every entry hits the underflow floor.
        let far = model.transition_vector(&[1e160]).unwrap();
        assert!(far.iter().all(|&e| e == KERNEL_FLOOR));
    }

    #[test]
    fn probability_vector_at_sample_recovers_bistochastic_column() {
        let data = random_samples(3, 12, 21);
        let metric = Metric::euclidean(3);
        let t = kernel_matrix(&data, 0.4, &metric).unwrap();
        let model = fit(data, 0.4);
        let p = scaled_bistochastic(&t, model.weights());
        for k in 0..12 {
            let xk: Vec<f64> = model.data().column(k).iter().copied().collect();
            let w = model.probability_vector(&xk).unwrap();
            for j in 0..12 {
                assert_abs_diff_eq!(w[j], p[(j, k)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn probability_vector_single_sample_is_one_anywhere() {
        let model = fit(SampleMatrix::new(dmatrix![2.0; -1.0]).unwrap(), 0.1);
        for x in [[0.0, 0.0], [1e3, -1e3], [2.0, -1.0]] {
            let w = model.probability_vector(&x).unwrap();
            assert_eq!(w, dvector![1.0]);
        }
    }

    #[test]
    fn probability_vector_coincident_samples_split_mass() {
        let model = fit(SampleMatrix::new(dmatrix![0.5, 0.5]).unwrap(), 1.0);
        let w = model.probability_vector(&[-3.0]).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn probability_vector_far_field_concentrates_on_nearest() {
        let model = fit(SampleMatrix::new(dmatrix![0.0, 1e160]).unwrap(), 0.5);
        // Squared distances overflow; mass must land on the closer sample.
        let w = model.probability_vector(&[1e170]).unwrap();
        assert_eq!(w[1], 1.0);
        assert_eq!(w[0], 0.0);
    }

    #[test]
    fn conditional_mean_single_sample_is_that_sample() {
        let model = fit(SampleMatrix::new(dmatrix![1.5; -0.5]).unwrap(), 0.2);
        let m = model.conditional_mean(&[100.0, 100.0]).unwrap();
        assert_eq!(m, dvector![1.5, -0.5]);
    }

    #[test]
    fn conditional_mean_matches_direct_summation() {
        let model = fit(random_samples(3, 20, 3), 0.7);
        let x = [0.2, -0.4, 0.9];
        // Independent route: raw kernel weights, no log-domain shift.
        let t = model.transition_vector(&x).unwrap();
        let v = model.weights();
        let denom: f64 = v.dot(&t);
        let mut expected = [0.0; 3];
        for j in 0..20 {
            let w = v[j] * t[j] / denom;
            for (i, e) in expected.iter_mut().enumerate() {
                *e += model.data().matrix()[(i, j)] * w;
            }
        }
        let m = model.conditional_mean(&x).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(m[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_cov_single_sample_is_zero() {
        let model = fit(SampleMatrix::new(dmatrix![1.0; 2.0]).unwrap(), 0.2);
        let s = model.conditional_cov(&[0.0, 0.0]).unwrap();
        assert_eq!(s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn conditional_cov_concentrated_weights_vanish() {
        let model = fit(random_samples(2, 6, 11), 0.05);
        // Far-field query concentrates all mass on one sample.
        let s = model.conditional_cov(&[1e200, 1e200]).unwrap();
        assert_eq!(s, DMatrix::zeros(2, 2));
    }

    #[test]
    fn conditional_cov_matches_two_pass_oracle() {
        let model = fit(random_samples(2, 50, 5), 0.6);
        let x = [0.3, -0.1];
        let w = model.probability_vector(&x).unwrap();
        // Two-pass weighted covariance: center first, then accumulate.
        let mut mean = [0.0; 2];
        for j in 0..50 {
            for (i, m) in mean.iter_mut().enumerate() {
                *m += w[j] * model.data().matrix()[(i, j)];
            }
        }
        let mut oracle = DMatrix::zeros(2, 2);
        for j in 0..50 {
            let dx = [
                model.data().matrix()[(0, j)] - mean[0],
                model.data().matrix()[(1, j)] - mean[1],
            ];
            for a in 0..2 {
                for b in 0..2 {
                    oracle[(a, b)] += w[j] * dx[a] * dx[b];
                }
            }
        }
        let s = model.conditional_cov(&x).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(s[(a, b)], oracle[(a, b)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn score_vanishes_at_symmetric_midpoint() {
        let model = fit(SampleMatrix::new(dmatrix![-1.0, 1.0]).unwrap(), 0.5);
        let s = model.score(&[0.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn score_single_sample_is_gaussian_pull() {
        let eps = 0.3;
        let model = fit(SampleMatrix::new(dmatrix![2.0]).unwrap(), eps);
        let s = model.score(&[0.5]).unwrap();
        assert_abs_diff_eq!(s[0], (2.0 - 0.5) / eps, epsilon = 1e-14);
    }

    #[test]
    fn score_matches_finite_differences_of_log_density() {
        let model = fit(random_samples(3, 25, 9), 0.5);
        let log_density = |x: &[f64]| {
            // log(vᵀ t(x)) via logsumexp, independent of the score path.
            let logs: Vec<f64> = (0..model.len())
                .map(|j| {
                    let q = Metric::euclidean(3)
                        .squared_distance(x, model.data().column_slice(j));
                    model.weights()[j].ln() - q / (4.0 * model.epsilon())
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(40);
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
                fd[i] = (2.0 * log_density(&xp) - 2.0 * log_density(&xm)) / (2.0 * h);
            }
            let rel = (score.clone() - &fd).norm() / fd.norm();
            assert!(rel <= 1e-5, "relative FD mismatch {rel}");
        }
    }

    #[test]
    fn inner_product_kernel_orthogonal_unit_vectors() {
        let data = SampleMatrix::new(dmatrix![1.0, 0.0; 0.0, 1.0]).unwrap();
        let t = inner_product_kernel_matrix(&data, 0.5).unwrap();
        assert_abs_diff_eq!(t[(0, 0)], 1.0f64.exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 1)], 1.0f64.exp(), epsilon = 1e-15);
        assert_eq!(t[(0, 1)], 1.0);
        assert_eq!(t[(1, 0)], 1.0);
    }

    #[test]
    fn inner_product_kernel_single_sample_bridge_is_identity() {
        let data = SampleMatrix::new(dmatrix![3.0]).unwrap();
        let t = inner_product_kernel_matrix(&data, 0.5).unwrap();
        let v = sinkhorn_fit(&t, 1e-12, 1000).unwrap();
        let p = scaled_bistochastic(&t, &v);
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inner_product_kernel_shifts_large_exponents() {
        let data = SampleMatrix::new(dmatrix![80.0, 79.0]).unwrap();
        let t = inner_product_kernel_matrix(&data, 0.5).unwrap();
        assert!(t.iter().all(|e| e.is_finite() && *e > 0.0));
        // The shifted kernel still produces the Gaussian-kernel bridge.
        let v = sinkhorn_fit(&t, 1e-12, 10_000).unwrap();
        let p_ip = scaled_bistochastic(&t, &v);
        let tg = kernel_matrix(&data, 0.5, &Metric::euclidean(1)).unwrap();
        let vg = sinkhorn_fit(&tg, 1e-12, 10_000).unwrap();
        let p_g = scaled_bistochastic(&tg, &vg);
        assert_abs_diff_eq!(p_ip[(0, 1)], p_g[(0, 1)], epsilon = 1e-8);
    }

    #[test]
    fn gaussian_and_inner_product_kernels_share_the_bridge() {
        let data = random_samples(2, 10, 33);
        let metric = Metric::euclidean(2);
        let tg = kernel_matrix(&data, 0.8, &metric).unwrap();
        let tip = inner_product_kernel_matrix(&data, 0.8).unwrap();
        let vg = sinkhorn_fit(&tg, 1e-12, 10_000).unwrap();
        let vip = sinkhorn_fit(&tip, 1e-12, 10_000).unwrap();
        let pg = scaled_bistochastic(&tg, &vg);
        let pip = scaled_bistochastic(&tip, &vip);
        for j in 0..10 {
            for k in 0..10 {
                assert_abs_diff_eq!(pg[(j, k)], pip[(j, k)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn queries_validate_dimension_and_finiteness() {
        let model = fit(SampleMatrix::new(dmatrix![0.0; 0.0]).unwrap(), 1.0);
        assert!(model.probability_vector(&[0.0]).is_err());
        assert!(model.conditional_mean(&[f64::NAN, 0.0]).is_err());
    }
}
