//! Statistics used to compare generated and training data: empirical
//! covariance with cyclically centered rows, histograms, autocovariance,
//! and sign-transition rates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default number of histogram bins when none is configured.
pub const DEFAULT_HISTOGRAM_BINS: usize = 61;

/// Unbiased empirical covariance of the columns of `samples` (one
/// observation per column, `m-1` denominator).
pub fn empirical_covariance(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = samples.nrows();
    let m = samples.ncols();
    if m < 2 {
        return Err(Error::Data(format!(
            "covariance needs at least 2 samples, got {m}"
        )));
    }
    let mut mean = DVector::zeros(d);
    for j in 0..m {
        mean += samples.column(j);
    }
    mean /= m as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = DVector::zeros(d);
    for j in 0..m {
        centered.copy_from(&samples.column(j));
        centered -= &mean;
        for b in 0..d {
            let cb = centered[b];
            for a in 0..d {
                cov[(a, b)] += centered[a] * cb;
            }
        }
    }
    cov /= (m - 1) as f64;
    Ok(cov)
}

/// Cyclically shifts each row of a square matrix so its diagonal entry
/// lands at the middle column, and returns the mean over the shifted rows.
///
/// The shift is a bijective index permutation per row; un-centering
/// recovers the input exactly.
pub fn centered_rows(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = cov.nrows();
    if d != cov.ncols() || d == 0 {
        return Err(Error::Data(format!(
            "centered rows need a square matrix, got {}x{}",
            d,
            cov.ncols()
        )));
    }
    let center = d.div_ceil(2) - 1; // the middle column
    let mut out = DMatrix::zeros(d, d);
    for alpha in 0..d {
        for c in 0..d {
            let src = (alpha + d + c - center) % d;
            out[(alpha, c)] = cov[(alpha, src)];
        }
    }
    let mut mean = DVector::zeros(d);
    for c in 0..d {
        mean[c] = out.column(c).sum() / d as f64;
    }
    Ok((out, mean))
}

/// Fixed-range histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges, uniform.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Total in-range count.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized density per bin (mass / (total * width)).
    pub fn density(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (total * (self.edges[i + 1] - self.edges[i])))
            .collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins())
            .map(|i| 0.5 * (self.edges[i] + self.edges[i + 1]))
            .collect()
    }
}

/// Bins `values` over `range` (empirical min/max when `None`). Values
/// exactly at the upper edge land in the last bin; out-of-range values are
/// dropped.
pub fn histogram(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Data("histogram of empty input".into()));
    }
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let (mut lo, mut hi) = match range {
        Some((lo, hi)) => {
            if lo >= hi || lo.is_nan() || hi.is_nan() {
                return Err(Error::Parameter(format!(
                    "invalid histogram range [{lo}, {hi}]"
                )));
            }
            (lo, hi)
        }
        None => {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        if v < lo || v > hi || !v.is_finite() {
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

/// Autocovariance `R(τ) = (1/(n-τ)) Σ_t (x_t - x̄)(x_{t+τ} - x̄)` for
/// τ = 0..=tau_max, with the full-series mean. `R(0)` is the (biased)
/// series variance.
pub fn autocovariance(series: &[f64], tau_max: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= tau_max {
        return Err(Error::Parameter(format!(
            "series of length {n} is too short for lag {tau_max}"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(tau_max + 1);
    for tau in 0..=tau_max {
        let mut acc = 0.0;
        for t in 0..n - tau {
            acc += (series[t] - mean) * (series[t + tau] - mean);
        }
        out.push(acc / (n - tau) as f64);
    }
    Ok(out)
}

/// Autocovariance of a vector-valued series laid out with one coordinate
/// per row and one time point per column, averaged over coordinates.
pub fn autocovariance_rows(series: &DMatrix<f64>, tau_max: usize) -> Result<Vec<f64>> {
    let k = series.nrows();
    if k == 0 {
        return Err(Error::Data("autocovariance of empty series".into()));
    }
    let mut mean = vec![0.0; tau_max + 1];
    let mut row = Vec::with_capacity(series.ncols());
    for i in 0..k {
        row.clear();
        row.extend(series.row(i).iter().copied());
        let r = autocovariance(&row, tau_max)?;
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= k as f64;
    }
    Ok(mean)
}

/// Fraction of adjacent sign changes, pooled over the columns of
/// `trajectories` (one trajectory per column). Zeros count as positive.
pub fn transition_rate(trajectories: &DMatrix<f64>) -> Result<f64> {
    let len = trajectories.nrows();
    if len < 2 {
        return Err(Error::Data(format!(
            "transition rate needs trajectories of length >= 2, got {len}"
        )));
    }
    let negative = |v: f64| v < 0.0;
    let mut changes = 0u64;
    let mut pairs = 0u64;
    for j in 0..trajectories.ncols() {
        let col = trajectories.column(j);
        for t in 1..len {
            if negative(col[t - 1]) != negative(col[t]) {
                changes += 1;
            }
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Data("no trajectory pairs".into()));
    }
    Ok(changes as f64 / pairs as f64)
}

/// The statistics emitted alongside generated samples.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub centered_rows: DMatrix<f64>,
    pub row_mean: DVector<f64>,
    pub histogram: Histogram,
    pub autocov: Vec<f64>,
    pub transition_rate: f64,
}

impl DiagnosticsReport {
    /// Builds the report for a sample matrix (one sample or trajectory per
    /// column): covariance of the columns with centered rows, histogram of
    /// all entries, per-column autocovariance averaged over columns, and
    /// the pooled sign-transition rate.
    pub fn from_samples(samples: &DMatrix<f64>, bins: usize, tau_max: usize) -> Result<Self> {
        let cov = empirical_covariance(samples)?;
        let (rows, row_mean) = centered_rows(&cov)?;
        let entries: Vec<f64> = samples.iter().copied().collect();
        let hist = histogram(&entries, bins, None)?;
        let tau = tau_max.min(samples.nrows().saturating_sub(1));
        let autocov = autocovariance_rows(&samples.transpose(), tau)?;
        let rate = transition_rate(samples)?;
        Ok(Self {
            centered_rows: rows,
            row_mean,
            histogram: hist,
            autocov,
            transition_rate: rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn covariance_of_two_points_matches_hand_formula() {
        // Columns ±u with u = (1, 0): mean 0, unbiased covariance
        // (uuᵀ + uuᵀ)/(2-1) = 2uuᵀ.
        let samples = dmatrix![1.0, -1.0; 0.0, 0.0];
        let cov = empirical_covariance(&samples).unwrap();
        assert_eq!(cov, dmatrix![2.0, 0.0; 0.0, 0.0]);
    }

    #[test]
    fn covariance_of_identical_columns_is_zero() {
        let samples = dmatrix![1.0, 1.0, 1.0; -2.0, -2.0, -2.0];
        let cov = empirical_covariance(&samples).unwrap();
        assert_eq!(cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_of_iid_normals_is_near_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let m = 100_000;
        let samples = DMatrix::from_fn(3, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = empirical_covariance(&samples).unwrap();
        let tol = 5.0 / (m as f64).sqrt();
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!(
                    (cov[(a, b)] - expected).abs() < tol,
                    "cov[{a},{b}] = {}",
                    cov[(a, b)]
                );
            }
        }
    }

    #[test]
    fn covariance_rejects_single_sample() {
        assert!(empirical_covariance(&dmatrix![1.0; 2.0]).is_err());
    }

    #[test]
    fn centered_rows_of_circulant_are_identical() {
        // Circulant: every row is a cyclic shift, so centering aligns them.
        let first = [4.0, 1.0, 0.5, 0.25, 1.0];
        let d = 5;
        let cov = DMatrix::from_fn(d, d, |i, j| first[(j + d - i) % d]);
        let (rows, mean) = centered_rows(&cov).unwrap();
        for alpha in 1..d {
            for c in 0..d {
                assert_eq!(rows[(alpha, c)], rows[(0, c)]);
            }
        }
        for c in 0..d {
            assert_eq!(mean[c], rows[(0, c)]);
        }
        // Diagonal value sits at the middle column.
        assert_eq!(rows[(0, 2)], 4.0);
    }

    #[test]
    fn centered_rows_of_identity_are_center_spikes() {
        let (rows, _) = centered_rows(&DMatrix::<f64>::identity(5, 5)).unwrap();
        for alpha in 0..5 {
            for c in 0..5 {
                assert_eq!(rows[(alpha, c)], if c == 2 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn centering_is_invertible() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let d = 7;
        let cov = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let (rows, _) = centered_rows(&cov).unwrap();
        let center = d.div_ceil(2) - 1;
        let mut recovered = DMatrix::zeros(d, d);
        for alpha in 0..d {
            for c in 0..d {
                let src = (alpha + d + c - center) % d;
                recovered[(alpha, src)] = rows[(alpha, c)];
            }
        }
        assert_eq!(recovered, cov);
    }

    #[test]
    fn histogram_single_value_single_bin() {
        let h = histogram(&[3.0], 1, None).unwrap();
        assert_eq!(h.counts, vec![1]);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn histogram_uniform_grid_is_flat() {
        let values: Vec<f64> = (0..60).map(|i| i as f64 + 0.5).collect();
        let h = histogram(&values, 6, Some((0.0, 60.0))).unwrap();
        assert_eq!(h.counts, vec![10; 6]);
    }

    #[test]
    fn histogram_counts_conserve_in_range_mass() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let values: Vec<f64> = (0..5_000).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let h = histogram(&values, 61, Some((-2.0, 2.0))).unwrap();
        let in_range = values.iter().filter(|v| (-2.0..=2.0).contains(*v)).count();
        assert_eq!(h.total(), in_range as u64);
    }

    #[test]
    fn histogram_upper_edge_lands_in_last_bin() {
        let h = histogram(&[0.0, 1.0], 4, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
    }

    #[test]
    fn histogram_rejects_empty_input() {
        assert!(histogram(&[], 10, None).is_err());
    }

    #[test]
    fn autocovariance_constant_series_is_zero() {
        let r = autocovariance(&[2.5; 40], 5).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocovariance_alternating_series() {
        let series: Vec<f64> = (0..100).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocovariance(&series, 4).unwrap();
        for (tau, &value) in r.iter().enumerate() {
            let expected = if tau.is_multiple_of(2) { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(value, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn autocovariance_lag_zero_is_series_variance() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let series: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let r = autocovariance(&series, 3).unwrap();
        let mean = series.iter().sum::<f64>() / 500.0;
        let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 500.0;
        assert_abs_diff_eq!(r[0], var, epsilon = 1e-12);
    }

    #[test]
    fn autocovariance_of_white_noise_decays() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let n = 40_000;
        let series: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let r = autocovariance(&series, 3).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        for &value in &r[1..] {
            assert!(value.abs() < tol, "lag value {value} above noise floor {tol}");
        }
    }

    #[test]
    fn autocovariance_rejects_short_series() {
        assert!(autocovariance(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn transition_rate_constant_sign_is_zero() {
        let t = dmatrix![1.0, 2.0; 3.0, 0.5; 2.0, 0.25];
        assert_eq!(transition_rate(&t).unwrap(), 0.0);
    }

    #[test]
    fn transition_rate_alternating_is_one() {
        let t = dmatrix![1.0; -1.0; 1.0; -1.0];
        assert_eq!(transition_rate(&t).unwrap(), 1.0);
    }

    #[test]
    fn transition_rate_zero_counts_as_positive() {
        // 0 -> -1 is a change, 0 -> 1 is not.
        let t = dmatrix![0.0; -1.0; 0.0; 1.0];
        assert_abs_diff_eq!(transition_rate(&t).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn report_assembles_all_statistics() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let samples = DMatrix::from_fn(6, 40, |_, _| rng.gen_range(-1.0..1.0));
        let report = DiagnosticsReport::from_samples(&samples, 10, 4).unwrap();
        assert_eq!(report.centered_rows.nrows(), 6);
        assert_eq!(report.histogram.total(), 240);
        assert_eq!(report.autocov.len(), 5);
        assert!(report.transition_rate > 0.0 && report.transition_rate < 1.0);
    }
}
