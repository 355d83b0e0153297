//! Periodic Gaussian targets with banded precision matrices.
//!
//! The sampling distribution is `N(0, C)` with `C = Π^{-1}` and `Π` a
//! circulant tridiagonal precision: diagonal `1 + 1/h²`, off-diagonal
//! `-1/(2h²)`, periodic corners. With mesh size `h = 1` this is the
//! tridiagonal matrix with diagonal 2 and off-diagonal -0.5, whose
//! covariance has `C_ii ≈ 0.58`, `C_{i,i±1} ≈ 0.15`, `C_{i,i±2} ≈ 0.04`,
//! `C_{i,i±3} ≈ 0.01`.
//!
//! The reference EM sampler for a known precision is
//! `X(n+1) = X(n) - ε·Π X(n) + sqrt(2ε)·Ξ(n)`, a stencil update with
//! weights `w_{±1} = ε/(2h²)`, `w_0 = 1 - ε(1 + 1/h²)`; it requires
//! `w_0 ≥ 0`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::data::SampleMatrix;
use crate::error::{Error, Result};

/// A zero-mean Gaussian target specified through its precision matrix.
#[derive(Debug, Clone)]
pub struct PeriodicGaussianSpec {
    d: usize,
    h: f64,
    precision: DMatrix<f64>,
}

impl PeriodicGaussianSpec {
    /// Precision `I - Δ_h` on a periodic domain of length `length` with
    /// `d` grid points (`h = length/d`).
    pub fn laplacian(d: usize, length: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Parameter(format!(
                "periodic field needs d >= 3, got {d}"
            )));
        }
        if !length.is_finite() || length <= 0.0 {
            return Err(Error::Parameter(format!(
                "domain length must be positive, got {length}"
            )));
        }
        let h = length / d as f64;
        let diag = 1.0 + 1.0 / (h * h);
        let off = -0.5 / (h * h);
        let mut precision = DMatrix::zeros(d, d);
        for i in 0..d {
            precision[(i, i)] = diag;
            precision[(i, (i + 1) % d)] = off;
            precision[((i + 1) % d, i)] = off;
        }
        Ok(Self { d, h, precision })
    }

    /// The tridiagonal precision with diagonal 2, off-diagonal -0.5, and
    /// periodic corners (the unit-mesh case of [`Self::laplacian`]).
    pub fn tridiagonal(d: usize) -> Result<Self> {
        Self::laplacian(d, d as f64)
    }

    /// An arbitrary symmetric positive-definite precision; `h` defaults
    /// to 1 for the stencil weights of the reference sampler.
    pub fn from_precision(precision: DMatrix<f64>) -> Result<Self> {
        let d = precision.nrows();
        if d == 0 || precision.ncols() != d {
            return Err(Error::Data("precision must be square and non-empty".into()));
        }
        if precision.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("precision has non-finite entries".into()));
        }
        let max = precision.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        for i in 0..d {
            for j in 0..i {
                if (precision[(i, j)] - precision[(j, i)]).abs() > 1e-12 * max {
                    return Err(Error::Data("precision must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            d,
            h: 1.0,
            precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mesh(&self) -> f64 {
        self.h
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Dense covariance `C = Π^{-1}` (for diagnostics and tests).
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("precision is not positive definite".into()))
            .map(|c| c.inverse())
    }

    /// Largest admissible EM step size (`w_0 ≥ 0`).
    pub fn max_em_step(&self) -> f64 {
        let max_diag = (0..self.d)
            .map(|i| self.precision[(i, i)])
            .fold(0.0_f64, f64::max);
        1.0 / max_diag
    }
}

/// Draws `m` independent samples from `N(0, Π^{-1})` by factorizing the
/// precision: `Π = LLᵀ`, `x = L^{-T} ξ`, `ξ ~ N(0, I)`.
pub fn sample_periodic_gaussian(
    spec: &PeriodicGaussianSpec,
    m: usize,
    seed: u64,
) -> Result<SampleMatrix> {
    if m == 0 {
        return Err(Error::Parameter("need at least one sample".into()));
    }
    let chol = spec
        .precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("precision is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = spec.d;
    let mut out = DMatrix::zeros(d, m);
    for j in 0..m {
        let xi = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = lt
            .solve_upper_triangular(&xi)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        out.column_mut(j).copy_from(&x);
    }
    SampleMatrix::new(out)
}

/// One step of the reference EM sampler
/// `X(n+1) = X(n) - ε·Π X(n) + sqrt(2ε)·Ξ(n)` for the known target.
pub fn reference_em_gaussian_step(
    spec: &PeriodicGaussianSpec,
    epsilon: f64,
    x: &mut DVector<f64>,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "step size must be positive, got {epsilon}"
        )));
    }
    if epsilon > spec.max_em_step() {
        return Err(Error::Parameter(format!(
            "step size {epsilon} makes the central weight negative (max {})",
            spec.max_em_step()
        )));
    }
    if x.len() != spec.d {
        return Err(Error::Data(format!(
            "state has dimension {}, expected {}",
            x.len(),
            spec.d
        )));
    }
    let drift = &spec.precision * &*x;
    let scale = (2.0 * epsilon).sqrt();
    for i in 0..spec.d {
        x[i] += -epsilon * drift[i] + scale * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::empirical_covariance;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tridiagonal_covariance_matches_quoted_values() {
        let spec = PeriodicGaussianSpec::tridiagonal(101).unwrap();
        assert_eq!(spec.precision()[(0, 0)], 2.0);
        assert_eq!(spec.precision()[(0, 1)], -0.5);
        assert_eq!(spec.precision()[(0, 100)], -0.5);
        let c = spec.covariance().unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.58, epsilon = 0.005);
        assert_abs_diff_eq!(c[(0, 1)], 0.15, epsilon = 0.005);
        assert_abs_diff_eq!(c[(0, 2)], 0.04, epsilon = 0.005);
        assert_abs_diff_eq!(c[(0, 3)], 0.01, epsilon = 0.005);
    }

    #[test]
    fn sampler_reproduces_covariance_lags() {
        let spec = PeriodicGaussianSpec::tridiagonal(16).unwrap();
        let m = 100_000;
        let samples = sample_periodic_gaussian(&spec, m, 42).unwrap();
        let cov = empirical_covariance(samples.matrix()).unwrap();
        let c = spec.covariance().unwrap();
        let tol = |a: usize, b: usize| {
            5.0 * ((c[(a, a)] * c[(b, b)] + c[(a, b)] * c[(a, b)]) / m as f64).sqrt()
        };
        for lag in 0..4 {
            let (a, b) = (0, lag);
            assert!(
                (cov[(a, b)] - c[(a, b)]).abs() < tol(a, b),
                "lag {lag}: {} vs {}",
                cov[(a, b)],
                c[(a, b)]
            );
        }
    }

    #[test]
    fn identity_precision_gives_iid_standard_normals() {
        let spec = PeriodicGaussianSpec::from_precision(DMatrix::identity(5, 5)).unwrap();
        let m = 50_000;
        let samples = sample_periodic_gaussian(&spec, m, 7).unwrap();
        let cov = empirical_covariance(samples.matrix()).unwrap();
        let tol = 5.0 / (m as f64).sqrt() * 1.5;
        for a in 0..5 {
            for b in 0..5 {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((cov[(a, b)] - expected).abs() < tol);
            }
        }
    }

    #[test]
    fn em_step_rejects_negative_central_weight() {
        let spec = PeriodicGaussianSpec::tridiagonal(8).unwrap();
        // max step is 1/2 for the unit mesh
        assert_abs_diff_eq!(spec.max_em_step(), 0.5, epsilon = 1e-15);
        let mut x = DVector::zeros(8);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(reference_em_gaussian_step(&spec, 0.6, &mut x, &mut rng).is_err());
        assert!(reference_em_gaussian_step(&spec, 0.5, &mut x, &mut rng).is_ok());
    }

    #[test]
    fn em_step_with_zero_central_weight_averages_neighbors() {
        let spec = PeriodicGaussianSpec::tridiagonal(6).unwrap();
        let eps = spec.max_em_step(); // w_0 = 0
        // Two runs with identical noise; the difference isolates the
        // deterministic stencil.
        let run = |x0: DVector<f64>| {
            let mut x = x0;
            let mut rng = ChaCha12Rng::seed_from_u64(5);
            reference_em_gaussian_step(&spec, eps, &mut x, &mut rng).unwrap();
            x
        };
        let mut e1 = DVector::zeros(6);
        e1[1] = 1.0; // neighbor of coordinate 0 and 2
        let delta = run(e1) - run(DVector::zeros(6));
        let w_side = eps / 2.0;
        assert_abs_diff_eq!(delta[0], w_side, epsilon = 1e-14);
        assert_abs_diff_eq!(delta[2], w_side, epsilon = 1e-14);
        assert_abs_diff_eq!(delta[1], 0.0, epsilon = 1e-14); // w_0 = 0
    }

    #[test]
    fn em_step_decouples_for_huge_mesh() {
        // h -> infinity: neighbor weights vanish, leaving an OU step.
        let spec = PeriodicGaussianSpec::laplacian(6, 6e9).unwrap();
        let eps = 0.25;
        let run = |x0: DVector<f64>| {
            let mut x = x0;
            let mut rng = ChaCha12Rng::seed_from_u64(9);
            reference_em_gaussian_step(&spec, eps, &mut x, &mut rng).unwrap();
            x
        };
        let mut e1 = DVector::zeros(6);
        e1[1] = 1.0;
        let delta = run(e1) - run(DVector::zeros(6));
        assert!(delta[0].abs() < 1e-15);
        assert!(delta[2].abs() < 1e-15);
        assert_abs_diff_eq!(delta[1], 1.0 - eps, epsilon = 1e-9);
    }

    #[test]
    fn em_long_run_covariance_approaches_target() {
        // The discrete chain has stationary covariance
        // Q diag(2ε/(1-(1-ελ_k)²)) Qᵀ -> C as ε -> 0; check both.
        let spec = PeriodicGaussianSpec::tridiagonal(8).unwrap();
        let eps = 0.05;
        let eig = spec.precision().clone().symmetric_eigen();
        let mut discrete = DMatrix::<f64>::zeros(8, 8);
        for k in 0..8 {
            let lambda = eig.eigenvalues[k];
            let sigma = 2.0 * eps / (1.0 - (1.0 - eps * lambda).powi(2));
            let q = eig.eigenvectors.column(k);
            for a in 0..8 {
                for b in 0..8 {
                    discrete[(a, b)] += sigma * q[a] * q[b];
                }
            }
        }
        let mut x = DVector::zeros(8);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let burn = 2_000;
        let n = 400_000;
        for _ in 0..burn {
            reference_em_gaussian_step(&spec, eps, &mut x, &mut rng).unwrap();
        }
        let mut acc = DMatrix::<f64>::zeros(8, 8);
        for _ in 0..n {
            reference_em_gaussian_step(&spec, eps, &mut x, &mut rng).unwrap();
            for a in 0..8 {
                for b in 0..8 {
                    acc[(a, b)] += x[a] * x[b];
                }
            }
        }
        acc /= n as f64;
        let c = spec.covariance().unwrap();
        for a in 0..8 {
            for b in 0..8 {
                assert!(
                    (acc[(a, b)] - discrete[(a, b)]).abs() < 0.03,
                    "discrete stationary mismatch at ({a},{b}): {} vs {}",
                    acc[(a, b)],
                    discrete[(a, b)]
                );
                assert!(
                    (acc[(a, b)] - c[(a, b)]).abs() < 0.05,
                    "target covariance mismatch at ({a},{b}): {} vs {}",
                    acc[(a, b)],
                    c[(a, b)]
                );
            }
        }
    }
}
