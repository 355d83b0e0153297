//! Double-well SDE trajectories.
//!
//! The scalar process `dZ = (-Z³ + Z) dt + sqrt(0.2) dB`, `Z(0) ~ N(0,1)`,
//! has a bimodal invariant density with modes at ±1. Trajectories are
//! integrated with a small-step EM scheme and recorded every `Δt = 5` over
//! `k = 100` intervals; each recorded trajectory, including the initial
//! state, is one augmented sample in dimension `k + 1 = 101`.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::SampleMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BimodalSdeSpec {
    /// Squared noise intensity (0.2 in the standard configuration).
    pub noise_intensity: f64,
    /// Recording interval Δt.
    pub record_interval: f64,
    /// Number of recorded intervals `k`; trajectories live in `R^{k+1}`.
    pub intervals: usize,
    /// EM integration step; must divide the recording interval.
    pub fine_step: f64,
}

impl Default for BimodalSdeSpec {
    fn default() -> Self {
        Self {
            noise_intensity: 0.2,
            record_interval: 5.0,
            intervals: 100,
            fine_step: 1e-3,
        }
    }
}

impl BimodalSdeSpec {
    pub fn validate(&self) -> Result<usize> {
        if !self.noise_intensity.is_finite() || self.noise_intensity <= 0.0 {
            return Err(Error::Parameter("noise intensity must be positive".into()));
        }
        if self.intervals == 0 {
            return Err(Error::Parameter("need at least one interval".into()));
        }
        if !self.fine_step.is_finite() || self.fine_step <= 0.0 {
            return Err(Error::Parameter("fine step must be positive".into()));
        }
        let steps = (self.record_interval / self.fine_step).round();
        if steps < 1.0 || (steps * self.fine_step - self.record_interval).abs()
            > 1e-9 * self.record_interval
        {
            return Err(Error::Parameter(format!(
                "fine step {} does not divide the recording interval {}",
                self.fine_step, self.record_interval
            )));
        }
        Ok(steps as usize)
    }

    /// Augmented state dimension `k + 1`.
    pub fn dim(&self) -> usize {
        self.intervals + 1
    }
}

/// Drift `-z³ + z` of the double well.
pub fn double_well_drift(z: f64) -> f64 {
    z - z * z * z
}

/// Unnormalized invariant density `exp(-2 V(z)/σ²)` with
/// `V(z) = z⁴/4 - z²/2`.
pub fn double_well_density(z: f64, noise_intensity: f64) -> f64 {
    let v = 0.25 * z.powi(4) - 0.5 * z * z;
    (-2.0 * v / noise_intensity).exp()
}

/// Integrates `m` independent trajectories and stacks them as columns of a
/// `(k+1) × m` sample matrix. Trajectory `j` uses stream `j` of the seed.
pub fn bimodal_trajectories(
    spec: &BimodalSdeSpec,
    m: usize,
    seed: u64,
) -> Result<SampleMatrix> {
    if m == 0 {
        return Err(Error::Parameter("need at least one trajectory".into()));
    }
    let fine_per_record = spec.validate()?;
    let d = spec.dim();
    let noise_scale = (spec.noise_intensity * spec.fine_step).sqrt();
    let columns: Vec<Vec<f64>> = (0..m as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(j);
            let mut z: f64 = rng.sample(StandardNormal);
            let mut column = Vec::with_capacity(d);
            column.push(z);
            for _ in 0..spec.intervals {
                for _ in 0..fine_per_record {
                    let xi: f64 = rng.sample(StandardNormal);
                    z += double_well_drift(z) * spec.fine_step + noise_scale * xi;
                }
                column.push(z);
            }
            column
        })
        .collect();
    let mut out = DMatrix::zeros(d, m);
    for (j, column) in columns.iter().enumerate() {
        out.column_mut(j).copy_from_slice(column);
    }
    SampleMatrix::new(out)
}
