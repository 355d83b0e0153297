//! Two-scale Lorenz-96 dynamics and closure-term extraction.
//!
//! Slow variables `z_k`, `k = 1..K`, couple to `J` fast variables each:
//!
//! ```text
//! dz_k/dt = -z_{k-1}(z_{k-2} - z_{k+1}) - z_k + F - (hc/b) Σ_j y_{j,k}
//! dy_{j,k}/dt = -c b y_{j+1,k}(y_{j+2,k} - y_{j-1,k}) - c y_{j,k} + (hc/b) z_k
//! ```
//!
//! with periodic conventions `z_{k+K} = z_k`, `y_{j,k+K} = y_{j,k}`,
//! `y_{j+J,k} = y_{j,k+1}` — the fast variables form one ring of length
//! `J·K`. The system is integrated with RK4 and the slow state recorded
//! every `record_interval`. Closure samples are the Euler residuals
//!
//! ```text
//! ψ^(i) = (z^(i+1) - z^(i))/Δt - G(z^(i)),
//! ```
//!
//! where `G` is the truncated (uncoupled) drift, stacked with `z^(i)` into
//! training pairs for conditional sampling.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::data::SampleMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Lorenz96Spec {
    /// Number of slow variables.
    pub k: usize,
    /// Fast variables per slow variable.
    pub j: usize,
    /// External forcing F.
    pub forcing: f64,
    /// Time-scale separation c.
    pub c: f64,
    /// Amplitude separation b.
    pub b: f64,
    /// Coupling strength h.
    pub h_coupling: f64,
    /// RK4 step δt.
    pub rk4_step: f64,
    /// Recording interval Δt (a multiple of δt).
    pub record_interval: f64,
    /// Recording intervals discarded before collecting samples.
    pub spin_up_records: usize,
}

impl Default for Lorenz96Spec {
    fn default() -> Self {
        Self {
            k: 12,
            j: 24,
            forcing: 20.0,
            c: 10.0,
            b: 10.0,
            h_coupling: 1.0,
            rk4_step: 5e-4,
            record_interval: 5e-3,
            spin_up_records: 10_000,
        }
    }
}

impl Lorenz96Spec {
    pub fn validate(&self) -> Result<usize> {
        if self.k < 4 {
            return Err(Error::Parameter(format!(
                "Lorenz-96 needs at least 4 slow variables, got {}",
                self.k
            )));
        }
        if self.j < 3 {
            return Err(Error::Parameter(format!(
                "Lorenz-96 needs at least 3 fast variables per slow one, got {}",
                self.j
            )));
        }
        if !self.rk4_step.is_finite() || self.rk4_step <= 0.0 {
            return Err(Error::Parameter("integration step must be positive".into()));
        }
        let per_record = (self.record_interval / self.rk4_step).round();
        if per_record < 1.0
            || (per_record * self.rk4_step - self.record_interval).abs()
                > 1e-9 * self.record_interval
        {
            return Err(Error::Parameter(format!(
                "integration step {} does not divide the recording interval {}",
                self.rk4_step, self.record_interval
            )));
        }
        Ok(per_record as usize)
    }
}

/// Truncated slow drift `G_k(z) = -z_{k-1}(z_{k-2} - z_{k+1}) - z_k + F`
/// with periodic indexing.
pub fn truncated_drift(z: &[f64], forcing: f64) -> Vec<f64> {
    let k = z.len();
    (0..k)
        .map(|i| {
            let zm1 = z[(i + k - 1) % k];
            let zm2 = z[(i + k - 2) % k];
            let zp1 = z[(i + 1) % k];
            -zm1 * (zm2 - zp1) - z[i] + forcing
        })
        .collect()
}

struct L96State {
    z: Vec<f64>,
    y: Vec<f64>,
}

fn rhs(spec: &Lorenz96Spec, z: &[f64], y: &[f64], dz: &mut [f64], dy: &mut [f64]) {
    let k = spec.k;
    let j = spec.j;
    let n_fast = k * j;
    let coupling = spec.h_coupling * spec.c / spec.b;
    for i in 0..k {
        let zm1 = z[(i + k - 1) % k];
        let zm2 = z[(i + k - 2) % k];
        let zp1 = z[(i + 1) % k];
        let fast_sum: f64 = y[i * j..(i + 1) * j].iter().sum();
        dz[i] = -zm1 * (zm2 - zp1) - z[i] + spec.forcing - coupling * fast_sum;
    }
    let cb = spec.c * spec.b;
    for i in 0..n_fast {
        let yp1 = y[(i + 1) % n_fast];
        let yp2 = y[(i + 2) % n_fast];
        let ym1 = y[(i + n_fast - 1) % n_fast];
        dy[i] = -cb * yp1 * (yp2 - ym1) - spec.c * y[i] + coupling * z[i / j];
    }
}

fn rk4_step(spec: &Lorenz96Spec, state: &mut L96State, scratch: &mut Rk4Scratch) {
    let dt = spec.rk4_step;
    let k = spec.k;
    let n_fast = k * spec.j;
    let s = scratch;

    rhs(spec, &state.z, &state.y, &mut s.k1z, &mut s.k1y);
    for i in 0..k {
        s.tz[i] = state.z[i] + 0.5 * dt * s.k1z[i];
    }
    for i in 0..n_fast {
        s.ty[i] = state.y[i] + 0.5 * dt * s.k1y[i];
    }
    rhs(spec, &s.tz, &s.ty, &mut s.k2z, &mut s.k2y);
    for i in 0..k {
        s.tz[i] = state.z[i] + 0.5 * dt * s.k2z[i];
    }
    for i in 0..n_fast {
        s.ty[i] = state.y[i] + 0.5 * dt * s.k2y[i];
    }
    rhs(spec, &s.tz, &s.ty, &mut s.k3z, &mut s.k3y);
    for i in 0..k {
        s.tz[i] = state.z[i] + dt * s.k3z[i];
    }
    for i in 0..n_fast {
        s.ty[i] = state.y[i] + dt * s.k3y[i];
    }
    rhs(spec, &s.tz, &s.ty, &mut s.k4z, &mut s.k4y);

    let w = dt / 6.0;
    for i in 0..k {
        state.z[i] += w * (s.k1z[i] + 2.0 * s.k2z[i] + 2.0 * s.k3z[i] + s.k4z[i]);
    }
    for i in 0..n_fast {
        state.y[i] += w * (s.k1y[i] + 2.0 * s.k2y[i] + 2.0 * s.k3y[i] + s.k4y[i]);
    }
}

struct Rk4Scratch {
    k1z: Vec<f64>,
    k2z: Vec<f64>,
    k3z: Vec<f64>,
    k4z: Vec<f64>,
    k1y: Vec<f64>,
    k2y: Vec<f64>,
    k3y: Vec<f64>,
    k4y: Vec<f64>,
    tz: Vec<f64>,
    ty: Vec<f64>,
}

impl Rk4Scratch {
    fn new(k: usize, n_fast: usize) -> Self {
        Self {
            k1z: vec![0.0; k],
            k2z: vec![0.0; k],
            k3z: vec![0.0; k],
            k4z: vec![0.0; k],
            k1y: vec![0.0; n_fast],
            k2y: vec![0.0; n_fast],
            k3y: vec![0.0; n_fast],
            k4y: vec![0.0; n_fast],
            tz: vec![0.0; k],
            ty: vec![0.0; n_fast],
        }
    }
}

/// Generated training set: stacked `(z, ψ)` columns plus the pooled
/// climatic standard deviations used for the scaled metric.
#[derive(Debug, Clone)]
pub struct Lorenz96Dataset {
    /// `2K × (m-1)` matrix; rows `0..K` hold `z^(i)`, rows `K..2K` hold
    /// `ψ^(i)`.
    pub samples: SampleMatrix,
    pub sigma_z: f64,
    pub sigma_psi: f64,
    /// Fast-variable standard deviation (amplitude diagnostic).
    pub sigma_fast: f64,
}

/// Integrates the full two-scale system, records `m` slow snapshots after
/// the spin-up, extracts `m-1` closure samples, and reports climatic
/// standard deviations.
pub fn lorenz96_generate(spec: &Lorenz96Spec, m: usize, seed: u64) -> Result<Lorenz96Dataset> {
    if m < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 recorded snapshots, got {m}"
        )));
    }
    let per_record = spec.validate()?;
    let k = spec.k;
    let n_fast = k * spec.j;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut state = L96State {
        z: (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        y: (0..n_fast)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / spec.b)
            .collect(),
    };
    let mut scratch = Rk4Scratch::new(k, n_fast);
    let check = |z: &[f64], label: &str| -> Result<()> {
        if z.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err(Error::Numerical(format!(
                "Lorenz-96 integration blew up during {label}"
            )));
        }
        Ok(())
    };
    for _ in 0..spec.spin_up_records {
        for _ in 0..per_record {
            rk4_step(spec, &mut state, &mut scratch);
        }
        check(&state.z, "spin-up")?;
    }
    let mut records: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut fast_samples: Vec<f64> = Vec::with_capacity(m);
    records.push(state.z.clone());
    fast_samples.extend(state.y.iter().step_by(7).copied());
    for _ in 1..m {
        for _ in 0..per_record {
            rk4_step(spec, &mut state, &mut scratch);
        }
        check(&state.z, "recording")?;
        records.push(state.z.clone());
        fast_samples.extend(state.y.iter().step_by(7).copied());
    }

    let dt = spec.record_interval;
    let mut stacked = DMatrix::zeros(2 * k, m - 1);
    for i in 0..m - 1 {
        let g = truncated_drift(&records[i], spec.forcing);
        for a in 0..k {
            stacked[(a, i)] = records[i][a];
            stacked[(k + a, i)] = (records[i + 1][a] - records[i][a]) / dt - g[a];
        }
    }
    fn pooled_std(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
    let z_entries: Vec<f64> = (0..m - 1)
        .flat_map(|i| records[i].iter().copied())
        .collect();
    let psi_entries: Vec<f64> = (0..m - 1)
        .flat_map(|i| (0..k).map(move |a| (i, a)))
        .map(|(i, a)| stacked[(k + a, i)])
        .collect();
    let sigma_z = pooled_std(&z_entries);
    let sigma_psi = pooled_std(&psi_entries);
    let sigma_fast = pooled_std(&fast_samples);
    Ok(Lorenz96Dataset {
        samples: SampleMatrix::new(stacked)?,
        sigma_z,
        sigma_psi,
        sigma_fast,
    })
}
