//! The five subcommands: dataset generation, model fitting, sampling,
//! closure simulation, and diagnostics.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use lsbs::bridge::{BridgeModel, DEFAULT_MAX_ITER, DEFAULT_SINKHORN_TOL};
use lsbs::data::{Metric, SampleMatrix};
use lsbs::diagnostics::{
    autocovariance_rows, centered_rows, empirical_covariance, histogram, DiagnosticsReport,
    Histogram, DEFAULT_HISTOGRAM_BINS,
};
use lsbs::error::{Error, Result};
use lsbs::io::{
    file_digest, read_dataset, write_dataset, write_dataset_csv, DatasetMeta, ModelFile,
};
use lsbs::kde::{KdeModel, LocalizedKde};
use lsbs::localize::{
    closure_pair_sets, full_window_sets, periodic_stencil_sets, temporal_markov_sets,
    DependencySet, LocalizedBridgeModel,
};
use lsbs::sampler::{
    closure_simulate, generate, ChainMode, ClosureConfig, SamplerConfig, SamplerModel, Scheme,
};
use lsbs::testbed::bimodal::{bimodal_trajectories, BimodalSdeSpec};
use lsbs::testbed::gauss::{sample_periodic_gaussian, PeriodicGaussianSpec};
use lsbs::testbed::lorenz96::{lorenz96_generate, truncated_drift, Lorenz96Spec};

use crate::config::ExperimentConfig;

fn meta_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    dataset.with_file_name(name)
}

fn csv_prefix(out: &Path) -> PathBuf {
    out.with_extension("")
}

/// `gen`: write a training dataset plus its metadata sidecar.
pub fn cmd_gen(config: &ExperimentConfig) -> Result<()> {
    let out = config.require_out()?;
    let experiment = config
        .experiment
        .as_deref()
        .ok_or_else(|| Error::Parameter("missing experiment name".into()))?;
    let seed = config.seed.unwrap_or(0);
    let mut meta = DatasetMeta {
        experiment: experiment.to_string(),
        seed,
        ..Default::default()
    };
    let data: DMatrix<f64> = match experiment {
        "gauss_tridiag" | "gauss_laplacian" => {
            let d = config.d.unwrap_or(101);
            let m = config.m.unwrap_or(100);
            let spec = if experiment == "gauss_tridiag" {
                PeriodicGaussianSpec::tridiagonal(d)?
            } else {
                let length = config.length.unwrap_or(d as f64);
                meta.params.insert("length".into(), length);
                PeriodicGaussianSpec::laplacian(d, length)?
            };
            meta.params.insert("mesh".into(), spec.mesh());
            sample_periodic_gaussian(&spec, m, seed)?.matrix().clone()
        }
        "bimodal" => {
            let spec = BimodalSdeSpec::default();
            let m = config.m.unwrap_or(1000);
            meta.params.insert("noise_intensity".into(), spec.noise_intensity);
            meta.params.insert("record_interval".into(), spec.record_interval);
            meta.params.insert("intervals".into(), spec.intervals as f64);
            meta.params.insert("fine_step".into(), spec.fine_step);
            bimodal_trajectories(&spec, m, seed)?.matrix().clone()
        }
        "lorenz96" => {
            let mut spec = Lorenz96Spec::default();
            if let Some(f) = config.forcing {
                spec.forcing = f;
            }
            if let Some(s) = config.spin_up {
                spec.spin_up_records = s;
            }
            // `m` counts the stacked (z, psi) pairs actually written.
            let pairs = config.m.unwrap_or(5000);
            let dataset = lorenz96_generate(&spec, pairs + 1, seed)?;
            meta.sigma_z = Some(dataset.sigma_z);
            meta.sigma_psi = Some(dataset.sigma_psi);
            meta.params.insert("k".into(), spec.k as f64);
            meta.params.insert("j".into(), spec.j as f64);
            meta.params.insert("forcing".into(), spec.forcing);
            meta.params.insert("record_interval".into(), spec.record_interval);
            meta.params.insert("rk4_step".into(), spec.rk4_step);
            dataset.samples.matrix().clone()
        }
        other => {
            return Err(Error::Parameter(format!(
                "unknown experiment '{other}' (expected gauss_tridiag, gauss_laplacian, bimodal, or lorenz96)"
            )));
        }
    };
    meta.d = data.nrows() as u64;
    meta.m = data.ncols() as u64;
    write_dataset(out, &data)?;
    meta.write(&meta_path(out))?;
    if config.csv.unwrap_or(false) {
        write_dataset_csv(&out.with_extension("csv"), &data)?;
    }
    println!(
        "wrote {} ({} x {}) and {}",
        out.display(),
        data.nrows(),
        data.ncols(),
        meta_path(out).display()
    );
    Ok(())
}

fn build_sets(config: &ExperimentConfig, d: usize) -> Result<Vec<DependencySet>> {
    let family = config.sets.as_deref().unwrap_or("stencil");
    match family {
        "stencil" => periodic_stencil_sets(d, config.radius.unwrap_or(1)),
        "temporal" => {
            let s = config.s.unwrap_or(1);
            if !d.is_multiple_of(s) || d / s < 3 {
                return Err(Error::Parameter(format!(
                    "temporal sets need d = (k+1)*s with k >= 2; d = {d}, s = {s}"
                )));
            }
            temporal_markov_sets(s, d / s - 1)
        }
        "closure" => {
            if !d.is_multiple_of(2) {
                return Err(Error::Parameter(format!(
                    "closure sets need an even stacked dimension, got {d}"
                )));
            }
            closure_pair_sets(d / 2)
        }
        "full" => full_window_sets(d),
        other => Err(Error::Parameter(format!(
            "unknown set family '{other}' (expected stencil, temporal, closure, or full)"
        ))),
    }
}

fn resolve_metric(config: &ExperimentConfig, d: usize, data_path: &Path) -> Result<Metric> {
    match config.metric.as_deref().unwrap_or("auto") {
        "unit" => Ok(Metric::euclidean(d)),
        "auto" => {
            let meta = meta_path(data_path);
            if meta.exists() {
                let meta = DatasetMeta::read(&meta)?;
                if let (Some(sz), Some(sp)) = (meta.sigma_z, meta.sigma_psi) {
                    if d.is_multiple_of(2) {
                        let k = d / 2;
                        let mut scales = vec![sz; k];
                        scales.extend(std::iter::repeat_n(sp, k));
                        return Metric::new(scales);
                    }
                }
            }
            Ok(Metric::euclidean(d))
        }
        list => {
            let scales: std::result::Result<Vec<f64>, _> =
                list.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let scales = scales.map_err(|_| {
                Error::Parameter(format!("cannot parse metric scales from '{list}'"))
            })?;
            if scales.len() != d {
                return Err(Error::Parameter(format!(
                    "{} metric scales for dimension {d}",
                    scales.len()
                )));
            }
            Metric::new(scales)
        }
    }
}

/// `fit`: fit per-coordinate Sinkhorn weights and persist the model.
pub fn cmd_fit(config: &ExperimentConfig) -> Result<()> {
    let data_path = config.require_data()?;
    let out = config.require_out()?;
    let raw = read_dataset(data_path)?;
    let samples = SampleMatrix::new(raw)?;
    let d = samples.dim();
    let sets = build_sets(config, d)?;
    let metric = resolve_metric(config, d, data_path)?;
    let epsilon = config
        .epsilon
        .ok_or_else(|| Error::Parameter("missing bandwidth (--epsilon)".into()))?;
    let tol = config.sinkhorn_tol.unwrap_or(DEFAULT_SINKHORN_TOL);
    let max_iter = config.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    let model = LocalizedBridgeModel::fit(samples, sets, epsilon, metric, tol, max_iter)?;
    let digest = file_digest(data_path)?;
    ModelFile::from_model(&model, digest).write(out)?;
    println!(
        "fitted {} local bridges (d = {}, m = {}) -> {}",
        model.sets().count(),
        model.dim(),
        model.len(),
        out.display()
    );
    Ok(())
}

fn load_model(config: &ExperimentConfig) -> Result<(LocalizedBridgeModel, SampleMatrix)> {
    let data_path = config.require_data()?;
    let model_path = config.require_model()?;
    let file = ModelFile::read(model_path)?;
    let digest = file_digest(data_path)?;
    file.validate_digest(&digest, data_path)?;
    let raw = read_dataset(data_path)?;
    let samples = SampleMatrix::new(raw)?;
    let model = file.into_model(samples.clone())?;
    Ok((model, samples))
}

fn sampler_model_for_scheme(
    scheme: Scheme,
    model: LocalizedBridgeModel,
) -> Result<SamplerModel> {
    match scheme {
        Scheme::LocalizedEm | Scheme::LocalizedSplitStep | Scheme::LocalizedDataAware => {
            Ok(SamplerModel::Localized(model))
        }
        Scheme::LocalizedKde => {
            let sets: Vec<DependencySet> = model.sets().cloned().collect();
            let kde = KdeModel::new(model.data().clone(), model.epsilon(), model.metric().clone())?;
            Ok(SamplerModel::LocalizedKde(LocalizedKde::new(kde, sets)?))
        }
        Scheme::KdeSplitStep => {
            let kde = KdeModel::new(model.data().clone(), model.epsilon(), model.metric().clone())?;
            Ok(SamplerModel::Kde(kde))
        }
        Scheme::Em | Scheme::SplitStep | Scheme::DataAware => {
            let d = model.dim();
            let full: Vec<usize> = (0..d).collect();
            let set = model
                .sets()
                .find(|s| s.members() == full.as_slice())
                .ok_or_else(|| {
                    Error::Parameter(format!(
                        "scheme '{}' needs a model fitted with the full-window set family",
                        scheme.name()
                    ))
                })?
                .clone();
            let weights = model.local_weights(set.alpha())?.clone();
            let bridge = BridgeModel::from_parts(
                model.data().clone(),
                model.epsilon(),
                model.metric().clone(),
                weights,
            )?;
            Ok(SamplerModel::Bridge(bridge))
        }
    }
}

fn write_report_csvs(prefix: &Path, report: &DiagnosticsReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let to_io = |path: &Path, e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };

    let rows_path = prefix.with_file_name(format!(
        "{}_covariance_rows.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    let mut text = String::new();
    for i in 0..report.centered_rows.nrows() {
        let row: Vec<String> = (0..report.centered_rows.ncols())
            .map(|j| format!("{}", report.centered_rows[(i, j)]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(&rows_path, text).map_err(|e| to_io(&rows_path, e))?;
    written.push(rows_path);

    let mean_path = prefix.with_file_name(format!(
        "{}_covariance_row_mean.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    let text: String = report
        .row_mean
        .iter()
        .map(|v| format!("{v}\n"))
        .collect();
    std::fs::write(&mean_path, text).map_err(|e| to_io(&mean_path, e))?;
    written.push(mean_path);

    let hist_path = prefix.with_file_name(format!(
        "{}_histogram.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    written.push(write_histogram_csv(&hist_path, &report.histogram)?);

    let auto_path = prefix.with_file_name(format!(
        "{}_autocovariance.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    let mut text = String::from("tau,autocovariance\n");
    for (tau, value) in report.autocov.iter().enumerate() {
        text.push_str(&format!("{tau},{value}\n"));
    }
    std::fs::write(&auto_path, text).map_err(|e| to_io(&auto_path, e))?;
    written.push(auto_path);

    let rate_path = prefix.with_file_name(format!(
        "{}_transition_rate.csv",
        prefix.file_name().unwrap_or_default().to_string_lossy()
    ));
    std::fs::write(&rate_path, format!("transition_rate\n{}\n", report.transition_rate))
        .map_err(|e| to_io(&rate_path, e))?;
    written.push(rate_path);
    Ok(written)
}

fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<PathBuf> {
    let density = hist.density();
    let mut text = String::from("left,right,count,density\n");
    for (i, &count) in hist.counts.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{count},{}\n",
            hist.edges[i],
            hist.edges[i + 1],
            density[i]
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(path.to_path_buf())
}

/// `sample`: generate new samples from a fitted model and report
/// diagnostics next to them.
pub fn cmd_sample(config: &ExperimentConfig) -> Result<()> {
    let out = config.require_out()?;
    let (model, _samples) = load_model(config)?;
    let scheme = Scheme::parse(config.scheme.as_deref().unwrap_or("localized_split_step"))?;
    let sampler_model = sampler_model_for_scheme(scheme, model)?;
    let mut sampler_config = SamplerConfig::new(
        scheme,
        config.n_c.unwrap_or(100),
        config.n.unwrap_or(1000),
        config.seed.unwrap_or(0),
    );
    sampler_config.mode = match config.mode.as_deref().unwrap_or("restart") {
        "restart" => ChainMode::Restart,
        "long_chain" => ChainMode::LongChain,
        other => {
            return Err(Error::Parameter(format!(
                "unknown chain mode '{other}' (expected restart or long_chain)"
            )));
        }
    };
    let generated = generate(&sampler_model, &sampler_config)?;
    write_dataset(out, &generated)?;
    if config.csv.unwrap_or(false) {
        write_dataset_csv(&out.with_extension("csv"), &generated)?;
    }
    println!(
        "wrote {} generated samples ({} x {}) -> {}",
        generated.ncols(),
        generated.nrows(),
        generated.ncols(),
        out.display()
    );
    if generated.ncols() >= 2 {
        let bins = config.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
        let tau_max = config.tau_max.unwrap_or(50);
        let report = DiagnosticsReport::from_samples(&generated, bins, tau_max)?;
        for path in write_report_csvs(&csv_prefix(out), &report)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// `closure`: integrate the reduced model, sampling the closure term
/// conditioned on the current state at every step.
pub fn cmd_closure(config: &ExperimentConfig) -> Result<()> {
    let out = config.require_out()?;
    let (model, samples) = load_model(config)?;
    let d = model.dim();
    if !d.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "closure simulation needs a stacked (z, psi) model; dimension {d} is odd"
        )));
    }
    let k = d / 2;
    let scheme = Scheme::parse(config.scheme.as_deref().unwrap_or("localized_split_step"))?;
    let sampler_model = sampler_model_for_scheme(scheme, model)?;
    let forcing = config.forcing.unwrap_or(20.0);
    let z0: Vec<f64> = (0..k).map(|i| samples.matrix()[(i, 0)]).collect();
    let mut closure_config = ClosureConfig::new(
        config.dt.unwrap_or(5e-3),
        config.n_steps.unwrap_or(10_000),
        config.n_c.unwrap_or(100),
        config.seed.unwrap_or(0),
    );
    closure_config.scheme = scheme;
    closure_config.use_closure = config.use_closure.unwrap_or(true);
    let drift = move |z: &[f64]| truncated_drift(z, forcing);
    let traj = closure_simulate(&sampler_model, &drift, &z0, &closure_config)?;
    write_dataset(out, &traj)?;
    if config.csv.unwrap_or(false) {
        write_dataset_csv(&out.with_extension("csv"), &traj)?;
    }
    println!(
        "wrote closure trajectory ({} x {}) -> {}",
        traj.nrows(),
        traj.ncols(),
        out.display()
    );

    // Trajectory statistics: columns are time points, rows coordinates.
    let bins = config.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
    let tau_max = config.tau_max.unwrap_or(400).min(traj.ncols() - 1);
    let cov = empirical_covariance(&traj)?;
    let (rows, row_mean) = centered_rows(&cov)?;
    let entries: Vec<f64> = traj.iter().copied().collect();
    let hist = histogram(&entries, bins, None)?;
    let autocov = autocovariance_rows(&traj, tau_max)?;
    let report = DiagnosticsReport {
        centered_rows: rows,
        row_mean,
        histogram: hist,
        autocov,
        transition_rate: 0.0,
    };
    for path in write_report_csvs(&csv_prefix(out), &report)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// `diag`: report statistics of an existing dataset.
pub fn cmd_diag(config: &ExperimentConfig) -> Result<()> {
    let data_path = config.require_data()?;
    let out = config
        .out
        .clone()
        .unwrap_or_else(|| data_path.to_path_buf());
    let data = read_dataset(data_path)?;
    let bins = config.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
    let tau_max = config.tau_max.unwrap_or(50);
    let report = DiagnosticsReport::from_samples(&data, bins, tau_max)?;
    println!("transition_rate = {}", report.transition_rate);
    for path in write_report_csvs(&csv_prefix(&out), &report)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
