//! Experiment drivers: grid expansion, parallel trials and CSV output.

pub mod config;
pub mod runners;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{DistError, Result};
use crate::numkit::{derive_stream, stream_seed, RandomStream};

pub use config::{ExperimentConfig, ExperimentKind, SWEEP_KEYS};

/// One output line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub sweep_values: Vec<f64>,
    pub trial: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Rows of a finished run together with the config that produced them.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
}

/// Seed of a trial. Shared across grid points so that arms and sweep values
/// are compared on the same draws.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    stream_seed(base_seed, trial as u64)
}

/// Stream of a trial; its seed is [`trial_seed`].
pub fn trial_stream(base_seed: u64, trial: usize) -> RandomStream {
    derive_stream(base_seed, trial as u64)
}

fn run_trial(cfg: &ExperimentConfig, stream: &RandomStream) -> Result<runners::Metrics> {
    use ExperimentKind::*;
    match cfg.experiment {
        BayesVsOnehot | ClassSeparation => runners::bayes_vs_onehot(cfg, stream),
        Distortion => runners::distortion(cfg, stream),
        BiasVarianceGrid => runners::bias_variance_grid(cfg, stream),
        TreeDepth => runners::tree_depth(cfg, stream),
        VarianceCheck => runners::variance_check(cfg, stream),
        DoubleDistill => runners::double_distill(cfg, stream),
    }
}

/// Runs every (grid point, trial) pair on `jobs` threads. Output order is
/// grid-major then trial, whatever the completion order.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    config.validate()?;
    let grid = config.grid()?;
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..config.trials).map(move |t| (g, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DistError::config(format!("cannot start thread pool: {e}")))?;
    let results: Vec<Result<runners::Metrics>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(g, t)| {
                run_trial(&grid[g].1, &trial_stream(config.base_seed, t))
            })
            .collect()
    });

    let mut rows = Vec::new();
    for (&(g, t), metrics) in tasks.iter().zip(results) {
        for (metric, value) in metrics? {
            if !value.is_finite() {
                return Err(DistError::param(format!(
                    "metric {metric} is not finite at grid point {g}, trial {t}"
                )));
            }
            rows.push(ResultRow {
                experiment: config.experiment,
                sweep_values: grid[g].0.clone(),
                trial: t,
                seed: trial_seed(config.base_seed, t),
                metric,
                value,
            });
        }
    }
    Ok(RunOutput { config: config.clone(), rows })
}

impl RunOutput {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment");
        for key in self.config.sweep.keys() {
            out.push(',');
            out.push_str(key);
        }
        out.push_str(",trial,seed,metric,value\n");
        for r in &self.rows {
            out.push_str(r.experiment.name());
            for v in &r.sweep_values {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{},{}", r.trial, r.seed, r.metric, r.value);
        }
        out
    }

    /// Values of one metric at one grid point, in trial order.
    pub fn values(&self, sweep_values: &[f64], metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.sweep_values == sweep_values)
            .map(|r| r.value)
            .collect()
    }

    /// Writes the CSV and the resolved-config sidecar next to it.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        fs::write(path, self.to_csv()).map_err(|e| DistError::io(path, e))?;
        let sidecar = sidecar_path(path);
        fs::write(&sidecar, self.config.to_json_string()).map_err(|e| DistError::io(&sidecar, e))?;
        Ok(sidecar)
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".resolved.json");
    PathBuf::from(s)
}
