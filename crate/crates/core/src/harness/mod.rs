//! Experiment orchestration: continual training with the accuracy-matrix
//! protocol, confounder-intensity sweeps, estimator convergence, and
//! multi-seed aggregation.

mod checkpoint;
mod config;
mod converge;
mod run;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::autonet::AutonetError;
use crate::datagen::{ContainerError, DatagenError};
use crate::matrix::MatrixError;
use crate::metrics::MetricsError;
use crate::rls::RlsError;

pub use checkpoint::Checkpoint;
pub use config::{DatasetConfig, EvalConfig, ExperimentConfig, ModelConfig, OptimConfig};
pub use converge::{convergence_data, estimator_convergence, ConvergenceCurve, CONVERGE_FEATURES};
pub use run::{
    build_model, delta_sweep, evaluate, load_dataset, make_batch, model_from_snapshot,
    rmdn_widths, run_continual, DcorEntry, EvalOutcome, LossPoint, RunResult, Snapshot, SweepRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("training diverged at stage {stage}, epoch {epoch}: {detail}")]
    Divergence {
        stage: usize,
        epoch: usize,
        detail: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{} of {} seed runs failed: {}", failed.len(), failed.len() + completed.len(),
        failed.iter().map(|(s, e)| format!("seed {s}: {e}")).collect::<Vec<_>>().join("; "))]
    SeedFailures {
        failed: Vec<(u64, String)>,
        completed: Vec<RunResult>,
    },
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Model(#[from] AutonetError),
    #[error(transparent)]
    Rls(#[from] RlsError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Whether the failure is numerical rather than a usage or I/O problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            HarnessError::Divergence { .. } | HarnessError::Rls(_) | HarnessError::Matrix(_) => true,
            HarnessError::Model(e) => matches!(e, AutonetError::Rls(_)),
            HarnessError::SeedFailures { .. } => true,
            _ => false,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            HarnessError::Container(ContainerError::Io(_))
                | HarnessError::Data(DatagenError::Container(ContainerError::Io(_)))
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: &'static str,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeedResult {
    pub runs: Vec<RunResult>,
    pub summary: Vec<MetricSummary>,
}

impl MultiSeedResult {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.summary.iter().find(|m| m.name == name)
    }
}

/// Named scalar metrics of one run.
pub fn run_metrics(run: &RunResult) -> Vec<(&'static str, f64)> {
    let s = run.stages();
    let last = s - 1;
    let mut out = vec![(
        "final_accuracy",
        (0..s).map(|j| run.r[(last, j)]).sum::<f64>() / s as f64,
    )];
    if let Some(d) = run.distance {
        out.extend([("accd", d.accd), ("bwtd", d.bwtd), ("fwtd", d.fwtd)]);
    }
    if let Some(g) = run.gem {
        out.extend([("acc", g.acc), ("bwt", g.bwt), ("fwt", g.fwt)]);
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: &[RunResult]) -> Vec<MetricSummary> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let per_run: Vec<Vec<(&'static str, f64)>> = runs.iter().map(run_metrics).collect();
    run_metrics(first)
        .iter()
        .enumerate()
        .map(|(k, &(name, _))| {
            let vals: Vec<f64> = per_run.iter().map(|m| m[k].1).collect();
            let (mean, std) = mean_std(&vals);
            MetricSummary { name, mean, std }
        })
        .collect()
}

/// Worker count: `RMDN_THREADS` if set and positive, else available cores.
pub fn thread_count() -> usize {
    std::env::var("RMDN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every seed in `cfg.seeds` on the same dataset, varying only the
/// model initialization, and aggregates the metrics.
pub fn multi_seed(
    cfg: &ExperimentConfig,
    ds: &crate::datagen::SynthDataset,
    keep_snapshots: bool,
) -> Result<MultiSeedResult, HarnessError> {
    cfg.validate()?;
    let seeds = &cfg.seeds;
    let workers = thread_count().min(seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult, HarnessError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let res = run_continual(cfg, ds, seeds[i], keep_snapshots);
                slots.lock().expect("result slots")[i] = Some(res);
            });
        }
    });
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for (i, slot) in slots.into_inner().expect("result slots").into_iter().enumerate() {
        match slot.expect("every seed ran") {
            Ok(r) => runs.push(r),
            Err(e) => failed.push((seeds[i], e.to_string())),
        }
    }
    if !failed.is_empty() {
        return Err(HarnessError::SeedFailures {
            failed,
            completed: runs,
        });
    }
    let summary = summarize(&runs);
    Ok(MultiSeedResult { runs, summary })
}

#[cfg(test)]
mod tests;
