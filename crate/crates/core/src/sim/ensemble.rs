use rayon::prelude::*;

use super::grid::{build_grid, TimeGrid};
use super::path::{simulate_path, PathRecord};
use super::{ModelSpec, SimError};
use crate::analysis::{
    least_squares_slope, lyapunov_log_slope, martingale_diagnostics, time_average, EnsembleSummary, PathSummary,
};
use crate::bounds::{bound_processes, verify_sandwich, BoundTrajectories};
use crate::coeffs::Species;
use crate::levy::{JumpStream, PathStreams};

/// Callback invoked once per completed path, from worker threads, with the
/// bounds when the sandwich check is enabled.
pub type PathVisitor<'a> = dyn Fn(usize, &PathRecord, Option<&BoundTrajectories>) -> Result<(), String> + Sync + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub base_seed: u64,
    /// Approximate number of lattice sample times kept per path.
    pub samples: usize,
    pub moment_orders: Vec<f64>,
    /// Trailing fraction of the horizon used for moment trend fits.
    pub moment_window: f64,
    /// Trailing fraction of the horizon pooled by the permanence probe.
    pub terminal_window: f64,
    /// Relative tolerance of the per-path sandwich check; `None` skips it.
    pub sandwich_tol: Option<f64>,
    /// Largest tolerated fraction of aborted paths.
    pub max_failure_fraction: f64,
}

impl EnsembleConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, base_seed: u64) -> Self {
        EnsembleConfig {
            dt,
            horizon,
            n_paths,
            base_seed,
            samples: 200,
            moment_orders: Vec::new(),
            moment_window: 0.2,
            terminal_window: 0.1,
            sandwich_tol: None,
            max_failure_fraction: 0.01,
        }
    }
}

fn is_sample(grid: &TimeGrid, i: usize, stride: u32) -> bool {
    i + 1 == grid.len() || grid.lattice_index(i).is_some_and(|l| l % stride == 0)
}

fn sample_indices(grid: &TimeGrid, stride: u32) -> Vec<usize> {
    (0..grid.len()).filter(|&i| is_sample(grid, i, stride)).collect()
}

fn summarize(
    path: &PathRecord,
    bounds: Option<&BoundTrajectories>,
    cfg: &EnsembleConfig,
    stride: u32,
    sample_times: &[f64],
    moment_start: usize,
) -> Result<PathSummary, SimError> {
    let idx = sample_indices(path.noise.grid(), stride);
    debug_assert_eq!(idx.len(), sample_times.len());
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let samples = Species::BOTH.map(|s| pick(path.values(s)));
    let averages = Species::BOTH.map(|s| pick(&time_average(path, s)));
    let window_times = &sample_times[moment_start..];
    let moment_slopes = cfg
        .moment_orders
        .iter()
        .map(|&q| {
            [0, 1].map(|s| {
                let powered: Vec<f64> = samples[s][moment_start..].iter().map(|v| v.powf(q)).collect();
                least_squares_slope(window_times, &powered)
            })
        })
        .collect();
    let sandwich = match (bounds, cfg.sandwich_tol) {
        (Some(b), Some(tol)) => Some(verify_sandwich(path, b, tol).map_err(|e| SimError::Visitor(e.to_string()))?),
        _ => None,
    };
    Ok(PathSummary {
        samples,
        averages,
        log_slope: Species::BOTH.map(|s| lyapunov_log_slope(path, s)),
        martingale: martingale_diagnostics(path),
        moment_slopes,
        sandwich,
        jumps: path.usage.jumps_applied,
    })
}

pub fn run_ensemble(model: &ModelSpec, cfg: &EnsembleConfig) -> Result<EnsembleSummary, SimError> {
    run_ensemble_with(model, cfg, &|_, _, _| Ok(()))
}

/// Simulates `cfg.n_paths` independent paths in parallel and reduces each to
/// a [`PathSummary`]. Path `i` always uses stream `i` of `cfg.base_seed`, so
/// results do not depend on the thread count.
pub fn run_ensemble_with(
    model: &ModelSpec,
    cfg: &EnsembleConfig,
    visitor: &PathVisitor<'_>,
) -> Result<EnsembleSummary, SimError> {
    if cfg.n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let template = build_grid(cfg.dt, cfg.horizon, &JumpStream::default())?;
    let steps = template.len() as u32;
    let stride = (steps / cfg.samples.max(1) as u32).max(1);
    let sample_times: Vec<f64> = sample_indices(&template, stride)
        .into_iter()
        .map(|i| template.times()[i])
        .collect();
    let window_start = |fraction: f64| {
        let from = cfg.horizon * (1.0 - fraction);
        sample_times
            .iter()
            .position(|&t| t >= from)
            .unwrap_or(sample_times.len() - 1)
    };
    let moment_start = window_start(cfg.moment_window);
    let terminal_start = window_start(cfg.terminal_window);

    let outcomes: Vec<Result<PathSummary, SimError>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let path = simulate_path(model, cfg.dt, cfg.horizon, &PathStreams::new(cfg.base_seed, i as u64))?;
            let bounds = cfg.sandwich_tol.map(|_| bound_processes(model, &path));
            visitor(i, &path, bounds.as_ref()).map_err(SimError::Visitor)?;
            summarize(&path, bounds.as_ref(), cfg, stride, &sample_times, moment_start)
        })
        .collect();

    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut failed = 0;
    let mut first_failure = None;
    for outcome in outcomes {
        match outcome {
            Ok(summary) => paths.push(summary),
            Err(e @ SimError::Overflow { .. }) => {
                failed += 1;
                first_failure.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if failed as f64 > cfg.max_failure_fraction * cfg.n_paths as f64 || paths.is_empty() {
        return Err(SimError::TooManyFailures {
            failed,
            total: cfg.n_paths,
            first: Box::new(first_failure.unwrap_or(SimError::NoPaths)),
        });
    }
    Ok(EnsembleSummary::from_paths(
        model,
        cfg.horizon,
        cfg.dt,
        sample_times,
        cfg.moment_orders.clone(),
        (moment_start, terminal_start),
        failed,
        paths,
    ))
}
