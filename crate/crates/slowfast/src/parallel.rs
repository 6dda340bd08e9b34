//! Rayon drivers. Each path is computed from its own stream `(seed, i)` and the
//! results are reduced in index order, so output does not depend on the pool size.

use rayon::prelude::*;
use rayon::ThreadPool;
use slowfast_core::averaging::{self, AveragedModel, AveragingError, ErgodicConfig};
use slowfast_core::estimator::{self, EstimateError, EstimatorReport, ReportMeta};
use slowfast_core::model::{ModelParams, ModelSpec};
use slowfast_core::rng::RngStream;
use slowfast_core::simulate::{Simulation, StepPolicy, DEFAULT_CROSSING_THRESHOLD};
use slowfast_core::validate::{self, StrongErrorReport, ValidateError};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "SLOWFAST_WORKERS";

/// `requested`, else the environment variable, else all cores.
pub fn pool(requested: Option<usize>) -> ThreadPool {
    let from_env = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok());
    let n = requested.or(from_env).filter(|&n| n > 0).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

pub fn estimate(
    pool: &ThreadPool,
    sim: &Simulation<'_>,
    n: usize,
    seed: u64,
) -> Result<EstimatorReport, EstimateError> {
    if n < 2 {
        return Err(EstimateError::TooFewSamples(n));
    }
    let schedule = sim.schedule()?;
    let outcomes: Vec<_> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                sim.run_with_schedule(&schedule, RngStream::new(seed, i))
                    .map(|o| o.summary())
            })
            .collect()
    });
    estimator::summarize(&outcomes, estimator::report_meta(sim, schedule.dt, seed))
}

/// Plain Monte Carlo of the averaged dynamics.
pub fn averaged_estimate(
    pool: &ThreadPool,
    avg: &AveragedModel,
    params: &ModelParams,
    policy: StepPolicy,
    n: usize,
    seed: u64,
) -> Result<EstimatorReport, ValidateError> {
    let schedule = policy.schedule(params.t0, params.horizon, params.epsilon)?;
    let outcomes: Vec<_> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                validate::averaged_trajectory(
                    avg,
                    params,
                    &schedule,
                    DEFAULT_CROSSING_THRESHOLD,
                    RngStream::new(seed, i),
                )
            })
            .collect()
    });
    let meta = ReportMeta {
        beta: params.beta,
        epsilon: params.epsilon,
        dt: schedule.dt,
        seed,
    };
    Ok(estimator::summarize(&outcomes, meta)?)
}

pub fn strong_error_4th(
    pool: &ThreadPool,
    model: &ModelSpec,
    avg: &AveragedModel,
    policy: StepPolicy,
    n: usize,
    seed: u64,
    n_obs: usize,
) -> Result<StrongErrorReport, ValidateError> {
    validate::check_coupling_preconditions(model)?;
    let p = &model.params;
    let schedule = policy.schedule(p.t0, p.horizon, p.epsilon)?;
    let observe = validate::observation_steps(schedule.steps, n_obs);
    let times = validate::observation_times(p, &schedule, &observe);
    let pairs: Vec<_> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                validate::coupled_pair(model, avg, &schedule, &observe, RngStream::new(seed, i))
            })
            .collect()
    });
    validate::reduce_strong(p.epsilon, &times, &pairs)
}

pub fn numerical_average(
    pool: &ThreadPool,
    model: &ModelSpec,
    grid: &[f64],
    cfg: &ErgodicConfig,
    seed: u64,
) -> Result<AveragedModel, AveragingError> {
    let nodes: Result<Vec<_>, _> = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(i, &x)| averaging::average_node(model, x, cfg, RngStream::new(seed, i as u64)))
            .collect()
    });
    averaging::assemble(grid, &nodes?, cfg.a_floor)
}
