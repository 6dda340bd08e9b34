//! Averaging → φ₀ → control → estimate, driven by an [`ExperimentConfig`].

use std::sync::Arc;
use std::time::Instant;

use rayon::ThreadPool;
use slowfast_core::averaging::{analytic_average_bistable, uniform_grid, AveragedModel};
use slowfast_core::control::{ControlField, SurfacePoint};
use slowfast_core::estimator::{EstimateError, EstimatorReport};
use slowfast_core::fkpde::{solve_phi0, ValueGrid};
use slowfast_core::model::{build_bistable_model_with, BistableExample, ModelSpec, RunningCost};
use slowfast_core::simulate::{SimError, Simulation, StepPolicy};
use slowfast_core::validate::{self, ConvergenceRow, ValidateError};
use slowfast_core::Error as CoreError;

use crate::config::{AveragingMethod, ExperimentConfig, Mode};
use crate::parallel;

/// Ergodic averaging draws from streams `(seed ^ AVERAGING_SALT, node)`, apart from path streams.
pub const AVERAGING_SALT: u64 = 0x5eed_a7e5_0000_0001;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl PipelineError {
    /// 3 for configurations that cannot be run, 4 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use slowfast_core::estimator::EstimateError as E;
        match self {
            PipelineError::Validation(_) => 3,
            PipelineError::Core(e) => match e {
                CoreError::Simulation(SimError::Diverged { .. })
                | CoreError::Estimate(
                    E::TooManyFailures { .. } | E::Simulation(SimError::Diverged { .. }),
                )
                | CoreError::Validate(ValidateError::Simulation(SimError::Diverged { .. }))
                | CoreError::Averaging(slowfast_core::averaging::AveragingError::Diverged {
                    ..
                }) => 4,
                CoreError::Pde(_) | CoreError::Model(_) | CoreError::Control(_) => 3,
                CoreError::Estimate(E::TooFewSamples(_) | E::InvalidSweep) => 3,
                CoreError::Simulation(SimError::InvalidPolicy(_)) => 3,
                _ => 1,
            },
        }
    }
}

fn core<E: Into<CoreError>>(e: E) -> PipelineError {
    PipelineError::Core(e.into())
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<ModelSpec, PipelineError> {
    build_bistable_model_with(cfg.params(), cfg.example()).map_err(core)
}

pub fn averaged_model(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    pool: &ThreadPool,
) -> Result<AveragedModel, PipelineError> {
    let pde = cfg.pde_config();
    match cfg.averaging.method {
        AveragingMethod::Analytic => analytic_average_bistable(model, &pde.nodes()).map_err(core),
        AveragingMethod::Ergodic => {
            let grid = uniform_grid(pde.x_lo, pde.x_hi, cfg.averaging.nodes);
            let seed = cfg.sampling.seed ^ AVERAGING_SALT;
            parallel::numerical_average(pool, model, &grid, &cfg.ergodic_config(), seed)
                .map_err(core)
        }
    }
}

/// Solved φ₀ together with the pieces it was built from.
pub struct Solved {
    pub model: ModelSpec,
    pub averaged: AveragedModel,
    pub grid: Arc<ValueGrid>,
}

pub fn solve(cfg: &ExperimentConfig, pool: &ThreadPool) -> Result<Solved, PipelineError> {
    let model = build_model(cfg)?;
    let averaged = averaged_model(cfg, &model, pool)?;
    let grid = solve_phi0(&averaged, &model.params, &cfg.pde_config()).map_err(core)?;
    log::info!(
        "φ₀ solved: min φ = {:e}, φ₀(t0, x0) = {:e}",
        grid.min_phi(),
        grid.phi_initial(cfg.model.x0)
    );
    Ok(Solved {
        model,
        averaged,
        grid: Arc::new(grid),
    })
}

pub fn control(cfg: &ExperimentConfig, solved: &Solved) -> Result<ControlField, PipelineError> {
    ControlField::averaged(solved.grid.clone(), &solved.model, cfg.control_settings()).map_err(core)
}

fn estimate_timed(
    cfg: &ExperimentConfig,
    pool: &ThreadPool,
    model: &ModelSpec,
    control: Option<&ControlField>,
) -> Result<EstimatorReport, PipelineError> {
    let start = Instant::now();
    let sim = Simulation::new(model, control, cfg.policy())
        .with_crossing_threshold(cfg.sampling.crossing_threshold);
    let mut report =
        parallel::estimate(pool, &sim, cfg.sampling.n, cfg.sampling.seed).map_err(core)?;
    report.wall_clock = if cfg.output.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    if report.n_clamped > 0 {
        log::warn!(
            "control clamped {} times at ε = {}",
            report.n_clamped,
            report.epsilon
        );
    }
    Ok(report)
}

/// Reports in mode order; `both` puts the zero-control row first.
pub fn run(
    cfg: &ExperimentConfig,
    pool: &ThreadPool,
) -> Result<Vec<EstimatorReport>, PipelineError> {
    let mut out = Vec::new();
    let model = build_model(cfg)?;
    if matches!(cfg.sampling.mode, Mode::StandardMc | Mode::Both) {
        out.push(estimate_timed(cfg, pool, &model, None)?);
    }
    if matches!(cfg.sampling.mode, Mode::ImportanceSampling | Mode::Both) {
        let solved = solve(cfg, pool)?;
        let u = control(cfg, &solved)?;
        out.push(estimate_timed(cfg, pool, &solved.model, Some(&u))?);
    }
    Ok(out)
}

/// One report per ε (per mode), all sharing one φ₀ solve.
pub fn sweep(
    cfg: &ExperimentConfig,
    epsilons: &[f64],
    pool: &ThreadPool,
) -> Result<Vec<EstimatorReport>, PipelineError> {
    slowfast_core::estimator::check_sweep(epsilons).map_err(|_| {
        PipelineError::Validation(
            "ε list must be non-empty, positive and strictly decreasing".into(),
        )
    })?;
    let solved = if cfg.sampling.mode == Mode::StandardMc {
        None
    } else {
        Some(solve(cfg, pool)?)
    };
    let u = solved.as_ref().map(|s| control(cfg, s)).transpose()?;
    let base = build_model(cfg)?;
    let mut out = Vec::new();
    for &eps in epsilons {
        let model = base.with_epsilon(eps).map_err(core)?;
        if matches!(cfg.sampling.mode, Mode::StandardMc | Mode::Both) {
            out.push(estimate_timed(cfg, pool, &model, None)?);
        }
        if let Some(u) = &u {
            out.push(estimate_timed(cfg, pool, &model, Some(u))?);
        }
    }
    Ok(out)
}

pub fn lattice(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// `û⁰(s, x)` on the configured `(s, x)` lattice, time-major.
pub fn surface(
    cfg: &ExperimentConfig,
    pool: &ThreadPool,
) -> Result<Vec<SurfacePoint>, PipelineError> {
    let solved = solve(cfg, pool)?;
    let u = control(cfg, &solved)?;
    let s = &cfg.surface;
    let times = lattice(cfg.model.t0, cfg.model.horizon, s.n_s);
    let xs = lattice(s.x_lo, s.x_hi, s.n_x);
    Ok(u.sample_surface(&times, &xs))
}

/// Convergence-study rows: strong error per ε, duality gap, zero-variance check.
pub fn validate(
    cfg: &ExperimentConfig,
    pool: &ThreadPool,
) -> Result<Vec<ConvergenceRow>, PipelineError> {
    let v = &cfg.validate;
    let policy: StepPolicy = cfg.policy();
    let seed = cfg.sampling.seed;
    let solved = solve(cfg, pool)?;
    let mut rows = Vec::new();
    for &eps in &v.epsilons {
        let model = solved.model.with_epsilon(eps).map_err(core)?;
        let r = parallel::strong_error_4th(
            pool,
            &model,
            &solved.averaged,
            policy,
            v.pairs,
            seed,
            v.observations,
        )
        .map_err(core)?;
        rows.push(ConvergenceRow {
            epsilon: eps,
            metric: "strong_error_4th",
            value: r.value,
            std_err: r.std_err,
        });
    }
    let p = &solved.model.params;
    let eps = p.epsilon;
    let phi0 = solved.grid.phi_initial(p.x0[0]);
    let u0 = -phi0.ln() / p.beta;
    let mc = parallel::averaged_estimate(pool, &solved.averaged, p, policy, v.duality_paths, seed)
        .map_err(core)?;
    let u_mc = -mc.log_i_n / p.beta;
    let se_u = mc.std_err / (p.beta * mc.i_n);
    rows.push(ConvergenceRow {
        epsilon: eps,
        metric: "u0_pde",
        value: u0,
        std_err: 0.0,
    });
    rows.push(ConvergenceRow {
        epsilon: eps,
        metric: "u0_monte_carlo",
        value: u_mc,
        std_err: se_u,
    });
    rows.push(ConvergenceRow {
        epsilon: eps,
        metric: "duality_gap",
        value: u_mc - u0,
        std_err: se_u,
    });
    let constant = build_bistable_model_with(
        p.clone(),
        BistableExample::with_cost(RunningCost::Constant(1.0)),
    )
    .map_err(core)?;
    let z = validate::zero_variance_check(&constant, policy, v.zero_variance_paths, seed)
        .map_err(core)?;
    rows.push(ConvergenceRow {
        epsilon: eps,
        metric: "zero_variance",
        value: z.sample_variance,
        std_err: 0.0,
    });
    Ok(rows)
}

impl From<EstimateError> for PipelineError {
    fn from(e: EstimateError) -> Self {
        core(e)
    }
}
