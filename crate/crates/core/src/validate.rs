//! Empirical checks of the averaging and control asymptotics.
//!
//! - Strong error between the slow path and its averaged limit, driven by the
//!   same slow-channel increments (valid because `α₁` does not depend on `y`).
//! - Constant-cost runs whose payoff is deterministic.
//! - Sup-norm gaps between the averaged control and the full oracle control.
//! - Plain Monte Carlo of the averaged dynamics, to cross-check `φ₀`.

use alloc::vec;
use alloc::vec::Vec;

use crate::averaging::{AveragedModel, AveragingError};
use crate::control::ControlField;
use crate::estimator::{
    self, log_space_moments, EstimateError, EstimatorReport, ReportMeta, TrajectorySummary,
};
use crate::math;
use crate::model::{dissipativity_probe, ModelParams, ModelSpec};
use crate::rng::RngStream;
use crate::simulate::{
    Integrator, PathState, SimError, StepPolicy, StepSchedule, DEFAULT_CROSSING_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidateError {
    #[error("fast subsystem failed the dissipativity probe (λ estimate {lambda})")]
    NotDissipative { lambda: f64 },
    #[error("running cost is not constant")]
    NonConstantCost,
    #[error("requires {0}")]
    Dimension(&'static str),
    #[error("need at least 2 samples")]
    TooFewSamples,
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// Refuses models whose fast subsystem is not contracting or that are not 1D slow.
pub fn check_coupling_preconditions(model: &ModelSpec) -> Result<(), ValidateError> {
    if model.dims().k != 1 {
        return Err(ValidateError::Dimension("a one-dimensional slow variable"));
    }
    let lambda = dissipativity_probe(model);
    if !(lambda > 0.0) {
        return Err(ValidateError::NotDissipative { lambda });
    }
    Ok(())
}

/// Step indices (1-based, after the step) at which pairs are compared.
pub fn observation_steps(steps: usize, n_obs: usize) -> Vec<usize> {
    let n_obs = n_obs.clamp(1, steps);
    let mut out: Vec<usize> = (1..=n_obs).map(|o| (o * steps).div_ceil(n_obs)).collect();
    out.dedup();
    out
}

/// Runs one coupled pair and returns `|x_s − x̃_s|⁴` at each observation step.
///
/// Each step draws `m₁` slow increments, shared by both paths, then `m₂`
/// fast increments used only by the full system.
pub fn coupled_pair(
    model: &ModelSpec,
    avg: &AveragedModel,
    schedule: &StepSchedule,
    observe: &[usize],
    stream: RngStream,
) -> Result<Vec<f64>, SimError> {
    let d = model.dims();
    let c = model.coefficients();
    let noise_scale = 1.0 / math::sqrt(model.params.beta);
    let mut integrator = Integrator::new(model, None, DEFAULT_CROSSING_THRESHOLD)?;
    let mut full = PathState::initial(model);
    let mut avg_x = model.params.x0[0];
    let mut rng = stream.gaussian();
    let mut dw1 = vec![0.0; d.m1];
    let mut dw2 = vec![0.0; d.m2];
    let mut a1 = vec![0.0; d.m1];
    let mut out = Vec::with_capacity(observe.len());
    let mut next = observe.iter().peekable();
    for n in 0..schedule.steps {
        let dt = schedule.step_len(n);
        let sq = math::sqrt(dt);
        rng.fill_scaled(sq, &mut dw1);
        rng.fill_scaled(sq, &mut dw2);
        let f_avg = avg.interpolate(avg_x).f;
        c.slow_diffusion(&[avg_x], &mut a1);
        let noise: f64 = a1.iter().zip(&dw1).map(|(a, w)| a * w).sum();
        avg_x += f_avg * dt + noise_scale * noise;
        integrator.step(&mut full, dt, &dw1, &dw2)?;
        if !avg_x.is_finite() {
            return Err(SimError::Diverged { time: full.s });
        }
        if next.peek() == Some(&&(n + 1)) {
            next.next();
            let e = full.x[0] - avg_x;
            out.push(e * e * e * e);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorReport {
    pub epsilon: f64,
    /// `max_s E|x_s − x̃_s|⁴` over observation times.
    pub value: f64,
    /// Standard error of the mean at the maximising time.
    pub std_err: f64,
    pub time_of_max: f64,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub n: usize,
}

/// Reduces per-pair observations (in index order).
pub fn reduce_strong(
    epsilon: f64,
    times: &[f64],
    pairs: &[Result<Vec<f64>, SimError>],
) -> Result<StrongErrorReport, ValidateError> {
    let ok: Vec<&Vec<f64>> = pairs
        .iter()
        .map(|p| p.as_ref().map_err(Clone::clone))
        .collect::<Result<_, _>>()?;
    let n = ok.len();
    if n < 2 {
        return Err(ValidateError::TooFewSamples);
    }
    let nt = times.len();
    let mut means = vec![0.0; nt];
    for p in &ok {
        for (m, v) in means.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let (arg, value) =
        means
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            });
    let var = ok
        .iter()
        .map(|p| {
            let e = p[arg] - value;
            e * e
        })
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(StrongErrorReport {
        epsilon,
        value,
        std_err: math::sqrt(var / n as f64),
        time_of_max: times[arg],
        times: times.to_vec(),
        means,
        n,
    })
}

/// Serial `max_s E|x_s − x̃_s|⁴` with `n` coupled pairs and `n_obs` observation times.
pub fn strong_error_4th(
    model: &ModelSpec,
    avg: &AveragedModel,
    policy: StepPolicy,
    n: usize,
    seed: u64,
    n_obs: usize,
) -> Result<StrongErrorReport, ValidateError> {
    check_coupling_preconditions(model)?;
    let p = &model.params;
    let schedule = policy.schedule(p.t0, p.horizon, p.epsilon)?;
    let observe = observation_steps(schedule.steps, n_obs);
    let times = observation_times(p, &schedule, &observe);
    let pairs: Vec<_> = (0..n as u64)
        .map(|i| coupled_pair(model, avg, &schedule, &observe, RngStream::new(seed, i)))
        .collect();
    reduce_strong(p.epsilon, &times, &pairs)
}

pub fn observation_times(p: &ModelParams, schedule: &StepSchedule, observe: &[usize]) -> Vec<f64> {
    observe
        .iter()
        .map(|&s| {
            if s == schedule.steps {
                p.horizon
            } else {
                p.t0 + s as f64 * schedule.dt
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroVarianceReport {
    pub n: usize,
    pub log_payoff: f64,
    pub payoff: f64,
    /// `(1/N) Σ (e^{p_i} − I_N)²`.
    pub sample_variance: f64,
    /// Every path produced the same bits.
    pub identical: bool,
}

/// Uncontrolled run of a constant-cost model; every payoff equals `e^{−βc(T−t0)}`.
pub fn zero_variance_check(
    model: &ModelSpec,
    policy: StepPolicy,
    n: usize,
    seed: u64,
) -> Result<ZeroVarianceReport, ValidateError> {
    if n < 2 {
        return Err(ValidateError::TooFewSamples);
    }
    let c = model.coefficients();
    let x0 = &model.params.x0;
    let h0 = c.running_cost(x0);
    let constant = (-50..=50).all(|i| {
        let x: Vec<f64> = x0.iter().map(|v| v + 0.1 * i as f64).collect();
        c.running_cost(&x).to_bits() == h0.to_bits()
    });
    if !constant {
        return Err(ValidateError::NonConstantCost);
    }
    let sim = crate::simulate::Simulation::new(model, None, policy);
    let schedule = sim.schedule()?;
    let logs: Vec<f64> = (0..n as u64)
        .map(|i| {
            sim.run_with_schedule(&schedule, RngStream::new(seed, i))
                .map(|o| o.payoff_log)
        })
        .collect::<Result<_, _>>()?;
    let identical = logs.iter().all(|p| p.to_bits() == logs[0].to_bits());
    let moments = log_space_moments(&logs);
    Ok(ZeroVarianceReport {
        n,
        log_payoff: logs[0],
        payoff: math::exp(logs[0]),
        sample_variance: moments.variance,
        identical,
    })
}

/// Rectangular `(s, x, y)` probe lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeLattice {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    /// `sup |u₁(oracle) − u₁(suboptimal)|`.
    pub sup_gap: f64,
    /// `sup |u₂(oracle)|`.
    pub sup_u2: f64,
    /// `sup |u₁(oracle)|`, for scale.
    pub sup_u1: f64,
}

pub fn control_gap_probe(
    suboptimal: &ControlField,
    oracle: &ControlField,
    lattice: &ProbeLattice,
) -> GapReport {
    let norm = |v: &[f64]| math::sqrt(v.iter().map(|a| a * a).sum());
    let mut r = GapReport {
        sup_gap: 0.0,
        sup_u2: 0.0,
        sup_u1: 0.0,
    };
    for &s in &lattice.times {
        for &x in &lattice.xs {
            for &y in &lattice.ys {
                let (a1, _, _) = suboptimal.eval_control(s, &[x], &[y]);
                let (b1, b2, _) = oracle.eval_control(s, &[x], &[y]);
                let diff: Vec<f64> = a1.iter().zip(&b1).map(|(a, b)| a - b).collect();
                r.sup_gap = r.sup_gap.max(norm(&diff));
                r.sup_u2 = r.sup_u2.max(norm(&b2));
                r.sup_u1 = r.sup_u1.max(norm(&b1));
            }
        }
    }
    r
}

/// One path of `dx̃ = f̃ ds + β^{-1/2} α̃ dw` with payoff `−β∫h̃`.
pub fn averaged_trajectory(
    avg: &AveragedModel,
    params: &ModelParams,
    schedule: &StepSchedule,
    crossing_threshold: f64,
    stream: RngStream,
) -> Result<TrajectorySummary, SimError> {
    let noise_scale = 1.0 / math::sqrt(params.beta);
    let mut rng = stream.gaussian();
    let mut x = params.x0[0];
    let mut s = params.t0;
    let mut cost = 0.0;
    let mut crossed = false;
    for n in 0..schedule.steps {
        let dt = schedule.step_len(n);
        let c = avg.interpolate(x);
        cost += c.h * dt;
        x += c.f * dt + noise_scale * c.a * math::sqrt(dt) * rng.standard_normal();
        s += dt;
        crossed |= x >= crossing_threshold;
        if !x.is_finite() {
            return Err(SimError::Diverged { time: s });
        }
    }
    Ok(TrajectorySummary {
        payoff_log: -params.beta * cost,
        crossed,
        clamped: 0,
    })
}

/// Serial plain Monte Carlo of `φ₀(t0, x0)` on the averaged dynamics.
pub fn averaged_estimate(
    avg: &AveragedModel,
    params: &ModelParams,
    policy: StepPolicy,
    n: usize,
    seed: u64,
) -> Result<EstimatorReport, ValidateError> {
    let schedule = policy.schedule(params.t0, params.horizon, params.epsilon)?;
    let outcomes: Vec<_> = (0..n as u64)
        .map(|i| {
            averaged_trajectory(
                avg,
                params,
                &schedule,
                DEFAULT_CROSSING_THRESHOLD,
                RngStream::new(seed, i),
            )
        })
        .collect();
    let meta = ReportMeta {
        beta: params.beta,
        epsilon: params.epsilon,
        dt: schedule.dt,
        seed,
    };
    Ok(estimator::summarize(&outcomes, meta)?)
}

/// One row of the convergence-study table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub metric: &'static str,
    pub value: f64,
    pub std_err: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{analytic_average_bistable, uniform_grid, Provenance};
    use crate::model::{
        build_bistable_model, build_bistable_model_with, BistableExample, FnCoefficients,
        RunningCost,
    };
    use alloc::sync::Arc;

    #[test]
    fn observation_steps_are_spread() {
        assert_eq!(observation_steps(10, 5), vec![2, 4, 6, 8, 10]);
        assert_eq!(observation_steps(3, 10), vec![1, 2, 3]);
        assert_eq!(*observation_steps(10_000, 100).last().unwrap(), 10_000);
    }

    #[test]
    fn y_free_drift_has_no_averaging_error() {
        let c = FnCoefficients::scalar(|x, _| -x, |x, y| x - y, |_| 1.0, |_, _| 1.0, |_| 0.0);
        let params = ModelParams::bistable(1.0, 0.1).unwrap();
        let m = ModelSpec::new(params, Arc::new(c)).unwrap();
        let grid = uniform_grid(-10.0, 10.0, 2001);
        let avg = AveragedModel::new(
            grid.clone(),
            grid.iter().map(|x| -x).collect(),
            vec![1.0; grid.len()],
            vec![0.0; grid.len()],
            Provenance::Analytic,
        )
        .unwrap();
        let r = strong_error_4th(&m, &avg, StepPolicy::fixed(1e-3), 20, 1, 10).unwrap();
        assert!(r.value < 1e-24, "{}", r.value);
    }

    #[test]
    fn degenerate_fast_dynamics_are_refused() {
        let c = FnCoefficients::scalar(|x, _| -x, |_, _| 0.0, |_| 1.0, |_, _| 1.0, |_| 0.0);
        let m = ModelSpec::new(ModelParams::bistable(1.0, 0.1).unwrap(), Arc::new(c)).unwrap();
        let avg = AveragedModel::new(
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0; 2],
            vec![0.0; 2],
            Provenance::Analytic,
        )
        .unwrap();
        assert!(matches!(
            strong_error_4th(&m, &avg, StepPolicy::fixed(1e-2), 4, 1, 4),
            Err(ValidateError::NotDissipative { .. })
        ));
    }

    #[test]
    fn coupled_pair_shares_slow_increments() {
        // Replaying the stream by hand: slow draws first, then fast draws, each step.
        let m = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        let avg = analytic_average_bistable(&m, &uniform_grid(-4.0, 6.0, 1001)).unwrap();
        let schedule = StepPolicy::fixed(0.01).schedule(0.0, 1.0, 0.1).unwrap();
        let stream = RngStream::new(11, 2);
        let got = coupled_pair(&m, &avg, &schedule, &[schedule.steps], stream).unwrap();
        let mut rng = stream.gaussian();
        let mut x = -1.0;
        let mut full = PathState::initial(&m);
        let mut integ = Integrator::new(&m, None, 0.0).unwrap();
        for _ in 0..schedule.steps {
            let w1 = 0.1 * rng.standard_normal();
            let w2 = 0.1 * rng.standard_normal();
            x += avg.interpolate(x).f * 0.01 + w1;
            integ.step(&mut full, 0.01, &[w1], &[w2]).unwrap();
        }
        assert_eq!(got[0], (full.x[0] - x).powi(4));
    }

    #[test]
    fn constant_cost_is_zero_variance() {
        let p = ModelParams::bistable(8.0, 0.1).unwrap();
        let m =
            build_bistable_model_with(p, BistableExample::with_cost(RunningCost::Constant(1.0)))
                .unwrap();
        let r = zero_variance_check(&m, StepPolicy::fixed(1e-3), 16, 3).unwrap();
        assert!(r.identical);
        assert_eq!(r.sample_variance, 0.0);
        assert!((r.payoff / (-8.0f64).exp() - 1.0).abs() < 1e-12);
        let bad = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        assert_eq!(
            zero_variance_check(&bad, StepPolicy::fixed(1e-3), 4, 0),
            Err(ValidateError::NonConstantCost)
        );
    }

    #[test]
    fn identical_fields_have_no_gap() {
        let m = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        let z = ControlField::zero(&m);
        let lat = ProbeLattice {
            times: vec![0.0, 0.5],
            xs: vec![-1.0, 0.0],
            ys: vec![0.0],
        };
        let r = control_gap_probe(&z, &z, &lat);
        assert_eq!((r.sup_gap, r.sup_u2), (0.0, 0.0));
    }
}
