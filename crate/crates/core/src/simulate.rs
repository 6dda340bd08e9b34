//! Euler–Maruyama for the controlled slow–fast system.
//!
//! Under the sampling measure the state evolves as
//!
//! ```text
//! dx = [f − α₁u₁] ds + β^{-1/2} α₁ dW¹
//! dy = [ε⁻¹g − ε^{-1/2} α₂u₂] ds + β^{-1/2} ε^{-1/2} α₂ dW²
//! ```
//!
//! where `W` is the Brownian motion actually sampled. The likelihood ratio
//! of the sampling measure against the original one, written in terms of
//! these increments, is
//!
//! ```text
//! ln Z = −β^{1/2} ∫ u·dW + (β/2) ∫ |u|² ds
//! ```
//!
//! and a path contributes `exp(−β∫h ds) / Z` to the estimator. Everything is
//! accumulated in log space with left-endpoint (Itô) quadrature.

use alloc::vec;
use alloc::vec::Vec;

use crate::control::ControlField;
use crate::estimator::TrajectorySummary;
use crate::math;
use crate::model::{Dims, ModelSpec};
use crate::rng::{GaussianSource, RngStream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("integration diverged at s = {time}")]
    Diverged { time: f64 },
    #[error("invalid step policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("control field and model disagree: {0}")]
    ControlMismatch(&'static str),
}

/// State of one sampled path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Accumulated `ln Z`.
    pub log_z: f64,
    /// Accumulated `∫ h(x_r) dr`.
    pub cost_integral: f64,
    /// Whether `x[0]` has reached the crossing threshold at some grid time.
    pub crossed: bool,
}

impl PathState {
    pub fn initial(model: &ModelSpec) -> Self {
        Self {
            s: model.params.t0,
            x: model.params.x0.clone(),
            y: model.params.y0.clone(),
            log_z: 0.0,
            cost_integral: 0.0,
            crossed: false,
        }
    }

    /// `ln( exp(−β ∫h) / Z )`.
    pub fn payoff_log(&self, beta: f64) -> f64 {
        -beta * self.cost_integral - self.log_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Fixed,
    /// `dt = min(dt_slow, eps_factor · ε)`.
    EpsilonScaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    pub dt_slow: f64,
    pub rule: StepRule,
    pub eps_factor: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt_slow: 1e-4,
            rule: StepRule::EpsilonScaled,
            eps_factor: 0.1,
        }
    }
}

/// Resolved time grid for one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub dt: f64,
    pub steps: usize,
    pub last_dt: f64,
    /// The final step is shorter than `dt`.
    pub partial: bool,
}

impl StepSchedule {
    pub fn step_len(&self, index: usize) -> f64 {
        if index + 1 == self.steps {
            self.last_dt
        } else {
            self.dt
        }
    }
}

impl StepPolicy {
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt_slow: dt,
            rule: StepRule::Fixed,
            eps_factor: 0.1,
        }
    }

    pub fn dt(&self, epsilon: f64) -> f64 {
        match self.rule {
            StepRule::Fixed => self.dt_slow,
            StepRule::EpsilonScaled => self.dt_slow.min(self.eps_factor * epsilon),
        }
    }

    pub fn schedule(&self, t0: f64, horizon: f64, epsilon: f64) -> Result<StepSchedule, SimError> {
        let dt = self.dt(epsilon);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidPolicy(
                "time step must be positive and finite",
            ));
        }
        if self.rule == StepRule::EpsilonScaled && !(self.eps_factor > 0.0) {
            return Err(SimError::InvalidPolicy("eps_factor must be positive"));
        }
        let span = horizon - t0;
        let ratio = span / dt;
        let nearest = math::round(ratio);
        if nearest >= 1.0 && (ratio - nearest).abs() <= 1e-9 * ratio {
            let steps = nearest as usize;
            return Ok(StepSchedule {
                dt,
                steps,
                last_dt: dt,
                partial: false,
            });
        }
        let steps = math::ceil(ratio).max(1.0) as usize;
        let last_dt = span - (steps - 1) as f64 * dt;
        Ok(StepSchedule {
            dt,
            steps,
            last_dt,
            partial: true,
        })
    }
}

/// Per-path integrator holding scratch buffers and the clamp counter.
pub struct Integrator<'a> {
    model: &'a ModelSpec,
    control: Option<&'a ControlField>,
    crossing_threshold: f64,
    dims: Dims,
    beta: f64,
    sqrt_beta: f64,
    noise_scale: f64,
    inv_eps: f64,
    inv_sqrt_eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    /// Evaluations at which the control hit its cap.
    pub clamped: u64,
}

impl<'a> Integrator<'a> {
    pub fn new(
        model: &'a ModelSpec,
        control: Option<&'a ControlField>,
        crossing_threshold: f64,
    ) -> Result<Self, SimError> {
        let dims = model.dims();
        if let Some(c) = control {
            c.check_dims(dims)
                .map_err(|_| SimError::ControlMismatch("noise dimensions"))?;
        }
        let p = &model.params;
        Ok(Self {
            model,
            control,
            crossing_threshold,
            dims,
            beta: p.beta,
            sqrt_beta: math::sqrt(p.beta),
            noise_scale: 1.0 / math::sqrt(p.beta),
            inv_eps: 1.0 / p.epsilon,
            inv_sqrt_eps: 1.0 / math::sqrt(p.epsilon),
            f: vec![0.0; dims.k],
            g: vec![0.0; dims.l],
            a1: vec![0.0; dims.k * dims.m1],
            a2: vec![0.0; dims.l * dims.m2],
            u1: vec![0.0; dims.m1],
            u2: vec![0.0; dims.m2],
            clamped: 0,
        })
    }

    /// One Euler–Maruyama step; `dw1 ~ N(0, dt I_{m₁})`, `dw2 ~ N(0, dt I_{m₂})`.
    pub fn step(
        &mut self,
        state: &mut PathState,
        dt: f64,
        dw1: &[f64],
        dw2: &[f64],
    ) -> Result<(), SimError> {
        let Dims { k, l, m1, m2 } = self.dims;
        let c = self.model.coefficients();
        c.slow_drift(&state.x, &state.y, &mut self.f);
        c.fast_drift(&state.x, &state.y, &mut self.g);
        c.slow_diffusion(&state.x, &mut self.a1);
        c.fast_diffusion(&state.x, &state.y, &mut self.a2);
        let h = c.running_cost(&state.x);

        let controlled = match self.control {
            Some(field) if !field.is_zero() => {
                let flags = field.eval_with(
                    state.s,
                    &state.x,
                    &state.y,
                    &self.a1,
                    &self.a2,
                    &mut self.u1,
                    &mut self.u2,
                );
                if flags.capped {
                    self.clamped += 1;
                }
                true
            }
            _ => false,
        };

        for i in 0..k {
            let row = &self.a1[i * m1..(i + 1) * m1];
            let mut drift = self.f[i];
            let mut noise = 0.0;
            for j in 0..m1 {
                noise += row[j] * dw1[j];
                if controlled {
                    drift -= row[j] * self.u1[j];
                }
            }
            state.x[i] += drift * dt + self.noise_scale * noise;
        }
        for i in 0..l {
            let row = &self.a2[i * m2..(i + 1) * m2];
            let mut drift = self.inv_eps * self.g[i];
            let mut noise = 0.0;
            for j in 0..m2 {
                noise += row[j] * dw2[j];
                if controlled {
                    drift -= self.inv_sqrt_eps * row[j] * self.u2[j];
                }
            }
            state.y[i] += drift * dt + self.noise_scale * self.inv_sqrt_eps * noise;
        }
        if controlled {
            let mut u_dw = 0.0;
            let mut u_sq = 0.0;
            for (u, w) in self.u1.iter().zip(dw1).chain(self.u2.iter().zip(dw2)) {
                u_dw += u * w;
                u_sq += u * u;
            }
            state.log_z += -self.sqrt_beta * u_dw + 0.5 * self.beta * u_sq * dt;
        }
        state.cost_integral += h * dt;
        state.s += dt;
        if state.x[0] >= self.crossing_threshold {
            state.crossed = true;
        }
        let finite = state.x.iter().chain(&state.y).all(|v| v.is_finite())
            && state.log_z.is_finite()
            && state.cost_integral.is_finite();
        if finite {
            Ok(())
        } else {
            Err(SimError::Diverged { time: state.s })
        }
    }
}

/// Single step with fresh scratch buffers; the sampling loop uses [`Integrator`].
pub fn em_step(
    state: &mut PathState,
    model: &ModelSpec,
    control: Option<&ControlField>,
    dt: f64,
    dw1: &[f64],
    dw2: &[f64],
) -> Result<(), SimError> {
    Integrator::new(model, control, DEFAULT_CROSSING_THRESHOLD)?.step(state, dt, dw1, dw2)
}

pub const DEFAULT_CROSSING_THRESHOLD: f64 = 0.0;

/// Result of one full path.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub final_state: PathState,
    pub payoff_log: f64,
    pub clamped: u64,
    pub steps: usize,
}

impl TrajectoryOutcome {
    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            payoff_log: self.payoff_log,
            crossed: self.final_state.crossed,
            clamped: self.clamped,
        }
    }
}

/// Model, control and time grid shared by all paths of one estimate.
#[derive(Debug, Clone, Copy)]
pub struct Simulation<'a> {
    pub model: &'a ModelSpec,
    pub control: Option<&'a ControlField>,
    pub policy: StepPolicy,
    pub crossing_threshold: f64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        model: &'a ModelSpec,
        control: Option<&'a ControlField>,
        policy: StepPolicy,
    ) -> Self {
        Self {
            model,
            control,
            policy,
            crossing_threshold: DEFAULT_CROSSING_THRESHOLD,
        }
    }

    pub fn with_crossing_threshold(mut self, threshold: f64) -> Self {
        self.crossing_threshold = threshold;
        self
    }

    pub fn schedule(&self) -> Result<StepSchedule, SimError> {
        let p = &self.model.params;
        self.policy.schedule(p.t0, p.horizon, p.epsilon)
    }

    pub fn run_trajectory(&self, stream: RngStream) -> Result<TrajectoryOutcome, SimError> {
        let schedule = self.schedule()?;
        self.run_with_schedule(&schedule, stream)
    }

    pub fn run_with_schedule(
        &self,
        schedule: &StepSchedule,
        stream: RngStream,
    ) -> Result<TrajectoryOutcome, SimError> {
        let dims = self.model.dims();
        let mut integrator = Integrator::new(self.model, self.control, self.crossing_threshold)?;
        let mut rng: GaussianSource = stream.gaussian();
        let mut state = PathState::initial(self.model);
        let mut dw1 = vec![0.0; dims.m1];
        let mut dw2 = vec![0.0; dims.m2];
        let sqrt_dt = math::sqrt(schedule.dt);
        for n in 0..schedule.steps {
            let dt = schedule.step_len(n);
            let scale = if dt == schedule.dt {
                sqrt_dt
            } else {
                math::sqrt(dt)
            };
            rng.fill_scaled(scale, &mut dw1);
            rng.fill_scaled(scale, &mut dw2);
            integrator.step(&mut state, dt, &dw1, &dw2)?;
        }
        let payoff_log = state.payoff_log(self.model.params.beta);
        Ok(TrajectoryOutcome {
            final_state: state,
            payoff_log,
            clamped: integrator.clamped,
            steps: schedule.steps,
        })
    }
}

pub fn run_trajectory(
    model: &ModelSpec,
    control: Option<&ControlField>,
    policy: StepPolicy,
    stream: RngStream,
) -> Result<TrajectoryOutcome, SimError> {
    Simulation::new(model, control, policy).run_trajectory(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_bistable_model, build_bistable_model_with, BistableExample, FnCoefficients,
        ModelParams, RunningCost,
    };
    use alloc::sync::Arc;

    fn brownian(beta: f64) -> ModelSpec {
        let c = FnCoefficients::scalar(|_, _| 0.0, |_, y| -y, |_| 1.0, |_, _| 1.0, |_| 0.0);
        let p = ModelParams::new(beta, 0.1, 0.0, 1.0, vec![0.0], vec![0.0]).unwrap();
        ModelSpec::new(p, Arc::new(c)).unwrap()
    }

    #[test]
    fn pure_brownian_increment() {
        let m = brownian(1.0);
        let mut s = PathState::initial(&m);
        em_step(&mut s, &m, None, 0.01, &[0.37], &[-0.2]).unwrap();
        assert_eq!(s.x[0], 0.37);
        assert_eq!(s.log_z, 0.0);
        assert_eq!(s.s, 0.01);
    }

    #[test]
    fn uncontrolled_weight_stays_zero() {
        let m = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        let out = run_trajectory(&m, None, StepPolicy::fixed(1e-3), RngStream::new(1, 0)).unwrap();
        assert_eq!(out.final_state.log_z, 0.0);
        assert_eq!(out.steps, 1000);
    }

    #[test]
    fn constant_cost_payoff_is_deterministic() {
        let p = ModelParams::bistable(2.0, 0.1).unwrap();
        let zero = build_bistable_model_with(
            p.clone(),
            BistableExample::with_cost(RunningCost::Constant(0.0)),
        )
        .unwrap();
        let out =
            run_trajectory(&zero, None, StepPolicy::fixed(1e-3), RngStream::new(3, 9)).unwrap();
        assert_eq!(out.payoff_log, 0.0);
        let c =
            build_bistable_model_with(p, BistableExample::with_cost(RunningCost::Constant(1.5)))
                .unwrap();
        for id in 0..4 {
            let out =
                run_trajectory(&c, None, StepPolicy::fixed(1e-3), RngStream::new(3, id)).unwrap();
            assert!((out.payoff_log + 2.0 * 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_counts_steps() {
        let s = StepPolicy::fixed(1e-4).schedule(0.0, 1.0, 0.1).unwrap();
        assert_eq!((s.steps, s.partial), (10_000, false));
        let s = StepPolicy::fixed(0.3).schedule(0.0, 1.0, 0.1).unwrap();
        assert_eq!((s.steps, s.partial), (4, true));
        assert!((s.last_dt - 0.1).abs() < 1e-12);
        let s = StepPolicy::default().schedule(0.0, 1.0, 1e-4).unwrap();
        assert!((s.dt - 1e-5).abs() < 1e-20);
        assert!(StepPolicy::fixed(0.0).schedule(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn divergence_reports_time() {
        let c = FnCoefficients::scalar(
            |x, _| x * x * 1e200,
            |_, y| -y,
            |_| 1.0,
            |_, _| 1.0,
            |_| 0.0,
        );
        let p = ModelParams::new(1.0, 0.1, 0.0, 1.0, vec![1.0], vec![0.0]).unwrap();
        let m = ModelSpec::new(p, Arc::new(c)).unwrap();
        let err =
            run_trajectory(&m, None, StepPolicy::fixed(0.1), RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, SimError::Diverged { time } if time > 0.0));
    }

    #[test]
    fn same_stream_same_path() {
        let m = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        let a = run_trajectory(&m, None, StepPolicy::fixed(1e-3), RngStream::new(5, 17)).unwrap();
        let b = run_trajectory(&m, None, StepPolicy::fixed(1e-3), RngStream::new(5, 17)).unwrap();
        assert_eq!(a, b);
        let c = run_trajectory(&m, None, StepPolicy::fixed(1e-3), RngStream::new(5, 18)).unwrap();
        assert_ne!(a.final_state.x, c.final_state.x);
    }
}
