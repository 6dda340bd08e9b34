//! Reduction of per-path log payoffs into the importance-sampling estimate.
//!
//! With `p_i = ln( exp(−β∫h) / Z )` for path `i`:
//!
//! ```text
//! I_N   = (1/N) Σ e^{p_i}
//! Var_u = (1/N) Σ (e^{p_i} − I_N)²
//! RE_u  = √Var_u / I_N
//! ```
//!
//! Both passes run in log space so payoffs far below the `f64` range of the
//! linear-space sums remain usable.

use alloc::vec::Vec;

use crate::control::ControlField;
use crate::math;
use crate::model::ModelSpec;
use crate::rng::RngStream;
use crate::simulate::{SimError, Simulation, StepPolicy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimateError {
    #[error("need at least 2 trajectories, got {0}")]
    TooFewSamples(usize),
    #[error("{failed} of {total} trajectories diverged (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: SimError,
    },
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("epsilon list must be non-empty and strictly decreasing")]
    InvalidSweep,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// What the estimator keeps from one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySummary {
    pub payoff_log: f64,
    pub crossed: bool,
    pub clamped: u64,
}

/// Run metadata echoed into the report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportMeta {
    pub beta: f64,
    pub epsilon: f64,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    pub beta: f64,
    pub epsilon: f64,
    pub dt: f64,
    /// Trajectories requested.
    pub n: usize,
    /// Trajectories that diverged and were dropped.
    pub n_failed: usize,
    pub i_n: f64,
    pub log_i_n: f64,
    pub var_u: f64,
    pub re_u: f64,
    pub std_err: f64,
    /// Fraction of paths with `x ≥ threshold` at some grid time.
    pub r_c: f64,
    pub n_clamped: u64,
    pub seed: u64,
    /// Seconds; filled in by drivers that time the run.
    pub wall_clock: f64,
}

/// Largest tolerated fraction of diverged paths.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Folds outcomes, in index order, into a report.
pub fn summarize(
    outcomes: &[Result<TrajectorySummary, SimError>],
    meta: ReportMeta,
) -> Result<EstimatorReport, EstimateError> {
    let total = outcomes.len();
    if total < 2 {
        return Err(EstimateError::TooFewSamples(total));
    }
    let mut payoffs = Vec::with_capacity(total);
    let mut crossed = 0usize;
    let mut clamped = 0u64;
    let mut first_failure = None;
    for o in outcomes {
        match o {
            Ok(s) => {
                payoffs.push(s.payoff_log);
                crossed += usize::from(s.crossed);
                clamped += s.clamped;
            }
            Err(e) => {
                first_failure.get_or_insert_with(|| e.clone());
            }
        }
    }
    let failed = total - payoffs.len();
    if let Some(first) = first_failure {
        if failed as f64 > MAX_FAILURE_FRACTION * total as f64 || payoffs.len() < 2 {
            return Err(EstimateError::TooManyFailures {
                failed,
                total,
                first,
            });
        }
    }
    let stats = log_space_moments(&payoffs);
    let n_ok = payoffs.len() as f64;
    Ok(EstimatorReport {
        beta: meta.beta,
        epsilon: meta.epsilon,
        dt: meta.dt,
        n: total,
        n_failed: failed,
        i_n: stats.mean,
        log_i_n: stats.log_mean,
        var_u: stats.variance,
        re_u: stats.relative_error,
        std_err: math::sqrt(stats.variance / n_ok),
        r_c: crossed as f64 / n_ok,
        n_clamped: clamped,
        seed: meta.seed,
        wall_clock: 0.0,
    })
}

/// Mean, variance (1/N normalisation) and relative error of `e^{p_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMoments {
    pub log_mean: f64,
    pub mean: f64,
    pub variance: f64,
    pub relative_error: f64,
}

pub fn log_space_moments(log_values: &[f64]) -> LogMoments {
    let n = log_values.len() as f64;
    if let Some((&first, rest)) = log_values.split_first() {
        if rest.iter().all(|&v| v.to_bits() == first.to_bits()) {
            // Identical payoffs: return exact moments instead of `ln(N e^p) − ln N`.
            let mean = math::exp(first);
            return LogMoments {
                log_mean: first,
                mean,
                variance: 0.0,
                relative_error: 0.0,
            };
        }
    }
    let log_mean = math::log_sum_exp(log_values) - math::ln(n);
    if !log_mean.is_finite() {
        return LogMoments {
            log_mean,
            mean: 0.0,
            variance: 0.0,
            relative_error: 0.0,
        };
    }
    // (1/N) Σ (e^{p − ln I} − 1)², i.e. the squared relative error.
    let rel_sq = math::pairwise_sum_by(log_values, &|p| {
        let d = math::expm1(p - log_mean);
        d * d
    }) / n;
    let mean = math::exp(log_mean);
    LogMoments {
        log_mean,
        mean,
        variance: rel_sq * mean * mean,
        relative_error: math::sqrt(rel_sq),
    }
}

/// Serial estimate; path `i` uses stream `(seed, i)`.
pub fn estimate(
    model: &ModelSpec,
    control: Option<&ControlField>,
    policy: StepPolicy,
    n: usize,
    seed: u64,
) -> Result<EstimatorReport, EstimateError> {
    estimate_with(&Simulation::new(model, control, policy), n, seed)
}

pub fn estimate_with(
    sim: &Simulation<'_>,
    n: usize,
    seed: u64,
) -> Result<EstimatorReport, EstimateError> {
    if n < 2 {
        return Err(EstimateError::TooFewSamples(n));
    }
    let schedule = sim.schedule()?;
    let outcomes: Vec<_> = (0..n as u64)
        .map(|i| {
            sim.run_with_schedule(&schedule, RngStream::new(seed, i))
                .map(|o| o.summary())
        })
        .collect();
    summarize(&outcomes, report_meta(sim, schedule.dt, seed))
}

pub fn report_meta(sim: &Simulation<'_>, dt: f64, seed: u64) -> ReportMeta {
    ReportMeta {
        beta: sim.model.params.beta,
        epsilon: sim.model.params.epsilon,
        dt,
        seed,
    }
}

/// One report per ε, all sharing `control` (φ₀ does not depend on ε).
pub fn sweep_epsilon(
    model: &ModelSpec,
    control: Option<&ControlField>,
    policy: StepPolicy,
    eps_list: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, EstimatorReport)>, EstimateError> {
    check_sweep(eps_list)?;
    eps_list
        .iter()
        .map(|&eps| {
            let m = model.with_epsilon(eps)?;
            estimate(&m, control, policy, n, seed).map(|r| (eps, r))
        })
        .collect()
}

pub fn check_sweep(eps_list: &[f64]) -> Result<(), EstimateError> {
    let decreasing = eps_list.windows(2).all(|w| w[1] < w[0]);
    if eps_list.is_empty() || !decreasing || eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(EstimateError::InvalidSweep);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn ok(p: f64, crossed: bool) -> Result<TrajectorySummary, SimError> {
        Ok(TrajectorySummary {
            payoff_log: p,
            crossed,
            clamped: 0,
        })
    }

    const META: ReportMeta = ReportMeta {
        beta: 1.0,
        epsilon: 0.1,
        dt: 1e-4,
        seed: 0,
    };

    #[test]
    fn moments_match_linear_space() {
        let vals = [0.1f64, 0.5, 0.02, 0.3];
        let outcomes: Vec<_> = vals.iter().map(|v| ok(v.ln(), false)).collect();
        let r = summarize(&outcomes, META).unwrap();
        let mean = vals.iter().sum::<f64>() / 4.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((r.i_n - mean).abs() < 1e-15);
        assert!((r.var_u - var).abs() < 1e-15);
        assert!((r.re_u - var.sqrt() / mean).abs() < 1e-13);
        assert!((r.std_err - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tiny_payoffs_survive() {
        let outcomes: Vec<_> = [-700.0, -701.0, -702.0]
            .iter()
            .map(|&p| ok(p, true))
            .collect();
        let r = summarize(&outcomes, META).unwrap();
        assert!(r.log_i_n < -699.0 && r.log_i_n > -702.0);
        assert!(r.re_u > 0.0 && r.re_u < 1.0);
        assert_eq!(r.r_c, 1.0);
    }

    #[test]
    fn failures_are_counted_then_fatal() {
        let mut outcomes: Vec<_> = (0..200).map(|_| ok(0.0, false)).collect();
        outcomes[7] = Err(SimError::Diverged { time: 0.5 });
        let r = summarize(&outcomes, META).unwrap();
        assert_eq!(r.n_failed, 1);
        assert_eq!(r.i_n, 1.0);
        outcomes[8] = Err(SimError::Diverged { time: 0.5 });
        outcomes[9] = Err(SimError::Diverged { time: 0.5 });
        assert!(matches!(
            summarize(&outcomes, META),
            Err(EstimateError::TooManyFailures { failed: 3, .. })
        ));
    }

    #[test]
    fn needs_two_samples() {
        assert_eq!(
            summarize(&[ok(0.0, false)], META),
            Err(EstimateError::TooFewSamples(1))
        );
    }

    #[test]
    fn sweep_must_decrease() {
        assert!(check_sweep(&[0.1, 0.01]).is_ok());
        assert!(check_sweep(&[]).is_err());
        assert!(check_sweep(&[0.01, 0.1]).is_err());
        assert!(check_sweep(&[0.1, 0.1]).is_err());
    }

    proptest! {
        #[test]
        fn report_invariants(logs in proptest::collection::vec(-50.0f64..5.0, 2..60), flags in proptest::collection::vec(any::<bool>(), 60)) {
            let outcomes: Vec<_> = logs.iter().zip(&flags).map(|(&p, &c)| ok(p, c)).collect();
            let r = summarize(&outcomes, META).unwrap();
            prop_assert!(r.var_u >= 0.0);
            prop_assert!((0.0..=1.0).contains(&r.r_c));
            prop_assert!((r.re_u - r.var_u.sqrt() / r.i_n).abs() <= 1e-9 * (1.0 + r.re_u));
            // Shifting every log payoff rescales I and leaves RE unchanged.
            let shifted: Vec<_> = logs.iter().map(|&p| ok(p - 300.0, false)).collect();
            let s = summarize(&shifted, META).unwrap();
            prop_assert!((s.log_i_n - (r.log_i_n - 300.0)).abs() < 1e-9);
            prop_assert!((s.re_u - r.re_u).abs() < 1e-9 * (1.0 + r.re_u));
        }
    }

    #[test]
    fn constant_payoffs_have_zero_variance() {
        let outcomes = vec![ok(-1.0, false); 10];
        let r = summarize(&outcomes, META).unwrap();
        assert_eq!(r.var_u, 0.0);
        assert_eq!(r.re_u, 0.0);
    }
}
