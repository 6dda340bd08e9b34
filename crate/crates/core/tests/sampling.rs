use std::sync::{Arc, OnceLock};

use slowfast_core::averaging::analytic_average_bistable;
use slowfast_core::control::{ControlField, ControlSettings};
use slowfast_core::estimator::estimate;
use slowfast_core::fkpde::{solve_phi0, PdeConfig, ValueGrid};
use slowfast_core::model::{
    build_bistable_model, build_bistable_model_with, BistableExample, ModelParams, RunningCost,
};
use slowfast_core::simulate::{em_step, PathState, StepPolicy};
use slowfast_core::{ModelSpec, RngStream};

fn bistable(eps: f64) -> ModelSpec {
    build_bistable_model(ModelParams::bistable(1.0, eps).unwrap()).unwrap()
}

fn phi0() -> Arc<ValueGrid> {
    static GRID: OnceLock<Arc<ValueGrid>> = OnceLock::new();
    GRID.get_or_init(|| {
        let m = bistable(0.1);
        let cfg = PdeConfig::bistable_default();
        let avg = analytic_average_bistable(&m, &cfg.nodes()).unwrap();
        Arc::new(solve_phi0(&avg, &m.params, &cfg).unwrap())
    })
    .clone()
}

#[test]
fn one_step_mean_increment_is_the_drift() {
    let m = bistable(0.1);
    let dt: f64 = 1e-4;
    let n = 100_000;
    let mut f = [0.0];
    m.coefficients().slow_drift(&[-1.0], &[0.0], &mut f);
    let mut rng = RngStream::new(42, 0).gaussian();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let mut s = PathState::initial(&m);
        let dw1 = [dt.sqrt() * rng.standard_normal()];
        let dw2 = [dt.sqrt() * rng.standard_normal()];
        em_step(&mut s, &m, None, dt, &dw1, &dw2).unwrap();
        let d = s.x[0] + 1.0;
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        (mean - f[0] * dt).abs() < 4.0 * se,
        "{mean} vs {} (se {se})",
        f[0] * dt
    );
}

#[test]
fn log_weight_of_one_controlled_step() {
    let m = bistable(0.1);
    let u = ControlField::averaged(phi0(), &m, ControlSettings::default()).unwrap();
    let (u1, u2, _) = u.eval_control(0.0, &[-1.0], &[0.0]);
    assert!(u1[0].abs() > 1e-3);
    let (dw1, dw2, dt) = ([0.013], [-0.004], 1e-4);
    let mut s = PathState::initial(&m);
    em_step(&mut s, &m, Some(&u), dt, &dw1, &dw2).unwrap();
    let expected = -(u1[0] * dw1[0] + u2[0] * dw2[0]) + 0.5 * (u1[0] * u1[0] + u2[0] * u2[0]) * dt;
    assert!((s.log_z - expected).abs() < 1e-15);
    let mut f = [0.0];
    m.coefficients().slow_drift(&[-1.0], &[0.0], &mut f);
    assert!((s.x[0] - (-1.0 + (f[0] - u1[0]) * dt + dw1[0])).abs() < 1e-15);
}

#[test]
fn reweighted_paths_have_unit_mean_without_cost() {
    // h ≡ 0 but a nontrivial control: E_Q[Z⁻¹] = 1.
    let p = ModelParams::bistable(1.0, 0.1).unwrap();
    let free = build_bistable_model_with(p, BistableExample::with_cost(RunningCost::Constant(0.0)))
        .unwrap();
    let u = ControlField::averaged(phi0(), &free, ControlSettings::default()).unwrap();
    let r = estimate(&free, Some(&u), StepPolicy::fixed(1e-3), 2000, 9).unwrap();
    assert!(r.std_err > 0.0);
    assert!(
        (r.i_n - 1.0).abs() < 4.0 * r.std_err,
        "{} ± {}",
        r.i_n,
        r.std_err
    );
}

#[test]
fn uncontrolled_free_paths_pay_exactly_one() {
    let p = ModelParams::bistable(1.0, 0.1).unwrap();
    let free = build_bistable_model_with(p, BistableExample::with_cost(RunningCost::Constant(0.0)))
        .unwrap();
    let r = estimate(&free, None, StepPolicy::fixed(1e-3), 50, 1).unwrap();
    assert_eq!((r.i_n, r.var_u), (1.0, 0.0));
}

#[test]
fn controlled_estimate_near_reference() {
    let m = bistable(0.1);
    let u = ControlField::averaged(phi0(), &m, ControlSettings::default()).unwrap();
    let r = estimate(&m, Some(&u), StepPolicy::default(), 2000, 2024).unwrap();
    assert!(
        (r.i_n - 3.52e-2).abs() < 3.0 * r.std_err,
        "{} ± {}",
        r.i_n,
        r.std_err
    );
    assert_eq!(r.n_clamped, 0);
}

#[test]
fn controlled_and_plain_sampling_agree() {
    let m = bistable(0.1);
    let u = ControlField::averaged(phi0(), &m, ControlSettings::default()).unwrap();
    let policy = StepPolicy::fixed(5e-4);
    let a = estimate(&m, Some(&u), policy, 1000, 3).unwrap();
    let b = estimate(&m, None, policy, 4000, 4).unwrap();
    let se = (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
    assert!((a.i_n - b.i_n).abs() < 3.0 * se);
    assert!(a.var_u < b.var_u);
    assert!(a.r_c > b.r_c);
}
