//! Full two-scale solutions `φ^ε` against the averaged control and Monte Carlo.

use std::sync::{Arc, OnceLock};

use slowfast_core::averaging::analytic_average_bistable;
use slowfast_core::control::{ControlField, ControlSettings};
use slowfast_core::estimator::estimate;
use slowfast_core::fkpde::{solve_phi0, solve_phi_eps_2d, PdeConfig, PdeConfig2d, ValueGrid2d};
use slowfast_core::model::{build_bistable_model, ModelParams};
use slowfast_core::simulate::StepPolicy;
use slowfast_core::validate::{control_gap_probe, GapReport, ProbeLattice};
use slowfast_core::ModelSpec;

const EPS: [f64; 3] = [0.2, 0.1, 0.05];

struct Study {
    models: Vec<ModelSpec>,
    grids: Vec<Arc<ValueGrid2d>>,
    gaps: Vec<GapReport>,
    averaged: ControlField,
}

fn study() -> &'static Study {
    static S: OnceLock<Study> = OnceLock::new();
    S.get_or_init(|| {
        let base = build_bistable_model(ModelParams::bistable(1.0, 0.1).unwrap()).unwrap();
        let cfg = PdeConfig::bistable_default();
        let avg = analytic_average_bistable(&base, &cfg.nodes()).unwrap();
        let phi0 = Arc::new(solve_phi0(&avg, &base.params, &cfg).unwrap());
        let averaged = ControlField::averaged(phi0, &base, ControlSettings::default()).unwrap();
        let lattice = ProbeLattice {
            times: vec![0.0, 0.25, 0.5, 0.75],
            xs: (0..31).map(|i| -2.0 + 0.1 * i as f64).collect(),
            ys: (0..11).map(|i| -1.5 + 0.3 * i as f64).collect(),
        };
        let mut s = Study {
            models: vec![],
            grids: vec![],
            gaps: vec![],
            averaged,
        };
        for eps in EPS {
            let m = base.with_epsilon(eps).unwrap();
            let g = Arc::new(solve_phi_eps_2d(&m, &PdeConfig2d::bistable_default()).unwrap());
            let oracle = ControlField::oracle(g.clone(), &m, ControlSettings::default()).unwrap();
            s.gaps
                .push(control_gap_probe(&s.averaged, &oracle, &lattice));
            s.models.push(m);
            s.grids.push(g);
        }
        s
    })
}

#[test]
fn fast_gradient_shrinks_with_epsilon() {
    let sup: Vec<f64> = study().grids.iter().map(|g| g.sup_dphi_dy()).collect();
    assert!(sup[0] > sup[1] && sup[1] > sup[2], "{sup:?}");
}

#[test]
fn averaged_control_approaches_the_oracle() {
    let g = &study().gaps;
    assert!(
        g[0].sup_gap > g[1].sup_gap && g[1].sup_gap > g[2].sup_gap,
        "{g:?}"
    );
    assert!(
        g[0].sup_u2 > g[1].sup_u2 && g[1].sup_u2 > g[2].sup_u2,
        "{g:?}"
    );
    assert!(g[1].sup_gap < 0.25 * g[1].sup_u1, "{:?}", g[1]);
}

#[test]
fn oracle_value_matches_controlled_monte_carlo() {
    let s = study();
    let (m, g) = (&s.models[1], &s.grids[1]);
    let phi = g.sample(0.0, -1.0, 0.0).0;
    let r = estimate(m, Some(&s.averaged), StepPolicy::default(), 10_000, 77).unwrap();
    assert!(
        (phi - r.i_n).abs() < 3.0 * r.std_err,
        "φ^ε = {phi}, MC = {} ± {}",
        r.i_n,
        r.std_err
    );
}

#[test]
fn oracle_control_also_samples_well() {
    let s = study();
    let oracle =
        ControlField::oracle(s.grids[1].clone(), &s.models[1], ControlSettings::default()).unwrap();
    let r = estimate(
        &s.models[1],
        Some(&oracle),
        StepPolicy::fixed(5e-4),
        1000,
        78,
    )
    .unwrap();
    assert!(r.re_u < 0.5, "{}", r.re_u);
}
