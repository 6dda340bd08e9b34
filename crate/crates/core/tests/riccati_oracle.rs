//! Ornstein–Uhlenbeck slow dynamics with quadratic cost have a Gaussian
//! solution `φ = exp(−A(s)x² − B(s))`, where `A, B` solve a Riccati system.

use slowfast_core::averaging::{uniform_grid, AveragedModel, Provenance};
use slowfast_core::fkpde::{log_transform, solve_phi0, Boundary, PdeConfig};
use slowfast_core::model::ModelParams;

/// Integrates `A' = 2A + 2A²/β − β`, `B' = −A/β` backward from `A(T) = B(T) = 0`.
fn riccati(beta: f64, horizon: f64, steps: usize) -> (f64, f64) {
    let rhs = |a: f64| (2.0 * a + 2.0 * a * a / beta - beta, -a / beta);
    let h = -horizon / steps as f64;
    let (mut a, mut b) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        let k1 = rhs(a);
        let k2 = rhs(a + 0.5 * h * k1.0);
        let k3 = rhs(a + 0.5 * h * k2.0);
        let k4 = rhs(a + h * k3.0);
        a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        b += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (a, b)
}

fn ou_model(cfg: &PdeConfig) -> AveragedModel {
    let grid = uniform_grid(cfg.x_lo, cfg.x_hi, cfg.n_x);
    let f = grid.iter().map(|x| -x).collect();
    let h = grid.iter().map(|x| x * x).collect();
    AveragedModel::new(
        grid.clone(),
        f,
        vec![1.0; grid.len()],
        h,
        Provenance::Analytic,
    )
    .unwrap()
}

fn params(beta: f64) -> ModelParams {
    ModelParams::new(beta, 0.1, 0.0, 1.0, vec![0.0], vec![0.0]).unwrap()
}

#[test]
fn riccati_matches_closed_form_for_constant_coefficients() {
    // With A(T)=0 the solution at s=T is trivially zero; check the limit A → fixed point.
    let (a, _) = riccati(1.0, 40.0, 400_000);
    let fixed = (-2.0 + (4.0f64 + 8.0).sqrt()) / 4.0;
    assert!((a - fixed).abs() < 1e-10, "{a} vs {fixed}");
}

#[test]
fn phi0_at_origin_matches_riccati() {
    let cfg = PdeConfig {
        n_x: 2000,
        m: 1000,
        x_lo: -6.0,
        x_hi: 6.0,
        boundary: Boundary::NoFlux,
    };
    let g = solve_phi0(&ou_model(&cfg), &params(1.0), &cfg).unwrap();
    let (_, b) = riccati(1.0, 1.0, 100_000);
    let exact = (-b).exp();
    let got = g.phi_initial(0.0);
    let rel = (got / exact - 1.0).abs();
    println!("φ₀(0,0) = {got:.10}, Riccati {exact:.10}, rel {rel:.2e}");
    assert!(rel < 1e-3);
}

#[test]
fn whole_profile_matches_riccati() {
    let cfg = PdeConfig {
        n_x: 1201,
        m: 1000,
        x_lo: -6.0,
        x_hi: 6.0,
        boundary: Boundary::NoFlux,
    };
    let g = solve_phi0(&ou_model(&cfg), &params(1.0), &cfg).unwrap();
    let (a, b) = riccati(1.0, 1.0, 100_000);
    let logs = log_transform(&g, 1.0).unwrap();
    for i in (0..cfg.n_x).step_by(50) {
        let x = g.node(i);
        if x.abs() > 2.0 {
            continue;
        }
        let u = a * x * x + b;
        assert!(
            (logs.u_at(0, i) - u).abs() < 5e-3 * (1.0 + u),
            "x = {x}: {} vs {u}",
            logs.u_at(0, i)
        );
        assert!((logs.du_at(0, i) - 2.0 * a * x).abs() < 2e-2, "x = {x}");
    }
}

#[test]
fn refinement_reduces_the_error() {
    let (_, b) = riccati(1.0, 1.0, 100_000);
    let exact = (-b).exp();
    let err = |n_x: usize, m: usize| {
        let cfg = PdeConfig {
            n_x,
            m,
            x_lo: -6.0,
            x_hi: 6.0,
            boundary: Boundary::NoFlux,
        };
        let g = solve_phi0(&ou_model(&cfg), &params(1.0), &cfg).unwrap();
        (g.phi_initial(0.0) - exact).abs()
    };
    let coarse = err(201, 50);
    let fine = err(801, 200);
    assert!(fine < 0.5 * coarse, "{fine} vs {coarse}");
}
