//! Backward Feynman–Kac solves.
//!
//! `φ₀(t, x) = E[exp(−β∫_t^T h̃(x̃_s) ds) | x̃_t = x]` solves
//!
//! ```text
//! ∂ₜφ₀ + L̃φ₀ − βh̃φ₀ = 0,   φ₀(T, ·) = 1,   L̃ = f̃ ∂ₓ + (α̃²/2β) ∂ₓₓ.
//! ```
//!
//! Time is discretized first (Rothe's method): each backward step solves
//!
//! ```text
//! (1/Δt − L̃) φʲ = (1/Δt − βh̃) φʲ⁺¹
//! ```
//!
//! and `L̃` is replaced by the exponentially fitted jump generator of
//! [`fitting`]. The system matrix is an M-matrix, so each step preserves
//! positivity as long as `1 − βh̃Δt ≥ 0`.

pub mod fitting;
mod grid2d;

pub use grid2d::{solve_phi_eps_2d, PdeConfig2d, ValueGrid2d};

use alloc::vec;
use alloc::vec::Vec;

use crate::averaging::{uniform_grid, AveragedModel};
use crate::linalg::{LinalgError, Tridiagonal};
use crate::math;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PdeError {
    #[error("ill-posed configuration: {0}")]
    IllPosed(&'static str),
    #[error("averaged coefficients cover [{have_lo}, {have_hi}], PDE domain needs [{lo}, {hi}]")]
    NotCovered {
        lo: f64,
        hi: f64,
        have_lo: f64,
        have_hi: f64,
    },
    #[error("singular step matrix: {0}")]
    Singular(#[from] LinalgError),
    #[error("φ ≤ 0 at time index {time_index}, node {node}: grid too coarse or Δt too large")]
    Positivity { time_index: usize, node: usize },
    #[error("φ = {value} > 1 at time index {time_index}, node {node} despite h ≥ 0")]
    MaximumPrinciple {
        time_index: usize,
        node: usize,
        value: f64,
    },
    #[error("log transform needs φ > 0 (found {value} at index {index})")]
    Domain { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Reflecting walls.
    NoFlux,
    /// `φ = 1` on both walls.
    DirichletOne,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeConfig {
    pub n_x: usize,
    pub m: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub boundary: Boundary,
}

impl PdeConfig {
    /// `[-4, 6]`, 2000 nodes, 1000 steps, no-flux walls.
    pub fn bistable_default() -> Self {
        Self {
            n_x: 2000,
            m: 1000,
            x_lo: -4.0,
            x_hi: 6.0,
            boundary: Boundary::NoFlux,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if self.n_x < 3 {
            return Err(PdeError::IllPosed("n_x must be at least 3"));
        }
        if self.m < 1 {
            return Err(PdeError::IllPosed("m must be at least 1"));
        }
        if !(self.x_lo < self.x_hi) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(PdeError::IllPosed("domain needs finite x_lo < x_hi"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> Vec<f64> {
        uniform_grid(self.x_lo, self.x_hi, self.n_x)
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_x - 1) as f64
    }
}

/// `φ₀` and `∂ₓφ₀` on a uniform (time × space) grid, row `j` at `t0 + jΔt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub t0: f64,
    pub horizon: f64,
    pub m: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    /// `(m+1) × n_x`, row-major by time.
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
}

impl ValueGrid {
    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.m as f64
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_x - 1) as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.m {
            self.horizon
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_x {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.dx()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.m).map(|j| self.time(j)).collect()
    }

    pub fn space(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.node(i)).collect()
    }

    #[inline]
    pub fn phi_at(&self, j: usize, i: usize) -> f64 {
        self.phi[j * self.n_x + i]
    }

    #[inline]
    pub fn dphi_at(&self, j: usize, i: usize) -> f64 {
        self.dphi[j * self.n_x + i]
    }

    pub fn phi_row(&self, j: usize) -> &[f64] {
        &self.phi[j * self.n_x..(j + 1) * self.n_x]
    }

    pub fn min_phi(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation of `φ₀(t0, ·)`.
    pub fn phi_initial(&self, x: f64) -> f64 {
        let pos = ((x - self.x_lo) / self.dx()).clamp(0.0, (self.n_x - 1) as f64);
        let i = (math::floor(pos) as usize).min(self.n_x - 2);
        let t = pos - i as f64;
        self.phi_at(0, i) * (1.0 - t) + self.phi_at(0, i + 1) * t
    }

    /// Checks that the metadata and both matrices agree in shape.
    pub fn validate(&self) -> Result<(), PdeError> {
        let cfg = PdeConfig {
            n_x: self.n_x,
            m: self.m,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            boundary: Boundary::NoFlux,
        };
        cfg.validate()?;
        if !(self.t0 < self.horizon) {
            return Err(PdeError::IllPosed("grid needs t0 < T"));
        }
        let len = (self.m + 1) * self.n_x;
        if self.phi.len() != len || self.dphi.len() != len {
            return Err(PdeError::IllPosed(
                "phi/dphi size does not match (m+1) × n_x",
            ));
        }
        Ok(())
    }
}

/// Second-order derivative of a uniformly sampled row.
pub(crate) fn differentiate(values: &[f64], dx: f64, out: &mut [f64]) {
    let n = values.len();
    let inv = 1.0 / (2.0 * dx);
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) * inv;
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) * inv;
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) * inv;
}

fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + p.abs()))
}

/// Assembles `1/Δt − L` for the fitted 1D generator.
fn step_matrix(
    drift: &[f64],
    diffusion: &[f64],
    dx: f64,
    dt: f64,
    boundary: Boundary,
) -> Tridiagonal {
    let n = drift.len();
    let mut a = Tridiagonal::zeros(n);
    for i in 0..n {
        a.diag[i] = 1.0 / dt;
    }
    for i in 0..n - 1 {
        let b = 0.5 * (drift[i] + drift[i + 1]);
        let d = 0.5 * (diffusion[i] + diffusion[i + 1]);
        let (up, down) = fitting::interface_rates(b, d, dx);
        a.diag[i] += up;
        a.upper[i] = -up;
        a.diag[i + 1] += down;
        a.lower[i + 1] = -down;
    }
    if boundary == Boundary::DirichletOne {
        for i in [0, n - 1] {
            a.diag[i] = 1.0;
            a.lower[i] = 0.0;
            a.upper[i] = 0.0;
        }
    }
    a
}

/// Backward Rothe sweep for `φ₀` on the averaged dynamics.
pub fn solve_phi0(
    avg: &AveragedModel,
    params: &ModelParams,
    cfg: &PdeConfig,
) -> Result<ValueGrid, PdeError> {
    cfg.validate()?;
    if !avg.covers(cfg.x_lo, cfg.x_hi) {
        let (have_lo, have_hi) = avg.x_range();
        return Err(PdeError::NotCovered {
            lo: cfg.x_lo,
            hi: cfg.x_hi,
            have_lo,
            have_hi,
        });
    }
    let nodes = cfg.nodes();
    let table;
    let coeffs = if same_grid(&avg.grid, &nodes) {
        avg
    } else {
        table = avg
            .resample(&nodes)
            .map_err(|_| PdeError::IllPosed("cannot resample averaged coefficients"))?;
        &table
    };
    let beta = params.beta;
    let n = cfg.n_x;
    let dx = cfg.dx();
    let dt = (params.horizon - params.t0) / cfg.m as f64;
    let diffusion: Vec<f64> = coeffs
        .a_tilde
        .iter()
        .map(|a| a * a / (2.0 * beta))
        .collect();
    let lu = step_matrix(&coeffs.f_tilde, &diffusion, dx, dt, cfg.boundary).factor()?;
    let reaction: Vec<f64> = coeffs.h_tilde.iter().map(|h| 1.0 / dt - beta * h).collect();
    let nonnegative_cost = coeffs.h_tilde.iter().all(|&h| h >= 0.0);
    // h ≡ 0: φ ≡ 1 solves every step exactly; skip the rounding of the solves.
    let cost_free = coeffs.h_tilde.iter().all(|&h| h == 0.0);

    let rows = cfg.m + 1;
    let mut phi = vec![0.0; rows * n];
    let mut dphi = vec![0.0; rows * n];
    phi[cfg.m * n..].fill(1.0);
    if cost_free {
        phi.fill(1.0);
    }
    let mut rhs = vec![0.0; n];
    for j in (0..cfg.m).rev().filter(|_| !cost_free) {
        let (head, tail) = phi.split_at_mut((j + 1) * n);
        let next = &tail[..n];
        for i in 0..n {
            rhs[i] = reaction[i] * next[i];
        }
        if cfg.boundary == Boundary::DirichletOne {
            rhs[0] = 1.0;
            rhs[n - 1] = 1.0;
        }
        lu.solve_in_place(&mut rhs)?;
        for (i, &v) in rhs.iter().enumerate() {
            if !(v > 0.0) {
                return Err(PdeError::Positivity {
                    time_index: j,
                    node: i,
                });
            }
            if nonnegative_cost && v > 1.0 + 1e-12 {
                return Err(PdeError::MaximumPrinciple {
                    time_index: j,
                    node: i,
                    value: v,
                });
            }
        }
        head[j * n..].copy_from_slice(&rhs);
    }
    for j in 0..rows {
        differentiate(&phi[j * n..(j + 1) * n], dx, &mut dphi[j * n..(j + 1) * n]);
    }
    Ok(ValueGrid {
        t0: params.t0,
        horizon: params.horizon,
        m: cfg.m,
        x_lo: cfg.x_lo,
        x_hi: cfg.x_hi,
        n_x: n,
        phi,
        dphi,
    })
}

/// `U₀ = −β⁻¹ ln φ₀` and `∂ₓU₀ = −β⁻¹ ∂ₓφ₀ / φ₀` on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogValueGrid {
    pub beta: f64,
    pub grid_shape: (usize, usize),
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

impl LogValueGrid {
    pub fn u_at(&self, j: usize, i: usize) -> f64 {
        self.u[j * self.grid_shape.1 + i]
    }

    pub fn du_at(&self, j: usize, i: usize) -> f64 {
        self.du[j * self.grid_shape.1 + i]
    }
}

pub fn log_transform(grid: &ValueGrid, beta: f64) -> Result<LogValueGrid, PdeError> {
    let mut u = Vec::with_capacity(grid.phi.len());
    let mut du = Vec::with_capacity(grid.phi.len());
    for (index, (&p, &dp)) in grid.phi.iter().zip(&grid.dphi).enumerate() {
        if !(p > 0.0) {
            return Err(PdeError::Domain { index, value: p });
        }
        u.push(-math::ln(p) / beta);
        du.push(-dp / (beta * p));
    }
    Ok(LogValueGrid {
        beta,
        grid_shape: (grid.m + 1, grid.n_x),
        u,
        du,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::Provenance;

    fn flat_model(nodes: &[f64], f: impl Fn(f64) -> f64, h: impl Fn(f64) -> f64) -> AveragedModel {
        AveragedModel::new(
            nodes.to_vec(),
            nodes.iter().map(|&x| f(x)).collect(),
            vec![1.0; nodes.len()],
            nodes.iter().map(|&x| h(x)).collect(),
            Provenance::Analytic,
        )
        .unwrap()
    }

    fn params(beta: f64) -> ModelParams {
        ModelParams::new(beta, 0.1, 0.0, 1.0, vec![0.0], vec![0.0]).unwrap()
    }

    #[test]
    fn zero_cost_keeps_phi_at_one() {
        let cfg = PdeConfig {
            n_x: 101,
            m: 50,
            x_lo: -3.0,
            x_hi: 3.0,
            boundary: Boundary::NoFlux,
        };
        let avg = flat_model(&cfg.nodes(), |x| -x * x * x, |_| 0.0);
        let g = solve_phi0(&avg, &params(2.0), &cfg).unwrap();
        assert!(g.phi.iter().all(|&p| p == 1.0));
        assert!(g.dphi.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_cost_decays_exponentially() {
        let (beta, c) = (1.5, 0.8);
        let cfg = PdeConfig {
            n_x: 21,
            m: 10_000,
            x_lo: -1.0,
            x_hi: 1.0,
            boundary: Boundary::NoFlux,
        };
        let avg = flat_model(&cfg.nodes(), |x| -x, |_| c);
        let g = solve_phi0(&avg, &params(beta), &cfg).unwrap();
        for j in [0, 5000, 9999] {
            let exact = (-beta * c * (1.0 - g.time(j))).exp();
            for i in 0..cfg.n_x {
                assert!((g.phi_at(j, i) / exact - 1.0).abs() < 1e-3);
            }
        }
        let u = log_transform(&g, beta).unwrap();
        assert!((u.u_at(0, 10) - c).abs() < 1e-3);
    }

    #[test]
    fn dirichlet_walls_stay_at_one() {
        let cfg = PdeConfig {
            n_x: 41,
            m: 20,
            x_lo: -2.0,
            x_hi: 2.0,
            boundary: Boundary::DirichletOne,
        };
        let avg = flat_model(&cfg.nodes(), |_| 0.0, |x| x * x);
        let g = solve_phi0(&avg, &params(1.0), &cfg).unwrap();
        for j in 0..=cfg.m {
            assert_eq!(g.phi_at(j, 0), 1.0);
            assert_eq!(g.phi_at(j, 40), 1.0);
            assert!(g.phi_at(j, 20) <= 1.0);
        }
    }

    #[test]
    fn coarse_time_step_is_flagged() {
        // 1 − βhΔt < 0 everywhere makes the first backward step negative.
        let cfg = PdeConfig {
            n_x: 11,
            m: 1,
            x_lo: -1.0,
            x_hi: 1.0,
            boundary: Boundary::NoFlux,
        };
        let avg = flat_model(&cfg.nodes(), |_| 0.0, |_| 5.0);
        assert!(matches!(
            solve_phi0(&avg, &params(1.0), &cfg),
            Err(PdeError::Positivity { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let nodes = uniform_grid(-1.0, 1.0, 11);
        let avg = flat_model(&nodes, |_| 0.0, |_| 0.0);
        let mut cfg = PdeConfig {
            n_x: 2,
            m: 1,
            x_lo: -1.0,
            x_hi: 1.0,
            boundary: Boundary::NoFlux,
        };
        assert!(matches!(
            solve_phi0(&avg, &params(1.0), &cfg),
            Err(PdeError::IllPosed(_))
        ));
        cfg.n_x = 11;
        cfg.x_hi = 2.0;
        assert!(matches!(
            solve_phi0(&avg, &params(1.0), &cfg),
            Err(PdeError::NotCovered { .. })
        ));
    }

    #[test]
    fn log_transform_rejects_nonpositive() {
        let g = ValueGrid {
            t0: 0.0,
            horizon: 1.0,
            m: 1,
            x_lo: 0.0,
            x_hi: 1.0,
            n_x: 3,
            phi: vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            dphi: vec![0.0; 6],
        };
        assert_eq!(
            log_transform(&g, 1.0),
            Err(PdeError::Domain {
                index: 1,
                value: 0.0
            })
        );
    }

    #[test]
    fn derivative_is_exact_for_quadratics() {
        let x: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        let v: Vec<f64> = x.iter().map(|x| 2.0 * x * x - x).collect();
        let mut d = vec![0.0; 6];
        differentiate(&v, 0.5, &mut d);
        for (xi, di) in x.iter().zip(&d) {
            assert!((di - (4.0 * xi - 1.0)).abs() < 1e-12);
        }
    }
}
