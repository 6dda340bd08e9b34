//! Full `(x, y)` Feynman–Kac solve for `φ^ε`, used as an oracle for small ε studies.
//!
//! Generator: `ε⁻¹L₀ + L₁` with `L₁ = f∂ₓ + (α₁α₁ᵀ/2β)∂ₓₓ` and
//! `L₀ = g∂_y + (α₂α₂ᵀ/2β)∂_yy`. Both directions use fitted rates; each
//! Rothe step is one banded solve (bandwidth `n_y`) against a matrix that
//! is factored once.

use alloc::vec;
use alloc::vec::Vec;

use super::fitting::{cell_peclet, interface_rates};
use super::{differentiate, Boundary, PdeError};
use crate::averaging::uniform_grid;
use crate::linalg::Banded;
use crate::math;
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeConfig2d {
    pub n_x: usize,
    pub n_y: usize,
    /// Implicit Euler steps over `[t0, T]`.
    pub m: usize,
    /// Keep every `store_every`-th time level; must divide `m`.
    pub store_every: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub boundary: Boundary,
}

impl PdeConfig2d {
    /// Desk-scale box for the bistable example.
    pub fn bistable_default() -> Self {
        Self {
            n_x: 141,
            n_y: 91,
            m: 800,
            store_every: 4,
            x_lo: -3.0,
            x_hi: 4.0,
            y_lo: -4.5,
            y_hi: 4.5,
            boundary: Boundary::NoFlux,
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if self.n_x < 3 || self.n_y < 3 {
            return Err(PdeError::IllPosed("n_x and n_y must be at least 3"));
        }
        if self.m < 1 {
            return Err(PdeError::IllPosed("m must be at least 1"));
        }
        if self.store_every < 1 || self.m % self.store_every != 0 {
            return Err(PdeError::IllPosed("store_every must divide m"));
        }
        if !(self.x_lo < self.x_hi && self.y_lo < self.y_hi) {
            return Err(PdeError::IllPosed(
                "domain needs x_lo < x_hi and y_lo < y_hi",
            ));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n_x - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_hi - self.y_lo) / (self.n_y - 1) as f64
    }

    /// Number of stored time levels.
    pub fn levels(&self) -> usize {
        self.m / self.store_every + 1
    }
}

/// `φ^ε` with both gradients on the stored levels, `levels × n_x × n_y`, `y` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid2d {
    pub t0: f64,
    pub horizon: f64,
    pub epsilon: f64,
    pub config: PdeConfig2d,
    pub phi: Vec<f64>,
    pub dphi_dx: Vec<f64>,
    pub dphi_dy: Vec<f64>,
    /// Largest cell Péclet number over both directions.
    pub max_peclet: f64,
}

impl ValueGrid2d {
    #[inline]
    pub fn index(&self, j: usize, i: usize, k: usize) -> usize {
        (j * self.config.n_x + i) * self.config.n_y + k
    }

    /// Spacing of the stored time levels.
    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / (self.config.levels() - 1) as f64
    }

    pub fn phi_at(&self, j: usize, i: usize, k: usize) -> f64 {
        self.phi[self.index(j, i, k)]
    }

    /// Trilinear interpolation of `(φ, ∂ₓφ, ∂_yφ)`, clamped to the box.
    pub fn sample(&self, s: f64, x: f64, y: f64) -> (f64, f64, f64) {
        let c = &self.config;
        let locate = |v: f64, lo: f64, step: f64, n: usize| {
            let pos = ((v - lo) / step).clamp(0.0, (n - 1) as f64);
            let i = (math::floor(pos) as usize).min(n - 2);
            (i, pos - i as f64)
        };
        let (j, tj) = locate(s, self.t0, self.dt(), c.levels());
        let (i, ti) = locate(x, c.x_lo, c.dx(), c.n_x);
        let (k, tk) = locate(y, c.y_lo, c.dy(), c.n_y);
        let mut out = [0.0; 3];
        for (field, o) in [&self.phi, &self.dphi_dx, &self.dphi_dy]
            .into_iter()
            .zip(out.iter_mut())
        {
            let mut acc = 0.0;
            for (dj, wj) in [(0, 1.0 - tj), (1, tj)] {
                for (di, wi) in [(0, 1.0 - ti), (1, ti)] {
                    for (dk, wk) in [(0, 1.0 - tk), (1, tk)] {
                        let w = wj * wi * wk;
                        if w != 0.0 {
                            acc += w * field[self.index(j + dj, i + di, k + dk)];
                        }
                    }
                }
            }
            *o = acc;
        }
        (out[0], out[1], out[2])
    }

    /// `max |∂_yφ^ε|` over the grid.
    pub fn sup_dphi_dy(&self) -> f64 {
        self.dphi_dy.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Backward implicit Euler on the full generator of a `k = l = 1` model.
pub fn solve_phi_eps_2d(model: &ModelSpec, cfg: &PdeConfig2d) -> Result<ValueGrid2d, PdeError> {
    cfg.validate()?;
    let d = model.dims();
    if d.k != 1 || d.l != 1 {
        return Err(PdeError::IllPosed("2D oracle requires k = l = 1"));
    }
    let c = model.coefficients();
    let p = &model.params;
    let (beta, eps) = (p.beta, p.epsilon);
    let (nx, ny) = (cfg.n_x, cfg.n_y);
    let (dx, dy) = (cfg.dx(), cfg.dy());
    let dt = (p.horizon - p.t0) / cfg.m as f64;
    let xs = uniform_grid(cfg.x_lo, cfg.x_hi, nx);
    let ys = uniform_grid(cfg.y_lo, cfg.y_hi, ny);
    let n = nx * ny;
    let at = |i: usize, k: usize| i * ny + k;

    let mut drift_x = vec![0.0; n];
    let mut diff_x = vec![0.0; n];
    let mut drift_y = vec![0.0; n];
    let mut diff_y = vec![0.0; n];
    let mut cost = vec![0.0; nx];
    let mut f = [0.0];
    let mut g = [0.0];
    let mut a1 = vec![0.0; d.m1];
    let mut a2 = vec![0.0; d.m2];
    for (i, &x) in xs.iter().enumerate() {
        c.slow_diffusion(&[x], &mut a1);
        let a1sq: f64 = a1.iter().map(|v| v * v).sum();
        cost[i] = c.running_cost(&[x]);
        for (k, &y) in ys.iter().enumerate() {
            c.slow_drift(&[x], &[y], &mut f);
            c.fast_drift(&[x], &[y], &mut g);
            c.fast_diffusion(&[x], &[y], &mut a2);
            let a2sq: f64 = a2.iter().map(|v| v * v).sum();
            drift_x[at(i, k)] = f[0];
            diff_x[at(i, k)] = a1sq / (2.0 * beta);
            drift_y[at(i, k)] = g[0] / eps;
            diff_y[at(i, k)] = a2sq / (2.0 * beta * eps);
        }
    }

    let mut a = Banded::zeros(n, ny);
    for idx in 0..n {
        a.add(idx, idx, 1.0 / dt);
    }
    let mut max_peclet = 0.0f64;
    let mut couple = |a: &mut Banded, p: usize, q: usize, b: f64, dd: f64, h: f64| {
        max_peclet = max_peclet.max(cell_peclet(b, dd, h));
        let (fwd, bwd) = interface_rates(b, dd, h);
        a.add(p, p, fwd);
        a.add(p, q, -fwd);
        a.add(q, q, bwd);
        a.add(q, p, -bwd);
    };
    for i in 0..nx {
        for k in 0..ny {
            let p0 = at(i, k);
            if i + 1 < nx {
                let q = at(i + 1, k);
                couple(
                    &mut a,
                    p0,
                    q,
                    0.5 * (drift_x[p0] + drift_x[q]),
                    0.5 * (diff_x[p0] + diff_x[q]),
                    dx,
                );
            }
            if k + 1 < ny {
                let q = at(i, k + 1);
                couple(
                    &mut a,
                    p0,
                    q,
                    0.5 * (drift_y[p0] + drift_y[q]),
                    0.5 * (diff_y[p0] + diff_y[q]),
                    dy,
                );
            }
        }
    }
    let on_wall = |i: usize, k: usize| i == 0 || k == 0 || i + 1 == nx || k + 1 == ny;
    if cfg.boundary == Boundary::DirichletOne {
        for i in 0..nx {
            for k in 0..ny {
                if on_wall(i, k) {
                    let p0 = at(i, k);
                    for q in p0.saturating_sub(ny)..=(p0 + ny).min(n - 1) {
                        let v = a.get(p0, q);
                        a.add(p0, q, -v);
                    }
                    a.add(p0, p0, 1.0);
                }
            }
        }
    }
    if max_peclet > 2.0 {
        log::warn!("2D Feynman-Kac grid: cell Péclet number {max_peclet:.2} exceeds 2");
    }
    let lu = a.factor()?;

    let rows = cfg.levels();
    let mut phi = vec![0.0; rows * n];
    phi[(rows - 1) * n..].fill(1.0);
    let mut current = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    let nonnegative_cost = cost.iter().all(|&h| h >= 0.0);
    // h ≡ 0: φ ≡ 1 exactly.
    let cost_free = cost.iter().all(|&h| h == 0.0);
    if cost_free {
        phi.fill(1.0);
    }
    for j in (0..cfg.m).rev().filter(|_| !cost_free) {
        for i in 0..nx {
            let r = 1.0 / dt - beta * cost[i];
            for k in 0..ny {
                let idx = at(i, k);
                rhs[idx] = if cfg.boundary == Boundary::DirichletOne && on_wall(i, k) {
                    1.0
                } else {
                    r * current[idx]
                };
            }
        }
        lu.solve_in_place(&mut rhs)?;
        for (idx, &v) in rhs.iter().enumerate() {
            if !(v > 0.0) {
                return Err(PdeError::Positivity {
                    time_index: j,
                    node: idx,
                });
            }
            if nonnegative_cost && v > 1.0 + 1e-10 {
                return Err(PdeError::MaximumPrinciple {
                    time_index: j,
                    node: idx,
                    value: v,
                });
            }
        }
        current.copy_from_slice(&rhs);
        if j % cfg.store_every == 0 {
            let level = j / cfg.store_every;
            phi[level * n..(level + 1) * n].copy_from_slice(&rhs);
        }
    }

    let mut dphi_dx = vec![0.0; rows * n];
    let mut dphi_dy = vec![0.0; rows * n];
    let mut line = vec![0.0; nx.max(ny)];
    let mut deriv = vec![0.0; nx.max(ny)];
    for j in 0..rows {
        let base = j * n;
        for i in 0..nx {
            let row = &phi[base + i * ny..base + (i + 1) * ny];
            differentiate(row, dy, &mut dphi_dy[base + i * ny..base + (i + 1) * ny]);
        }
        for k in 0..ny {
            for i in 0..nx {
                line[i] = phi[base + at(i, k)];
            }
            differentiate(&line[..nx], dx, &mut deriv[..nx]);
            for i in 0..nx {
                dphi_dx[base + at(i, k)] = deriv[i];
            }
        }
    }
    Ok(ValueGrid2d {
        t0: p.t0,
        horizon: p.horizon,
        epsilon: eps,
        config: *cfg,
        phi,
        dphi_dx,
        dphi_dy,
        max_peclet,
    })
}
