//! Feedback controls evaluated from tabulated Feynman–Kac solutions.
//!
//! The averaged-suboptimal control only acts on the slow channel,
//!
//! ```text
//! u₁ = α₁ᵀ(x) ∂ₓU₀ = −β⁻¹ α₁ᵀ(x) ∂ₓφ₀ / φ₀,   u₂ = 0,
//! ```
//!
//! while the oracle control built from the full `φ^ε` also drives the fast
//! channel with `u₂ = −β⁻¹ ε^{-1/2} α₂ᵀ ∂_yφ^ε / φ^ε`. Values come from
//! bilinear (trilinear for the oracle) interpolation, the denominator is
//! floored at `phi_floor`, and every component is capped at `±u_cap`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::fkpde::{ValueGrid, ValueGrid2d};
use crate::math;
use crate::model::{Coefficients, Dims, ModelSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("value grid has non-positive minimum {0:e}; cannot set a relative floor")]
    NonPositivePhi(f64),
    #[error("control requires {0}")]
    Dimension(&'static str),
    #[error("invalid control setting: {0}")]
    Setting(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Zero,
    AveragedSuboptimal,
    FullOracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSettings {
    pub u_cap: f64,
    /// `None`: `10⁻² · min φ` over the grid.
    pub phi_floor: Option<f64>,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            u_cap: 50.0,
            phi_floor: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    None,
    Averaged(Arc<ValueGrid>),
    Oracle(Arc<ValueGrid2d>),
}

/// Immutable control shared by all sampling workers.
#[derive(Clone)]
pub struct ControlField {
    kind: ControlKind,
    beta: f64,
    epsilon: f64,
    phi_floor: f64,
    u_cap: f64,
    dims: Dims,
    source: Source,
    coeffs: Option<Arc<dyn Coefficients>>,
}

impl core::fmt::Debug for ControlField {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ControlField")
            .field("kind", &self.kind)
            .field("beta", &self.beta)
            .field("phi_floor", &self.phi_floor)
            .field("u_cap", &self.u_cap)
            .finish_non_exhaustive()
    }
}

/// What happened during one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalFlags {
    /// Some component hit `±u_cap`.
    pub capped: bool,
    /// The query left the grid and was clamped to its boundary.
    pub out_of_domain: bool,
}

fn floor_for(min_phi: f64, settings: &ControlSettings) -> Result<(f64, f64), ControlError> {
    if !(settings.u_cap > 0.0) {
        return Err(ControlError::Setting("u_cap must be positive"));
    }
    let floor = match settings.phi_floor {
        Some(f) if f > 0.0 => f,
        Some(_) => return Err(ControlError::Setting("phi_floor must be positive")),
        None if min_phi > 0.0 => 1e-2 * min_phi,
        None => return Err(ControlError::NonPositivePhi(min_phi)),
    };
    Ok((floor, settings.u_cap))
}

#[inline]
fn locate(v: f64, lo: f64, step: f64, n: usize) -> (usize, f64, bool) {
    let raw = (v - lo) / step;
    let max = (n - 1) as f64;
    let outside = raw < 0.0 || raw > max;
    let pos = raw.clamp(0.0, max);
    let i = (math::floor(pos) as usize).min(n - 2);
    (i, pos - i as f64, outside)
}

#[inline]
fn cap(v: f64, limit: f64, capped: &mut bool) -> f64 {
    if v > limit {
        *capped = true;
        limit
    } else if v < -limit {
        *capped = true;
        -limit
    } else {
        v
    }
}

impl ControlField {
    /// `u ≡ 0`; sampling reduces to plain Monte Carlo.
    pub fn zero(model: &ModelSpec) -> Self {
        Self {
            kind: ControlKind::Zero,
            beta: model.params.beta,
            epsilon: model.params.epsilon,
            phi_floor: 0.0,
            u_cap: f64::INFINITY,
            dims: model.dims(),
            source: Source::None,
            coeffs: None,
        }
    }

    /// Suboptimal control from the averaged solution `φ₀`.
    pub fn averaged(
        grid: Arc<ValueGrid>,
        model: &ModelSpec,
        settings: ControlSettings,
    ) -> Result<Self, ControlError> {
        if model.dims().k != 1 {
            return Err(ControlError::Dimension("a one-dimensional slow variable"));
        }
        let (phi_floor, u_cap) = floor_for(grid.min_phi(), &settings)?;
        Ok(Self {
            kind: ControlKind::AveragedSuboptimal,
            beta: model.params.beta,
            epsilon: model.params.epsilon,
            phi_floor,
            u_cap,
            dims: model.dims(),
            source: Source::Averaged(grid),
            coeffs: Some(model.shared_coefficients()),
        })
    }

    /// Control from the full two-scale solution `φ^ε`.
    pub fn oracle(
        grid: Arc<ValueGrid2d>,
        model: &ModelSpec,
        settings: ControlSettings,
    ) -> Result<Self, ControlError> {
        let d = model.dims();
        if d.k != 1 || d.l != 1 {
            return Err(ControlError::Dimension("k = l = 1"));
        }
        let min_phi = grid.phi.iter().copied().fold(f64::INFINITY, f64::min);
        let (phi_floor, u_cap) = floor_for(min_phi, &settings)?;
        Ok(Self {
            kind: ControlKind::FullOracle,
            beta: model.params.beta,
            epsilon: grid.epsilon,
            phi_floor,
            u_cap,
            dims: d,
            source: Source::Oracle(grid),
            coeffs: Some(model.shared_coefficients()),
        })
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn is_zero(&self) -> bool {
        self.kind == ControlKind::Zero
    }

    pub fn u_cap(&self) -> f64 {
        self.u_cap
    }

    pub fn phi_floor(&self) -> f64 {
        self.phi_floor
    }

    pub fn value_grid(&self) -> Option<&ValueGrid> {
        match &self.source {
            Source::Averaged(g) => Some(g),
            _ => None,
        }
    }

    pub fn check_dims(&self, dims: Dims) -> Result<(), ControlError> {
        if self.dims.m1 != dims.m1 || self.dims.m2 != dims.m2 || self.dims.k != dims.k {
            return Err(ControlError::Dimension(
                "matching state and noise dimensions",
            ));
        }
        Ok(())
    }

    /// Evaluates into `u1`, `u2` given `α₁(x)` and `α₂(x, y)` already at hand.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    pub fn eval_with(
        &self,
        s: f64,
        x: &[f64],
        y: &[f64],
        alpha1: &[f64],
        alpha2: &[f64],
        u1: &mut [f64],
        u2: &mut [f64],
    ) -> EvalFlags {
        let mut flags = EvalFlags::default();
        match &self.source {
            Source::None => {
                u1.fill(0.0);
                u2.fill(0.0);
            }
            Source::Averaged(g) => {
                let (j, tj, _) = locate(s, g.t0, g.dt(), g.m + 1);
                let (i, ti, outside) = locate(x[0], g.x_lo, g.dx(), g.n_x);
                flags.out_of_domain = outside;
                let n = g.n_x;
                let bilerp = |v: &[f64]| {
                    let lo = (1.0 - ti) * v[j * n + i] + ti * v[j * n + i + 1];
                    let hi = (1.0 - ti) * v[(j + 1) * n + i] + ti * v[(j + 1) * n + i + 1];
                    (1.0 - tj) * lo + tj * hi
                };
                let phi = bilerp(&g.phi);
                let dphi = bilerp(&g.dphi);
                let slope = -dphi / (self.beta * phi.max(self.phi_floor));
                for (u, a) in u1.iter_mut().zip(alpha1) {
                    *u = cap(a * slope, self.u_cap, &mut flags.capped);
                }
                u2.fill(0.0);
            }
            Source::Oracle(g) => {
                let c = &g.config;
                flags.out_of_domain =
                    x[0] < c.x_lo || x[0] > c.x_hi || y[0] < c.y_lo || y[0] > c.y_hi;
                let (phi, px, py) = g.sample(s, x[0], y[0]);
                let denom = self.beta * phi.max(self.phi_floor);
                let (sx, sy) = (-px / denom, -py / denom / math::sqrt(self.epsilon));
                for (u, a) in u1.iter_mut().zip(alpha1) {
                    *u = cap(a * sx, self.u_cap, &mut flags.capped);
                }
                for (u, a) in u2.iter_mut().zip(alpha2) {
                    *u = cap(a * sy, self.u_cap, &mut flags.capped);
                }
            }
        }
        flags
    }

    /// Evaluates `(u₁, u₂)` at `(s, x, y)`.
    pub fn eval_control(&self, s: f64, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, EvalFlags) {
        let d = self.dims;
        let mut a1 = vec![0.0; d.k * d.m1];
        let mut a2 = vec![0.0; d.l * d.m2];
        if let Some(c) = &self.coeffs {
            c.slow_diffusion(x, &mut a1);
            c.fast_diffusion(x, y, &mut a2);
        }
        let mut u1 = vec![0.0; d.m1];
        let mut u2 = vec![0.0; d.m2];
        let flags = self.eval_with(s, x, y, &a1, &a2, &mut u1, &mut u2);
        (u1, u2, flags)
    }

    /// First slow-channel component on an `(s, x)` lattice, `s` outermost.
    pub fn sample_surface(&self, times: &[f64], xs: &[f64]) -> Vec<SurfacePoint> {
        let y = vec![0.0; self.dims.l];
        let mut out = Vec::with_capacity(times.len() * xs.len());
        for &s in times {
            for &x in xs {
                let (u1, _, _) = self.eval_control(s, &[x], &y);
                out.push(SurfacePoint { s, x, u1: u1[0] });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub s: f64,
    pub x: f64,
    pub u1: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_bistable_model, ModelParams};

    fn model() -> ModelSpec {
        build_bistable_model(ModelParams::bistable(2.0, 0.1).unwrap()).unwrap()
    }

    fn grid(phi: impl Fn(f64, f64) -> f64, dphi: impl Fn(f64, f64) -> f64) -> ValueGrid {
        let (m, n_x) = (4, 11);
        let mut g = ValueGrid {
            t0: 0.0,
            horizon: 1.0,
            m,
            x_lo: -1.0,
            x_hi: 1.0,
            n_x,
            phi: vec![],
            dphi: vec![],
        };
        for j in 0..=m {
            for i in 0..n_x {
                g.phi.push(phi(g.time(j), g.node(i)));
                g.dphi.push(dphi(g.time(j), g.node(i)));
            }
        }
        g
    }

    #[test]
    fn zero_kind_is_zero() {
        let c = ControlField::zero(&model());
        let (u1, u2, flags) = c.eval_control(0.3, &[0.2], &[1.0]);
        assert_eq!((u1, u2), (vec![0.0], vec![0.0]));
        assert_eq!(flags, EvalFlags::default());
    }

    #[test]
    fn constant_grid_gives_no_force() {
        let c = ControlField::averaged(
            Arc::new(grid(|_, _| 0.7, |_, _| 0.0)),
            &model(),
            ControlSettings::default(),
        )
        .unwrap();
        for &x in &[-2.0, -0.33, 0.0, 0.9, 5.0] {
            let (u1, u2, _) = c.eval_control(0.41, &[x], &[0.0]);
            assert_eq!(u1[0], 0.0);
            assert_eq!(u2[0], 0.0);
        }
    }

    #[test]
    fn node_values_are_reproduced() {
        let g = grid(|t, x| 1.0 + 0.1 * t + 0.2 * x * x, |t, x| 0.4 * x - t);
        let c = ControlField::averaged(Arc::new(g.clone()), &model(), ControlSettings::default())
            .unwrap();
        for j in 0..=g.m {
            for i in 0..g.n_x {
                let (u1, _, _) = c.eval_control(g.time(j), &[g.node(i)], &[0.0]);
                let expected = -g.dphi_at(j, i) / (2.0 * g.phi_at(j, i));
                assert!(
                    (u1[0] - expected).abs() <= 1e-12 * (1.0 + expected.abs()),
                    "node ({j}, {i})"
                );
            }
        }
    }

    #[test]
    fn cap_and_domain_clamp() {
        let g = grid(|_, _| 1.0, |_, x| -1000.0 * (x + 1.0));
        let c = ControlField::averaged(
            Arc::new(g),
            &model(),
            ControlSettings {
                u_cap: 5.0,
                phi_floor: None,
            },
        )
        .unwrap();
        let (u1, _, flags) = c.eval_control(0.5, &[0.5], &[0.0]);
        assert_eq!(u1[0], 5.0);
        assert!(flags.capped && !flags.out_of_domain);
        let (_, _, flags) = c.eval_control(0.5, &[3.0], &[0.0]);
        assert!(flags.out_of_domain);
    }

    #[test]
    fn floor_requires_positive_grid() {
        let g = grid(|_, x| x, |_, _| 1.0);
        assert!(matches!(
            ControlField::averaged(Arc::new(g), &model(), ControlSettings::default()),
            Err(ControlError::NonPositivePhi(_))
        ));
    }
}
