//! Slow–fast SDE problem family and the bistable double-well example.
//!
//! The full system is
//!
//! ```text
//! dx = f(x, y) ds + β^{-1/2} α₁(x) dw¹
//! dy = ε⁻¹ g(x, y) ds + β^{-1/2} ε^{-1/2} α₂(x, y) dw²
//! ```
//!
//! with running cost `h(x)`. The `β` and `ε` factors are applied by the
//! integrator; [`Coefficients`] only supplies `f, g, α₁, α₂, h`. Neither `α₁`
//! nor `h` sees the fast variable.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("dimension mismatch for `{name}`: expected {expected}, got {got}")]
    Dimension {
        name: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Physical parameters and initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Inverse temperature β.
    pub beta: f64,
    /// Time-scale separation ε.
    pub epsilon: f64,
    pub t0: f64,
    /// Horizon T.
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

impl ModelParams {
    pub fn new(
        beta: f64,
        epsilon: f64,
        t0: f64,
        horizon: f64,
        x0: Vec<f64>,
        y0: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let p = Self {
            beta,
            epsilon,
            t0,
            horizon,
            x0,
            y0,
        };
        p.validate()?;
        Ok(p)
    }

    /// The bistable setup: t0 = 0, T = 1, x0 = -1, y0 = 0.
    pub fn bistable(beta: f64, epsilon: f64) -> Result<Self, ModelError> {
        Self::new(beta, epsilon, 0.0, 1.0, alloc::vec![-1.0], alloc::vec![0.0])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name, reason| Err(ModelError::InvalidParameter { name, reason });
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", "must be positive and finite");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon", "must be positive and finite");
        }
        if !(self.t0.is_finite() && self.horizon.is_finite() && self.t0 < self.horizon) {
            return bad("horizon", "requires finite t0 < T");
        }
        if self.x0.is_empty() {
            return bad("x0", "slow dimension must be at least 1");
        }
        if self.y0.is_empty() {
            return bad("y0", "fast dimension must be at least 1");
        }
        if self.x0.iter().chain(&self.y0).any(|v| !v.is_finite()) {
            return bad("x0", "initial state must be finite");
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.x0.len()
    }

    pub fn l(&self) -> usize {
        self.y0.len()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }
}

/// State and noise dimensions: `x ∈ ℝᵏ`, `y ∈ ℝˡ`, `w¹ ∈ ℝ^{m₁}`, `w² ∈ ℝ^{m₂}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub k: usize,
    pub l: usize,
    pub m1: usize,
    pub m2: usize,
}

/// Pure coefficient callbacks. Matrices are written row-major into `out`.
pub trait Coefficients: Send + Sync {
    fn dims(&self) -> Dims;
    /// `f(x, y) ∈ ℝᵏ`.
    fn slow_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `g(x, y) ∈ ℝˡ`.
    fn fast_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `α₁(x) ∈ ℝ^{k×m₁}`.
    fn slow_diffusion(&self, x: &[f64], out: &mut [f64]);
    /// `α₂(x, y) ∈ ℝ^{l×m₂}`.
    fn fast_diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    /// `h(x) ≥ 0`.
    fn running_cost(&self, x: &[f64]) -> f64;

    fn as_bistable(&self) -> Option<&BistableExample> {
        None
    }
}

/// Parameters plus a shared, immutable set of coefficients.
#[derive(Clone)]
pub struct ModelSpec {
    pub params: ModelParams,
    coeffs: Arc<dyn Coefficients>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("params", &self.params)
            .field("dims", &self.coeffs.dims())
            .field("bistable", &self.coeffs.as_bistable())
            .finish()
    }
}

impl ModelSpec {
    pub fn new(params: ModelParams, coeffs: Arc<dyn Coefficients>) -> Result<Self, ModelError> {
        params.validate()?;
        let dims = coeffs.dims();
        if dims.k != params.k() {
            return Err(ModelError::Dimension {
                name: "x0",
                expected: dims.k,
                got: params.k(),
            });
        }
        if dims.l != params.l() {
            return Err(ModelError::Dimension {
                name: "y0",
                expected: dims.l,
                got: params.l(),
            });
        }
        if dims.m1 == 0 || dims.m2 == 0 {
            return Err(ModelError::InvalidParameter {
                name: "noise",
                reason: "noise dimensions m1, m2 must be positive",
            });
        }
        Ok(Self { params, coeffs })
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        &*self.coeffs
    }

    pub fn shared_coefficients(&self) -> Arc<dyn Coefficients> {
        Arc::clone(&self.coeffs)
    }

    pub fn dims(&self) -> Dims {
        self.coeffs.dims()
    }

    pub fn with_params(&self, params: ModelParams) -> Result<Self, ModelError> {
        Self::new(params, Arc::clone(&self.coeffs))
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ModelError> {
        self.with_params(self.params.with_epsilon(epsilon))
    }

    pub fn bistable(&self) -> Option<&BistableExample> {
        self.coeffs.as_bistable()
    }
}

/// `η(x) = exp(-1/x)` for `x > 0`, else 0.
///
/// Arguments below `1/700` return 0: `exp(-700)` is already at the bottom of
/// the normal range and the mollifier factors only ever multiply O(1) terms.
#[inline]
pub fn eta(x: f64) -> f64 {
    if x < ETA_CUTOFF {
        0.0
    } else {
        math::exp(-1.0 / x)
    }
}

/// `η'(x) = η(x) / x²`.
#[inline]
pub fn eta_prime(x: f64) -> f64 {
    if x < ETA_CUTOFF {
        0.0
    } else {
        math::exp(-1.0 / x) / (x * x)
    }
}

const ETA_CUTOFF: f64 = 1.0 / 700.0;
const WAVE: f64 = 4.0 * core::f64::consts::PI / 5.0;

/// Double-well potential `V₁`.
pub fn v1(x: f64) -> f64 {
    let (ep, em) = (eta(x), eta(-x));
    let (_, c) = math::sin_cos(WAVE * x);
    0.5 * (1.0 - ep - em) * c + 3.0 * ep * (x - 1.0) * (x - 1.0) + 3.0 * em * (x + 1.0) * (x + 1.0)
}

/// Hand-differentiated `V₁'`.
#[inline]
pub fn v1_prime(x: f64) -> f64 {
    // At most one of η(x), η(-x) is nonzero.
    let (s, c) = math::sin_cos(WAVE * x);
    if x > 0.0 {
        let e = eta(x);
        let de = eta_prime(x);
        -0.5 * de * c - 0.5 * (1.0 - e) * WAVE * s
            + 3.0 * de * (x - 1.0) * (x - 1.0)
            + 6.0 * e * (x - 1.0)
    } else {
        let e = eta(-x);
        let de = eta_prime(-x);
        0.5 * de * c - 0.5 * (1.0 - e) * WAVE * s - 3.0 * de * (x + 1.0) * (x + 1.0)
            + 6.0 * e * (x + 1.0)
    }
}

/// `V₂(x, y) = (x - y)² / 2`.
#[inline]
pub fn v2(x: f64, y: f64) -> f64 {
    0.5 * (x - y) * (x - y)
}

/// `V = V₁ + V₂`.
pub fn potential(x: f64, y: f64) -> f64 {
    v1(x) + v2(x, y)
}

/// Running cost of the example: a well at `x = 1` inside `[-2, 4]`, ≈ 20 outside.
#[inline]
pub fn barrier_cost(x: f64, w: f64) -> f64 {
    let a = eta((x + 2.0) / w);
    let b = eta((4.0 - x) / w);
    a * b * (x - 1.0) * (x - 1.0) + 10.0 * (2.0 - a - b)
}

/// Running cost used with the bistable dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunningCost {
    /// The mollified cost with a minimum near `x = 1`.
    Barrier,
    /// `h ≡ c`.
    Constant(f64),
}

/// `V(x, y) = V₁(x) + (x - y)²/2` with unit noise coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BistableExample {
    /// Mollifier width of the barrier cost.
    pub w: f64,
    pub cost: RunningCost,
}

impl Default for BistableExample {
    fn default() -> Self {
        Self {
            w: 0.02,
            cost: RunningCost::Barrier,
        }
    }
}

impl BistableExample {
    pub fn with_cost(cost: RunningCost) -> Self {
        Self {
            cost,
            ..Self::default()
        }
    }

    #[inline]
    pub fn cost_at(&self, x: f64) -> f64 {
        match self.cost {
            RunningCost::Barrier => barrier_cost(x, self.w),
            RunningCost::Constant(c) => c,
        }
    }
}

impl Coefficients for BistableExample {
    fn dims(&self) -> Dims {
        Dims {
            k: 1,
            l: 1,
            m1: 1,
            m2: 1,
        }
    }

    #[inline]
    fn slow_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = -v1_prime(x[0]) - (x[0] - y[0]);
    }

    #[inline]
    fn fast_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = x[0] - y[0];
    }

    #[inline]
    fn slow_diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    #[inline]
    fn fast_diffusion(&self, _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    #[inline]
    fn running_cost(&self, x: &[f64]) -> f64 {
        self.cost_at(x[0])
    }

    fn as_bistable(&self) -> Option<&BistableExample> {
        Some(self)
    }
}

/// Bistable model with the barrier cost.
pub fn build_bistable_model(params: ModelParams) -> Result<ModelSpec, ModelError> {
    build_bistable_model_with(params, BistableExample::default())
}

pub fn build_bistable_model_with(
    params: ModelParams,
    example: BistableExample,
) -> Result<ModelSpec, ModelError> {
    if params.k() != 1 || params.l() != 1 {
        return Err(ModelError::Dimension {
            name: "bistable state",
            expected: 1,
            got: params.k().max(params.l()),
        });
    }
    ModelSpec::new(params, Arc::new(example))
}

type SlowFastFn = Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type SlowFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type CostFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Coefficients assembled from closures; handy for test problems.
pub struct FnCoefficients {
    pub dims: Dims,
    pub f: SlowFastFn,
    pub g: SlowFastFn,
    pub alpha1: SlowFn,
    pub alpha2: SlowFastFn,
    pub h: CostFn,
}

impl FnCoefficients {
    /// All dimensions one; closures act on scalars.
    pub fn scalar(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        alpha1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dims: Dims {
                k: 1,
                l: 1,
                m1: 1,
                m2: 1,
            },
            f: Box::new(move |x, y, o| o[0] = f(x[0], y[0])),
            g: Box::new(move |x, y, o| o[0] = g(x[0], y[0])),
            alpha1: Box::new(move |x, o| o[0] = alpha1(x[0])),
            alpha2: Box::new(move |x, y, o| o[0] = alpha2(x[0], y[0])),
            h: Box::new(move |x| h(x[0])),
        }
    }
}

impl Coefficients for FnCoefficients {
    fn dims(&self) -> Dims {
        self.dims
    }
    fn slow_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.f)(x, y, out)
    }
    fn fast_drift(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.g)(x, y, out)
    }
    fn slow_diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.alpha1)(x, out)
    }
    fn fast_diffusion(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.alpha2)(x, y, out)
    }
    fn running_cost(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }
}

/// Smallest observed contraction rate λ of the fast drift on a probe lattice
/// around `(x0, y0)`:
///
/// ```text
/// ⟨g(x,y₁) − g(x,y₂), y₁ − y₂⟩ + (3/β)‖α₂(x,y₁) − α₂(x,y₂)‖² ≤ −λ |y₁ − y₂|²
/// ```
///
/// A non-positive result means the fast subsystem is not dissipative there.
pub fn dissipativity_probe(model: &ModelSpec) -> f64 {
    let c = model.coefficients();
    let d = c.dims();
    let beta = model.params.beta;
    let offsets = [-3.0, -1.0, -0.25, 0.5, 2.0];
    let mut lambda = f64::INFINITY;
    let (mut g1, mut g2) = (alloc::vec![0.0; d.l], alloc::vec![0.0; d.l]);
    let (mut a1, mut a2) = (alloc::vec![0.0; d.l * d.m2], alloc::vec![0.0; d.l * d.m2]);
    let mut x = model.params.x0.clone();
    let mut y1 = model.params.y0.clone();
    let mut y2 = model.params.y0.clone();
    for &dx in &offsets {
        for (xi, x0) in x.iter_mut().zip(&model.params.x0) {
            *xi = x0 + dx;
        }
        for &o1 in &offsets {
            for &o2 in &offsets {
                if o1 == o2 {
                    continue;
                }
                for (i, y0) in model.params.y0.iter().enumerate() {
                    // Mix the offsets across components so pairs are not collinear.
                    let twist = if i % 2 == 0 { 1.0 } else { -0.5 };
                    y1[i] = y0 + o1 * twist;
                    y2[i] = y0 + o2;
                }
                c.fast_drift(&x, &y1, &mut g1);
                c.fast_drift(&x, &y2, &mut g2);
                c.fast_diffusion(&x, &y1, &mut a1);
                c.fast_diffusion(&x, &y2, &mut a2);
                let mut inner = 0.0;
                let mut dist2 = 0.0;
                for i in 0..d.l {
                    let dy = y1[i] - y2[i];
                    inner += (g1[i] - g2[i]) * dy;
                    dist2 += dy * dy;
                }
                let frob: f64 = a1.iter().zip(&a2).map(|(p, q)| (p - q) * (p - q)).sum();
                if dist2 > 0.0 {
                    lambda = lambda.min(-(inner + 3.0 / beta * frob) / dist2);
                }
            }
        }
    }
    lambda
}
