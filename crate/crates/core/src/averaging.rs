//! Averaged coefficients `f̃`, `α̃`, `h̃` of the limiting slow dynamics
//!
//! ```text
//! dx̃ = f̃(x̃) ds + β^{-1/2} α̃(x̃) dw,   f̃(x) = ∫ f(x,y) ρ_x(dy),   α̃α̃ᵀ = ∫ α₁α₁ᵀ ρ_x(dy)
//! ```
//!
//! where `ρ_x` is the invariant law of the fast subsystem with `x` frozen.
//! For the bistable example `ρ_x = N(x, 1/(2β))` and the averages are exact;
//! otherwise they are time averages along a simulated fast path.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{self, LinalgError};
use crate::math;
use crate::model::{v1_prime, ModelSpec};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AveragingError {
    #[error("analytic averaging is only available for the bistable example")]
    NotBistable,
    #[error("tabulated averages need a 1-dimensional slow variable (k = {0})")]
    SlowDimension(usize),
    #[error("grid must have at least 2 strictly increasing finite nodes")]
    BadGrid,
    #[error("column `{name}` has {got} entries, grid has {expected}")]
    Length {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("fast subsystem diverged at frozen x = {x}")]
    Diverged { x: f64 },
    #[error("averaged diffusion not elliptic at x = {x}: {source}")]
    Ellipticity { x: f64, source: LinalgError },
    #[error("averaged diffusion {value:e} at x = {x} is below the floor {floor:e}")]
    BelowFloor { x: f64, value: f64, floor: f64 },
    #[error("need at least one sample and a positive fast step")]
    BadSampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    ErgodicAverage,
}

/// Averaged coefficients tabulated on a 1D slow grid, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedModel {
    pub grid: Vec<f64>,
    pub f_tilde: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub provenance: Provenance,
}

/// Interpolated coefficients at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedCoefficients {
    pub f: f64,
    pub a: f64,
    pub h: f64,
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let dx = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + i as f64 * dx })
        .collect()
}

impl AveragedModel {
    pub fn new(
        grid: Vec<f64>,
        f_tilde: Vec<f64>,
        a_tilde: Vec<f64>,
        h_tilde: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, AveragingError> {
        let n = grid.len();
        if n < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
            return Err(AveragingError::BadGrid);
        }
        for (name, col) in [
            ("fTilde", &f_tilde),
            ("aTilde", &a_tilde),
            ("hTilde", &h_tilde),
        ] {
            if col.len() != n {
                return Err(AveragingError::Length {
                    name,
                    expected: n,
                    got: col.len(),
                });
            }
        }
        let m = Self {
            grid,
            f_tilde,
            a_tilde,
            h_tilde,
            provenance,
        };
        m.check_floor(0.0)?;
        Ok(m)
    }

    /// Every `α̃` node must exceed `floor` (and be positive).
    pub fn check_floor(&self, floor: f64) -> Result<(), AveragingError> {
        for (&x, &a) in self.grid.iter().zip(&self.a_tilde) {
            if !(a > floor) || !a.is_finite() {
                return Err(AveragingError::BelowFloor { x, value: a, floor });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.x_range();
        a <= lo && hi <= b
    }

    /// Linear interpolation; queries outside the grid take the boundary value.
    pub fn interpolate(&self, x: f64) -> AveragedCoefficients {
        let n = self.grid.len();
        let (lo, hi) = self.x_range();
        if x <= lo {
            return self.node(0);
        }
        if x >= hi {
            return self.node(n - 1);
        }
        let i = self.grid.partition_point(|&g| g <= x) - 1;
        let i = i.min(n - 2);
        let t = (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i]);
        let lerp = |v: &[f64]| v[i] + t * (v[i + 1] - v[i]);
        AveragedCoefficients {
            f: lerp(&self.f_tilde),
            a: lerp(&self.a_tilde),
            h: lerp(&self.h_tilde),
        }
    }

    pub fn node(&self, i: usize) -> AveragedCoefficients {
        AveragedCoefficients {
            f: self.f_tilde[i],
            a: self.a_tilde[i],
            h: self.h_tilde[i],
        }
    }

    /// Coefficients resampled on another grid (exact where the grids share nodes).
    pub fn resample(&self, grid: &[f64]) -> Result<Self, AveragingError> {
        let mut f = Vec::with_capacity(grid.len());
        let mut a = Vec::with_capacity(grid.len());
        let mut h = Vec::with_capacity(grid.len());
        for &x in grid {
            let c = self.interpolate(x);
            f.push(c.f);
            a.push(c.a);
            h.push(c.h);
        }
        Self::new(grid.to_vec(), f, a, h, self.provenance)
    }
}

/// Closed-form averages for the bistable example: `f̃ = −V₁'`, `α̃ = 1`, `h̃ = h`.
///
/// The fast invariant density `∝ exp(−β(x−y)²)` is centred at `x`, so the
/// coupling term `−(x−y)` of the slow drift averages to zero.
pub fn analytic_average_bistable(
    model: &ModelSpec,
    grid: &[f64],
) -> Result<AveragedModel, AveragingError> {
    let ex = model.bistable().ok_or(AveragingError::NotBistable)?;
    let f = grid.iter().map(|&x| -v1_prime(x)).collect();
    let a = vec![1.0; grid.len()];
    let h = grid.iter().map(|&x| ex.cost_at(x)).collect();
    AveragedModel::new(grid.to_vec(), f, a, h, Provenance::Analytic)
}

/// Post-burn-in samples of the frozen fast subsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct FastEnsemble {
    pub x: Vec<f64>,
    /// `M × l`, row-major.
    pub samples: Vec<f64>,
    pub l: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl FastEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len() / self.l
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.l..(i + 1) * self.l]
    }

    /// Sample mean and (1/M) variance of component `j`.
    pub fn moments(&self, j: usize) -> (f64, f64) {
        let m = self.len() as f64;
        let mean = (0..self.len()).map(|i| self.sample(i)[j]).sum::<f64>() / m;
        let var = (0..self.len())
            .map(|i| {
                let e = self.sample(i)[j] - mean;
                e * e
            })
            .sum::<f64>()
            / m;
        (mean, var)
    }
}

/// Integrates `dξ = ε⁻¹ g(x,ξ) ds + β^{-1/2} ε^{-1/2} α₂(x,ξ) dw` with `x` frozen,
/// discarding `burn_in` steps and keeping every `thinning`-th state afterwards.
pub fn sample_fast_ensemble(
    model: &ModelSpec,
    x: &[f64],
    samples: usize,
    burn_in: usize,
    thinning: usize,
    dt_fast: f64,
    stream: RngStream,
) -> Result<FastEnsemble, AveragingError> {
    if samples == 0 || thinning == 0 || !(dt_fast > 0.0) {
        return Err(AveragingError::BadSampling);
    }
    let c = model.coefficients();
    let d = model.dims();
    let p = &model.params;
    let drift_scale = dt_fast / p.epsilon;
    let noise_scale = math::sqrt(dt_fast / (p.beta * p.epsilon));
    let mut rng = stream.gaussian();
    let mut y = p.y0.clone();
    let mut g = vec![0.0; d.l];
    let mut a2 = vec![0.0; d.l * d.m2];
    let mut dw = vec![0.0; d.m2];
    let mut out = Vec::with_capacity(samples * d.l);
    let total = burn_in + samples * thinning;
    for n in 1..=total {
        c.fast_drift(x, &y, &mut g);
        c.fast_diffusion(x, &y, &mut a2);
        rng.fill_scaled(noise_scale, &mut dw);
        for i in 0..d.l {
            let noise: f64 = (0..d.m2).map(|j| a2[i * d.m2 + j] * dw[j]).sum();
            y[i] += drift_scale * g[i] + noise;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(AveragingError::Diverged { x: x[0] });
        }
        if n > burn_in && (n - burn_in) % thinning == 0 {
            out.extend_from_slice(&y);
        }
    }
    Ok(FastEnsemble {
        x: x.to_vec(),
        samples: out,
        l: d.l,
        burn_in,
        thinning,
    })
}

/// Time averages of `f`, `α₁α₁ᵀ` and `h` against the frozen fast dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicAverage {
    pub f_bar: Vec<f64>,
    /// Batch-means standard error of each `f_bar` component.
    pub f_std_err: Vec<f64>,
    /// `k × k`.
    pub aa_bar: Vec<f64>,
    /// Symmetric square root of `aa_bar`.
    pub alpha_tilde: Vec<f64>,
    pub h_bar: f64,
    pub ensemble: FastEnsemble,
}

const BATCHES: usize = 32;

pub fn average_over(
    model: &ModelSpec,
    ensemble: FastEnsemble,
) -> Result<ErgodicAverage, AveragingError> {
    let c = model.coefficients();
    let d = model.dims();
    let x = ensemble.x.clone();
    let m = ensemble.len();
    let mut f = vec![0.0; d.k];
    let mut f_sum = vec![0.0; d.k];
    let batch_len = (m / BATCHES).max(1);
    let n_batches = m / batch_len;
    let mut batch_means = vec![0.0; n_batches * d.k];
    for i in 0..m {
        c.slow_drift(&x, ensemble.sample(i), &mut f);
        for r in 0..d.k {
            f_sum[r] += f[r];
            let b = i / batch_len;
            if b < n_batches {
                batch_means[b * d.k + r] += f[r] / batch_len as f64;
            }
        }
    }
    let mf = m as f64;
    let f_bar: Vec<f64> = f_sum.iter().map(|v| v / mf).collect();
    let f_std_err = (0..d.k)
        .map(|r| {
            if n_batches < 2 {
                return f64::INFINITY;
            }
            let mean = (0..n_batches)
                .map(|b| batch_means[b * d.k + r])
                .sum::<f64>()
                / n_batches as f64;
            let var = (0..n_batches)
                .map(|b| {
                    let e = batch_means[b * d.k + r] - mean;
                    e * e
                })
                .sum::<f64>()
                / (n_batches - 1) as f64;
            math::sqrt(var / n_batches as f64)
        })
        .collect();
    // α₁ and h do not depend on y, so their averages are the values at x.
    let mut a1 = vec![0.0; d.k * d.m1];
    c.slow_diffusion(&x, &mut a1);
    let mut aa_bar = vec![0.0; d.k * d.k];
    for r in 0..d.k {
        for s in 0..d.k {
            aa_bar[r * d.k + s] = (0..d.m1)
                .map(|j| a1[r * d.m1 + j] * a1[s * d.m1 + j])
                .sum::<f64>();
        }
    }
    let alpha_tilde = linalg::symmetric_sqrt(&aa_bar, d.k)
        .map_err(|source| AveragingError::Ellipticity { x: x[0], source })?;
    Ok(ErgodicAverage {
        f_bar,
        f_std_err,
        aa_bar,
        alpha_tilde,
        h_bar: c.running_cost(&x),
        ensemble,
    })
}

/// Ergodic averages at frozen `x` from `samples` post-burn-in fast states.
pub fn ergodic_average(
    model: &ModelSpec,
    x: &[f64],
    samples: usize,
    burn_in: usize,
    dt_fast: f64,
    stream: RngStream,
) -> Result<ErgodicAverage, AveragingError> {
    let ensemble = sample_fast_ensemble(model, x, samples, burn_in, 1, dt_fast, stream)?;
    average_over(model, ensemble)
}

/// Relaxation time of the frozen fast subsystem.
///
/// Two copies started one unit apart are driven by the same noise; the
/// returned time is when their separation first drops by a factor `e`.
/// Returns the search horizon (`200 ε`) when no such time is found.
pub fn estimate_mixing_time(model: &ModelSpec, x: &[f64]) -> f64 {
    let c = model.coefficients();
    let d = model.dims();
    let p = &model.params;
    let dt = p.epsilon / 200.0;
    let max_steps = 40_000;
    let drift_scale = dt / p.epsilon;
    let noise_scale = math::sqrt(dt / (p.beta * p.epsilon));
    let mut rng = RngStream::new(0x6d69_7869_6e67, 0).gaussian();
    let mut ya = p.y0.clone();
    let mut yb: Vec<f64> = p.y0.iter().map(|v| v + 1.0).collect();
    let d0 = math::sqrt(d.l as f64);
    let (mut ga, mut gb) = (vec![0.0; d.l], vec![0.0; d.l]);
    let (mut aa, mut ab) = (vec![0.0; d.l * d.m2], vec![0.0; d.l * d.m2]);
    let mut dw = vec![0.0; d.m2];
    for n in 1..=max_steps {
        c.fast_drift(x, &ya, &mut ga);
        c.fast_drift(x, &yb, &mut gb);
        c.fast_diffusion(x, &ya, &mut aa);
        c.fast_diffusion(x, &yb, &mut ab);
        rng.fill_scaled(noise_scale, &mut dw);
        for i in 0..d.l {
            let na: f64 = (0..d.m2).map(|j| aa[i * d.m2 + j] * dw[j]).sum();
            let nb: f64 = (0..d.m2).map(|j| ab[i * d.m2 + j] * dw[j]).sum();
            ya[i] += drift_scale * ga[i] + na;
            yb[i] += drift_scale * gb[i] + nb;
        }
        let dist = math::sqrt(ya.iter().zip(&yb).map(|(a, b)| (a - b) * (a - b)).sum());
        if !dist.is_finite() {
            break;
        }
        if dist <= d0 * math::exp(-1.0) {
            return n as f64 * dt;
        }
    }
    max_steps as f64 * dt
}

/// Settings for [`numerical_average`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicConfig {
    pub samples: usize,
    pub dt_fast: f64,
    /// `None`: 20 mixing times.
    pub burn_in: Option<usize>,
    /// Lower bound required of every `α̃` node.
    pub a_floor: f64,
}

impl ErgodicConfig {
    pub fn for_epsilon(epsilon: f64) -> Self {
        Self {
            samples: 20_000,
            dt_fast: epsilon / 20.0,
            burn_in: None,
            a_floor: 1e-8,
        }
    }
}

/// Averages at one frozen slow value; one stream per node.
pub fn average_node(
    model: &ModelSpec,
    x: f64,
    cfg: &ErgodicConfig,
    stream: RngStream,
) -> Result<AveragedCoefficients, AveragingError> {
    if model.dims().k != 1 {
        return Err(AveragingError::SlowDimension(model.dims().k));
    }
    let burn_in = cfg.burn_in.unwrap_or_else(|| {
        let tau = estimate_mixing_time(model, &[x]);
        math::ceil(20.0 * tau / cfg.dt_fast) as usize
    });
    let avg = ergodic_average(model, &[x], cfg.samples, burn_in, cfg.dt_fast, stream)?;
    Ok(AveragedCoefficients {
        f: avg.f_bar[0],
        a: avg.alpha_tilde[0],
        h: avg.h_bar,
    })
}

/// Serial node-by-node ergodic averaging; node `i` uses stream `(seed, i)`.
pub fn numerical_average(
    model: &ModelSpec,
    grid: &[f64],
    cfg: &ErgodicConfig,
    seed: u64,
) -> Result<AveragedModel, AveragingError> {
    let nodes: Result<Vec<_>, _> = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| average_node(model, x, cfg, RngStream::new(seed, i as u64)))
        .collect();
    assemble(grid, &nodes?, cfg.a_floor)
}

/// Builds the table from per-node averages.
pub fn assemble(
    grid: &[f64],
    nodes: &[AveragedCoefficients],
    a_floor: f64,
) -> Result<AveragedModel, AveragingError> {
    let m = AveragedModel::new(
        grid.to_vec(),
        nodes.iter().map(|c| c.f).collect(),
        nodes.iter().map(|c| c.a).collect(),
        nodes.iter().map(|c| c.h).collect(),
        Provenance::ErgodicAverage,
    )?;
    m.check_floor(a_floor)?;
    Ok(m)
}
