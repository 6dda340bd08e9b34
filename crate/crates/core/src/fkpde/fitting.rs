//! Exponentially fitted (Scharfetter–Gummel) jump rates for `D ∂ₓₓ + b ∂ₓ`.
//!
//! Between neighbours `i` and `i+1` at spacing `dx` with interface drift `b`
//! and diffusion `D`, the cell Péclet number is `P = b dx / D` and
//!
//! ```text
//! rate(i → i+1) = D/dx² · B(−P),   rate(i+1 → i) = D/dx² · B(P),   B(z) = z / (eᶻ − 1)
//! ```
//!
//! The rates are positive for any `P`, their difference is `b/dx`, and their
//! ratio `e^P` is the exact Boltzmann factor of a locally constant drift, so
//! the discrete generator is a reversible Markov jump process.

use crate::math;

/// Bernoulli function `z / (eᶻ − 1)`, with `B(0) = 1`.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 - 0.5 * z + z * z / 12.0
    } else {
        z / math::expm1(z)
    }
}

/// Forward and backward rates across one interface.
#[inline]
pub fn interface_rates(drift: f64, diffusion: f64, dx: f64) -> (f64, f64) {
    let scale = diffusion / (dx * dx);
    if diffusion <= 0.0 {
        // Pure upwinding in the zero-diffusion limit.
        return (drift.max(0.0) / dx, (-drift).max(0.0) / dx);
    }
    let p = drift * dx / diffusion;
    (scale * bernoulli(-p), scale * bernoulli(p))
}

/// `|b| dx / D`.
#[inline]
pub fn cell_peclet(drift: f64, diffusion: f64, dx: f64) -> f64 {
    if diffusion > 0.0 {
        drift.abs() * dx / diffusion
    } else {
        f64::INFINITY
    }
}
