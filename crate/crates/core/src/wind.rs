//! Wind field: constant mean speed plus optional filtered turbulence, driven
//! by a fixed, documented random stream so runs are bit-reproducible.
//!
//! ## Model
//!
//! Each generator sees `v_w = v_m + v_s`, a mean component and a stochastic
//! one. The stochastic part is white noise shaped by a second-order lag
//! filter written in companion form,
//!
//! ```text
//! d ⎡v_s ⎤   ⎡    0                 1          ⎤ ⎡v_s ⎤   ⎡     0      ⎤
//! ──⎢    ⎥ = ⎢                                 ⎥ ⎢    ⎥ + ⎢            ⎥ e
//! dt⎣v̇_s ⎦   ⎣ −1/(p₁p₂)   −(p₁+p₂)/(p₁p₂)    ⎦ ⎣v̇_s ⎦   ⎣ k/(p₁p₂)  ⎦
//! ```
//!
//! whose characteristic roots are exactly −1/p₁ and −1/p₂ (the quadratic
//! p₁p₂s² + (p₁+p₂)s + 1 factors as (p₁s+1)(p₂s+1)). One standard-normal
//! sample `e` is drawn per generator per integration macro-step and held
//! constant across the RK4 stages.
//!
//! ## Default filter constants
//!
//! Given a mean speed v_m, an eddy length scale L, and a relative intensity
//! σ (all configurable):
//!
//! ```text
//! p₁ = L / v_m          [s]   (eddy transit time)
//! p₂ = p₁ / 4           [s]
//! k  = σ·v_m·√(2(p₁+p₂)/Δt)
//! ```
//!
//! The gain map makes the stationary variance of v_s approximately (σ·v_m)²
//! when the filter is excited by unit normals held over steps of length Δt
//! (piecewise-constant noise of variance 1 over Δt has low-frequency spectral
//! density ≈ Δt, and the filter's DC-variance gain is k²/(2(p₁+p₂))).
//!
//! ## Random stream
//!
//! The stream is SplitMix64 (Steele, Lea & Flood's standard 64-bit mixer)
//! mapped to normals by the Box–Muller cosine branch. Generator `i` seeds its
//! own stream with `base_seed XOR i`, so farms of any size draw independent,
//! reproducible sequences.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Turbulence filter constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    /// Mean wind speed v_m [m/s].
    pub mean: f64,
    /// First filter time constant p₁ [s].
    pub p1: f64,
    /// Second filter time constant p₂ [s].
    pub p2: f64,
    /// Noise gain k [m/s per unit normal, filter-scaled].
    pub k: f64,
}

impl WindParams {
    /// Rejects non-physical filter constants.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return Err(Error::config(format!("wind.mean must be finite and > 0, got {}", self.mean)));
        }
        for (name, v) in [("p1", self.p1), ("p2", self.p2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("wind.{name} must be finite and > 0, got {v}")));
            }
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return Err(Error::config(format!("wind.k must be finite and >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// Turbulence filter state for one generator.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindState {
    /// Stochastic speed component v_s [m/s].
    pub v_s: f64,
    /// Its time derivative v̇_s [m/s²].
    pub v_s_dot: f64,
}

/// Default filter constants from (mean, length scale, intensity, step size).
///
/// See the module docs for the map; `dt` is the integration macro-step the
/// noise is held over.
pub fn turbulence_params(mean: f64, length_scale: f64, intensity: f64, dt: f64) -> WindParams {
    let p1 = length_scale / mean;
    let p2 = p1 / 4.0;
    let k = intensity * mean * (2.0 * (p1 + p2) / dt).sqrt();
    WindParams { mean, p1, p2, k }
}

/// Total wind speed v_m + v_s [m/s].
pub fn wind_speed(params: &WindParams, state: &WindState) -> f64 {
    params.mean + state.v_s
}

/// Filter derivatives for excitation `e` (one standard normal, held per step).
pub fn turbulence_derivs(params: &WindParams, state: &WindState, e: f64) -> (f64, f64) {
    let p1p2 = params.p1 * params.p2;
    let v_s_ddot =
        -state.v_s / p1p2 - (params.p1 + params.p2) / p1p2 * state.v_s_dot + params.k / p1p2 * e;
    (state.v_s_dot, v_s_ddot)
}

/// The two (always real, negative) characteristic roots of the filter.
pub fn filter_eigenvalues(params: &WindParams) -> (f64, f64) {
    (-1.0 / params.p1, -1.0 / params.p2)
}

/// SplitMix64: the documented 64-bit generator behind every random draw.
///
/// Reference: the public-domain `splitmix64` by Sebastiano Vigna; output for
/// seed 1234567 starts 6457827717110365317, 3203168211198807973, …
/// (pinned in the tests below).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Creates a stream from a seed. Equal seeds give equal streams, always.
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Stream for generator `index` derived from a farm-level base seed.
    pub fn for_generator(base_seed: u64, index: usize) -> Self {
        SplitMix64::new(base_seed ^ index as u64)
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in the half-open interval (0, 1], using the top 53 bits.
    ///
    /// The +1 offset excludes zero so `ln(u)` below is always finite.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via the Box–Muller cosine branch:
    /// z = √(−2 ln u₁) · cos(2π u₂). One draw consumes two uniforms.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
