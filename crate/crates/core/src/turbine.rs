//! Wind generator physics: aerodynamic conversion and the reduced-order
//! doubly-fed induction generator (DFIG) model.
//!
//! ## Aerodynamic conversion
//!
//! A rotor of radius R sweeping area A = πR² captures
//!
//! ```text
//! P_m = ½ ρ C_p(λ, θ) A v_w³        [W]
//! ```
//!
//! where the power coefficient C_p depends on the tip-speed ratio λ and the
//! blade pitch θ (held at zero throughout this library):
//!
//! ```text
//! C_p(λ, θ) = 25.52 · x · e^(−12.5 x),   x = 1/(λ + 0.08 θ) − 0.035/(θ³ + 1)
//! λ = (2 k_g / p) · ω_r R / v_w
//! ```
//!
//! (25.52 folds the 0.22 · 116 product of the underlying empirical fit.)
//! At θ = 0 the curve peaks where x = 0.08, i.e. λ_opt = 1/0.115 ≈ 8.6957,
//! with C̄_p = 25.52 · 0.08 · e⁻¹ ≈ 0.75106. Deloaded machines here operate
//! **above** λ_opt, where ∂C_p/∂λ < 0: slowing the rotor raises the captured
//! power, which is the handle the converter controller uses.
//!
//! The raw curve goes negative for λ > 1/0.035; the simulation engine clamps
//! C_p at zero when forming power and torque. The functions in this module
//! return the raw curve so the analytic partial derivatives stay exact.
//!
//! ## Reduced-order electrical model
//!
//! Neglecting stator transients, the machine state is the internal voltage
//! (E_d′, E_q′) behind the transient reactance X_s′ plus the rotor speed ω_r:
//!
//! ```text
//! Ė_d′ = (1/T₀′)·[ −(E_d′ − (X_s − X_s′) I_qs) + T₀′·( −ω_s (X_m/X_r) V_qr + s_e E_q′ ) ]
//! Ė_q′ = (1/T₀′)·[ −(E_q′ + (X_s − X_s′) I_ds) + T₀′·(  ω_s (X_m/X_r) V_dr − s_e E_d′ ) ]
//! ω̇_r  = ω_s/(2H) · (T_m − T_e)
//! ```
//!
//! with stator closure and air-gap torque
//!
//! ```text
//! I_ds = (E_q′ − V_s)/X_s′,   I_qs = −E_d′/X_s′,   T_e = E_q′ V_s / X_s′.
//! ```
//!
//! ## Unit convention
//!
//! One convention is used everywhere; conversions happen only at this
//! module's boundary:
//!
//! - ω_r is stored **per unit** on the synchronous base; the electrical slip
//!   speed in the E′ equations is s_e = ω_s·(1 − ω_r) [rad/s].
//! - Torques are per unit on the S_b/ω_s base, so the mechanical torque is
//!   evaluated verbatim as T_m = ½ ρ π R² ω_s / (S_b ω_r) · C_p v_w³ and the
//!   identity T_m · ω_r · S_b / ω_s = P_m [W] holds exactly.
//! - ω̇_r = ω_s/(2H)(T_m − T_e) is the per-unit speed derivative [1/s].
//! - Voltages, currents, and reactances are per unit on the machine base.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Leading coefficient of the zero-pitch power-coefficient fit (0.22 · 116).
pub const CP_SCALE: f64 = 25.52;

/// Exponent coefficient of the power-coefficient fit.
pub const CP_DECAY: f64 = 12.5;

/// Per-machine physical parameters.
///
/// Electrical quantities are per unit on the machine base `base_power`;
/// geometry is SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WgParams {
    /// Rotor blade radius R [m].
    pub rotor_radius: f64,
    /// Air density ρ [kg/m³].
    pub air_density: f64,
    /// Machine power base S_b [VA].
    pub base_power: f64,
    /// Inertia constant H [s].
    pub inertia: f64,
    /// Stator reactance X_s [p.u.].
    pub x_s: f64,
    /// Stator transient reactance X_s′ [p.u.]; must satisfy 0 < X_s′ < X_s.
    pub x_s_prime: f64,
    /// Rotor reactance X_r [p.u.].
    pub x_r: f64,
    /// Magnetizing reactance X_m [p.u.].
    pub x_m: f64,
    /// Rotor open-circuit transient time constant T₀′ [s].
    pub t0_prime: f64,
    /// Drive-train speed ratio k_g [-] in λ = (2 k_g / p) ω_r R / v_w.
    pub gearbox_ratio: f64,
    /// Generator pole count p [-].
    pub poles: f64,
}

impl WgParams {
    /// Rejects non-physical parameter sets.
    pub fn validate(&self) -> Result<(), Error> {
        let positive: [(&str, f64); 9] = [
            ("rotor_radius", self.rotor_radius),
            ("air_density", self.air_density),
            ("base_power", self.base_power),
            ("inertia", self.inertia),
            ("x_r", self.x_r),
            ("x_m", self.x_m),
            ("t0_prime", self.t0_prime),
            ("gearbox_ratio", self.gearbox_ratio),
            ("poles", self.poles),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("turbine.{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.x_s_prime.is_finite() && self.x_s_prime > 0.0 && self.x_s > self.x_s_prime) {
            return Err(Error::config(format!(
                "turbine reactances must satisfy x_s > x_s_prime > 0, got x_s = {}, x_s_prime = {}",
                self.x_s, self.x_s_prime
            )));
        }
        Ok(())
    }

    /// Swept rotor area A = πR² [m²].
    pub fn swept_area(&self) -> f64 {
        std::f64::consts::PI * self.rotor_radius * self.rotor_radius
    }
}

/// Stator-side boundary conditions shared by the farm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBoundary {
    /// Stator (grid) voltage magnitude V_s [p.u.].
    pub v_s: f64,
    /// Synchronous electrical speed ω_s [rad/s].
    pub omega_s: f64,
}

impl GridBoundary {
    /// Rejects non-physical boundary values.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.v_s.is_finite() && self.v_s > 0.0) {
            return Err(Error::config(format!("grid.v_s must be finite and > 0, got {}", self.v_s)));
        }
        if !(self.omega_s.is_finite() && self.omega_s > 0.0) {
            return Err(Error::config(format!("grid.omega_s must be finite and > 0, got {}", self.omega_s)));
        }
        Ok(())
    }
}

/// Dynamic state of one machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WgState {
    /// d-axis internal voltage E_d′ [p.u.].
    pub e_d_prime: f64,
    /// q-axis internal voltage E_q′ [p.u.].
    pub e_q_prime: f64,
    /// Rotor speed ω_r [p.u. on the ω_s base].
    pub omega_r: f64,
}

/// Stator current components from the algebraic closure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatorCurrents {
    /// d-axis stator current I_ds = (E_q′ − V_s)/X_s′ [p.u.].
    pub i_ds: f64,
    /// q-axis stator current I_qs = −E_d′/X_s′ [p.u.].
    pub i_qs: f64,
}

/// Power-coefficient value and its first two tip-speed-ratio derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpPartials {
    /// C_p(λ, θ) (raw, unclamped).
    pub value: f64,
    /// ∂C_p/∂λ.
    pub d_lambda: f64,
    /// ∂²C_p/∂λ².
    pub d2_lambda: f64,
}

/// Peak of the zero-pitch power-coefficient curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalCp {
    /// Maximizing tip-speed ratio λ_opt = 1/0.115.
    pub lambda_opt: f64,
    /// Peak coefficient C̄_p = 25.52 · 0.08 · e⁻¹.
    pub cp_max: f64,
}

/// Raw power coefficient C_p(λ, θ).
///
/// Negative values are possible for large λ; callers forming physical power
/// or torque clamp at zero.
pub fn power_coefficient(lambda: f64, theta: f64) -> f64 {
    let x = cp_inner(lambda, theta);
    CP_SCALE * x * (-CP_DECAY * x).exp()
}

/// The inner variable x(λ, θ) of the power-coefficient fit.
fn cp_inner(lambda: f64, theta: f64) -> f64 {
    1.0 / (lambda + 0.08 * theta) - 0.035 / (theta.powi(3) + 1.0)
}

/// C_p together with its analytic first and second λ-derivatives.
///
/// With u = λ + 0.08θ: x′ = −1/u², x″ = 2/u³, and for f(x) = 25.52·x·e^(−12.5x):
/// f′ = 25.52·e^(−12.5x)(1 − 12.5x), f″ = 25.52·e^(−12.5x)(−25 + 156.25x).
pub fn cp_partials(lambda: f64, theta: f64) -> CpPartials {
    let u = lambda + 0.08 * theta;
    let x = cp_inner(lambda, theta);
    let e = (-CP_DECAY * x).exp();
    let f = CP_SCALE * x * e;
    let df_dx = CP_SCALE * e * (1.0 - CP_DECAY * x);
    let d2f_dx2 = CP_SCALE * e * (-2.0 * CP_DECAY + CP_DECAY * CP_DECAY * x);
    let dx = -1.0 / (u * u);
    let d2x = 2.0 / (u * u * u);
    CpPartials {
        value: f,
        d_lambda: df_dx * dx,
        d2_lambda: d2f_dx2 * dx * dx + df_dx * d2x,
    }
}

/// Closed-form peak of C_p(·, 0).
///
/// Maximizing x·e^(−12.5x) gives x* = 1/12.5 = 0.08, hence
/// λ_opt = 1/(0.08 + 0.035) and C̄_p = 25.52·0.08·e⁻¹.
pub fn optimal_cp() -> OptimalCp {
    OptimalCp {
        lambda_opt: 1.0 / 0.115,
        cp_max: CP_SCALE * 0.08 * (-1.0f64).exp(),
    }
}

/// Tip-speed ratio λ = (2 k_g / p) · ω_r R / v_w (ω_r per unit).
pub fn tip_speed_ratio(params: &WgParams, omega_r: f64, v_w: f64) -> f64 {
    (2.0 * params.gearbox_ratio / params.poles) * omega_r * params.rotor_radius / v_w
}

/// Sensitivity ∂λ/∂ω_r = (2 k_g / p) · R / v_w at fixed wind speed.
pub fn lambda_partial(params: &WgParams, v_w: f64) -> f64 {
    (2.0 * params.gearbox_ratio / params.poles) * params.rotor_radius / v_w
}

/// Mechanical power P_m = ½ ρ C_p π R² v_w³ [W].
pub fn mechanical_power(air_density: f64, rotor_radius: f64, cp: f64, v_w: f64) -> f64 {
    0.5 * air_density * cp * std::f64::consts::PI * rotor_radius * rotor_radius * v_w.powi(3)
}

/// Available (maximum) mechanical power ½ ρ C̄_p π R² v_w³ [W].
pub fn max_mechanical_power(air_density: f64, rotor_radius: f64, v_w: f64) -> f64 {
    mechanical_power(air_density, rotor_radius, optimal_cp().cp_max, v_w)
}

/// Mechanical torque T_m = ½ ρ π R² ω_s / (S_b ω_r) · C_p v_w³ [p.u. on S_b/ω_s].
///
/// Equivalent to P_m·ω_s/(S_b·ω_r); the exact inverse identity
/// T_m · ω_r · S_b / ω_s = P_m is relied on elsewhere.
pub fn mechanical_torque(params: &WgParams, omega_s: f64, cp: f64, v_w: f64, omega_r: f64) -> f64 {
    0.5 * params.air_density * std::f64::consts::PI * params.rotor_radius * params.rotor_radius
        * omega_s / (params.base_power * omega_r)
        * cp
        * v_w.powi(3)
}

/// Air-gap electrical torque T_e = E_q′ V_s / X_s′ [p.u.].
pub fn electrical_torque(e_q_prime: f64, v_s: f64, x_s_prime: f64) -> f64 {
    e_q_prime * v_s / x_s_prime
}

/// Stator currents from the algebraic closure behind X_s′.
pub fn stator_currents(state: &WgState, v_s: f64, x_s_prime: f64) -> StatorCurrents {
    StatorCurrents {
        i_ds: (state.e_q_prime - v_s) / x_s_prime,
        i_qs: -state.e_d_prime / x_s_prime,
    }
}

/// Internal-voltage derivatives (Ė_d′, Ė_q′) [p.u./s] for given rotor voltages.
///
/// Implements the two E′ equations verbatim with the slip speed
/// s_e = ω_s(1 − ω_r) formed at this boundary (ω_r stored per unit).
pub fn rotor_voltage_derivs(
    params: &WgParams,
    grid: &GridBoundary,
    state: &WgState,
    v_dr: f64,
    v_qr: f64,
) -> (f64, f64) {
    let cur = stator_currents(state, grid.v_s, params.x_s_prime);
    let slip = grid.omega_s * (1.0 - state.omega_r);
    let xd = params.x_s - params.x_s_prime;
    let mag = grid.omega_s * (params.x_m / params.x_r);
    let t0 = params.t0_prime;
    let ed_dot = (1.0 / t0)
        * (-(state.e_d_prime - xd * cur.i_qs) + t0 * (-mag * v_qr + slip * state.e_q_prime));
    let eq_dot = (1.0 / t0)
        * (-(state.e_q_prime + xd * cur.i_ds) + t0 * (mag * v_dr - slip * state.e_d_prime));
    (ed_dot, eq_dot)
}

/// Rotor acceleration ω̇_r = ω_s/(2H) · (T_m − T_e) [p.u./s].
pub fn rotor_speed_deriv(params: &WgParams, grid: &GridBoundary, t_m: f64, t_e: f64) -> f64 {
    grid.omega_s / (2.0 * params.inertia) * (t_m - t_e)
}

/// Workhorse parameter set for unit tests (matches the bundled scenario).
#[cfg(test)]
pub(crate) fn test_params() -> WgParams {
    WgParams {
        rotor_radius: 45.0,
        air_density: 1.225,
        base_power: 1.1e8,
        inertia: 3.0,
        x_s: 3.0,
        x_s_prime: 0.2,
        x_r: 3.0,
        x_m: 2.9,
        t0_prime: 0.55,
        gearbox_ratio: 5.7,
        poles: 4.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_grid() -> GridBoundary {
        GridBoundary { v_s: 1.0, omega_s: 2.0 * std::f64::consts::PI * 60.0 }
    }

    /// Golden-section maximizer, the independent oracle for the C_p peak.
    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        while (b - a).abs() > tol {
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - inv_phi * (b - a);
            d = a + inv_phi * (b - a);
        }
        let xm = 0.5 * (a + b);
        (xm, f(xm))
    }

    #[test]
    fn cp_zero_crossing_at_inverse_x() {
        // x = 1/λ − 0.035 vanishes at λ = 200/7 (up to rounding in 1/λ).
        assert!(power_coefficient(200.0 / 7.0, 0.0).abs() < 1e-14);
    }

    #[test]
    fn cp_spot_value_lambda_five() {
        // 25.52 · 0.165 · e^(−2.0625), independently evaluated to 25 digits.
        let expected = 0.535343144230215400561;
        let got = power_coefficient(5.0, 0.0);
        assert!((got - expected).abs() < 1e-12 * expected, "got {got}");
    }

    #[test]
    fn cp_raw_curve_goes_negative_past_zero_crossing() {
        assert!(power_coefficient(30.0, 0.0) < 0.0);
    }

    #[test]
    fn cp_peak_matches_golden_section_oracle() {
        let (lambda_opt, cp_max) = golden_max(|l| power_coefficient(l, 0.0), 0.5, 30.0, 1e-12);
        let analytic = optimal_cp();
        assert!((analytic.lambda_opt - lambda_opt).abs() < 1e-6, "λ_opt {lambda_opt}");
        assert!((analytic.cp_max - cp_max).abs() < 1e-12, "C̄_p {cp_max}");
        // Frozen independent values.
        assert!((analytic.lambda_opt - 8.695652173913043).abs() < 1e-12);
        assert!((analytic.cp_max - 0.7510626670956166).abs() < 1e-14);
    }

    #[test]
    fn cp_peak_dominates_curve_on_grid() {
        let cp_max = optimal_cp().cp_max;
        for i in 1..=1000 {
            let lambda = 30.0 * i as f64 / 1000.0;
            assert!(
                power_coefficient(lambda, 0.0) <= cp_max + 1e-15,
                "C_p exceeded peak at λ = {lambda}"
            );
        }
    }

    #[test]
    fn cp_partials_match_central_differences() {
        // Documented check grid: spans both branches, the peak, and the
        // zero crossing of the raw curve.
        let grid = [2.0, 3.0, 4.0, 5.0, 7.0, 8.695652173913043, 10.0, 14.0, 20.0, 28.0];
        for &lambda in &grid {
            let p = cp_partials(lambda, 0.0);
            let h = 1e-6 * lambda;
            let fp = power_coefficient(lambda + h, 0.0);
            let fm = power_coefficient(lambda - h, 0.0);
            let fd1 = (fp - fm) / (2.0 * h);
            assert!(
                (p.d_lambda - fd1).abs() <= 1e-6 * p.d_lambda.abs().max(1.0),
                "∂C_p/∂λ mismatch at λ = {lambda}: analytic {}, fd {fd1}",
                p.d_lambda
            );
            let h2 = 1e-4 * lambda;
            let f0 = power_coefficient(lambda, 0.0);
            let fd2 = (power_coefficient(lambda + h2, 0.0) - 2.0 * f0
                + power_coefficient(lambda - h2, 0.0))
                / (h2 * h2);
            assert!(
                (p.d2_lambda - fd2).abs() <= 1e-6 * p.d2_lambda.abs().max(1.0),
                "∂²C_p/∂λ² mismatch at λ = {lambda}: analytic {}, fd {fd2}",
                p.d2_lambda
            );
        }
    }

    #[test]
    fn cp_partials_frozen_spot_values() {
        // Independently evaluated with 25-digit arithmetic.
        let p4 = cp_partials(4.0, 0.0);
        assert!((p4.value - 0.3733814258644259).abs() < 1e-13);
        assert!((p4.d_lambda - 0.18316312678669150).abs() < 1e-13);
        assert!((p4.d2_lambda - (-0.03328311447397056)).abs() < 1e-13);
        let p10 = cp_partials(10.0, 0.0);
        assert!((p10.value - 0.7360880379624953).abs() < 1e-13);
        assert!((p10.d_lambda - (-0.02123330878737967)).abs() < 1e-13);
        assert!((p10.d2_lambda - (-0.01256304103253297)).abs() < 1e-13);
    }

    #[test]
    fn cp_derivative_sign_is_negative_above_peak() {
        for &lambda in &[9.0, 12.0, 14.9, 20.0] {
            assert!(cp_partials(lambda, 0.0).d_lambda < 0.0, "λ = {lambda}");
        }
        for &lambda in &[2.0, 5.0, 8.0] {
            assert!(cp_partials(lambda, 0.0).d_lambda > 0.0, "λ = {lambda}");
        }
    }

    #[test]
    fn tip_speed_ratio_verbatim_arithmetic() {
        let mut p = test_params();
        p.gearbox_ratio = 90.0;
        p.poles = 4.0;
        p.rotor_radius = 45.0;
        // (2·90/4)·(1.0·45/12) = 45·3.75 — exact in binary floating point.
        assert_eq!(tip_speed_ratio(&p, 1.0, 12.0), 168.75);
    }

    #[test]
    fn tip_speed_ratio_scales_linearly_in_rotor_speed() {
        let p = test_params();
        let base = tip_speed_ratio(&p, 1.0, 9.0);
        for &s in &[0.25, 0.5, 2.0, 4.0] {
            let scaled = tip_speed_ratio(&p, s, 9.0);
            assert!((scaled - s * base).abs() < 1e-12 * base * s.max(1.0));
        }
    }

    #[test]
    fn lambda_partial_matches_tip_speed_ratio_difference() {
        let p = test_params();
        let v = 9.0;
        let analytic = lambda_partial(&p, v);
        let h = 1e-7;
        let fd = (tip_speed_ratio(&p, 1.0 + h, v) - tip_speed_ratio(&p, 1.0 - h, v)) / (2.0 * h);
        assert!((analytic - fd).abs() < 1e-7 * analytic.abs());
        // λ is linear in ω_r, so the sensitivity is exactly λ(1, v).
        assert!((analytic - tip_speed_ratio(&p, 1.0, v)).abs() < 1e-15 * analytic.abs());
    }

    #[test]
    fn mechanical_power_frozen_spot_value() {
        // ½·1.225·0.4·π·45²·10³, independently evaluated: 1 558 622.655262236 W.
        let got = mechanical_power(1.225, 45.0, 0.4, 10.0);
        assert!((got - 1_558_622.655262236).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn max_mechanical_power_is_power_at_peak_cp() {
        let direct = mechanical_power(1.225, 45.0, optimal_cp().cp_max, 9.0);
        assert_eq!(max_mechanical_power(1.225, 45.0, 9.0), direct);
    }

    #[test]
    fn mechanical_torque_frozen_spot_value() {
        // ½·1.225·π·45²·ω_s/(2e6·1.2)·0.48·11³ = 391.0390806315480, evaluated
        // independently with 25-digit arithmetic.
        let mut p = test_params();
        p.base_power = 2e6;
        let ws = 2.0 * std::f64::consts::PI * 60.0;
        let got = mechanical_torque(&p, ws, 0.48, 11.0, 1.2);
        assert!((got - 391.0390806315480).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn torque_times_speed_recovers_power() {
        let p = test_params();
        let ws = test_grid().omega_s;
        for (cp, v, wr) in [(0.55, 9.0, 1.05), (0.3, 6.0, 0.8), (0.75, 12.0, 1.2), (0.1, 15.0, 0.9)] {
            let t_m = mechanical_torque(&p, ws, cp, v, wr);
            let p_m = mechanical_power(p.air_density, p.rotor_radius, cp, v);
            let back = t_m * wr * p.base_power / ws;
            assert!(
                (back - p_m).abs() < 1e-10 * p_m.abs(),
                "identity broke: {back} vs {p_m}"
            );
        }
    }

    #[test]
    fn electrical_torque_spot_value() {
        assert_eq!(electrical_torque(0.5, 1.0, 0.2), 2.5);
    }

    #[test]
    fn stator_currents_closure() {
        let s = WgState { e_d_prime: 0.4, e_q_prime: 1.0, omega_r: 1.0 };
        let c = stator_currents(&s, 1.0, 0.2);
        assert_eq!(c.i_ds, 0.0); // E_q′ = V_s
        assert_eq!(c.i_qs, -2.0); // −0.4/0.2
    }

    #[test]
    fn rotor_voltage_derivs_vanish_at_the_unexcited_fixed_point() {
        // At synchronous speed with no rotor excitation the internal voltage
        // settles on the axis of the stator voltage, scaled by the reactance
        // divider: E_d′ = 0, E_q′ = (X_s − X_s′)/X_s · V_s.
        let p = test_params();
        let g = test_grid();
        let e_q = (p.x_s - p.x_s_prime) / p.x_s * g.v_s;
        let s = WgState { e_d_prime: 0.0, e_q_prime: e_q, omega_r: 1.0 };
        let (ed_dot, eq_dot) = rotor_voltage_derivs(&p, &g, &s, 0.0, 0.0);
        assert!(ed_dot.abs() < 1e-14, "ed_dot = {ed_dot:e}");
        assert!(eq_dot.abs() < 1e-14, "eq_dot = {eq_dot:e}");
    }

    #[test]
    fn rotor_voltage_derivs_vanish_at_newton_equilibrium() {
        // Independent oracle: 2-D Newton iteration (finite-difference
        // Jacobian) on the derivative function itself, from a cold start.
        let p = test_params();
        let g = test_grid();
        let (v_dr, v_qr, omega_r) = (0.03, -0.05, 1.04);
        let f = |ed: f64, eq: f64| {
            rotor_voltage_derivs(&p, &g, &WgState { e_d_prime: ed, e_q_prime: eq, omega_r }, v_dr, v_qr)
        };
        let (mut ed, mut eq) = (0.0, 0.0);
        for _ in 0..50 {
            let (r1, r2) = f(ed, eq);
            if r1.abs().max(r2.abs()) < 1e-12 {
                break;
            }
            let h = 1e-6;
            let (a1, a2) = f(ed + h, eq);
            let (b1, b2) = f(ed, eq + h);
            let (j11, j21) = ((a1 - r1) / h, (a2 - r2) / h);
            let (j12, j22) = ((b1 - r1) / h, (b2 - r2) / h);
            let det = j11 * j22 - j12 * j21;
            ed -= (r1 * j22 - r2 * j12) / det;
            eq -= (r2 * j11 - r1 * j21) / det;
        }
        let (r1, r2) = f(ed, eq);
        assert!(r1.abs() < 1e-9 && r2.abs() < 1e-9, "residual ({r1}, {r2})");
        // The equilibrium is nontrivial.
        assert!(ed.abs() > 1e-6 || eq.abs() > 1e-6);
    }

    #[test]
    fn rotor_speed_deriv_verbatim_arithmetic() {
        // H = 3, ω_s = 2π60, T_m − T_e = 0.01 → ω_s·0.01/6 = π/5.
        let p = test_params();
        let g = test_grid();
        let got = rotor_speed_deriv(&p, &g, 0.51, 0.5);
        let expected = g.omega_s * 0.01 / 6.0;
        assert!((got - expected).abs() < 1e-12 * expected);
        assert!((expected - std::f64::consts::PI / 5.0).abs() < 1e-13);
    }

    #[test]
    fn params_validation_rejects_bad_reactances() {
        let mut p = test_params();
        p.x_s_prime = 3.5; // > x_s
        assert!(p.validate().is_err());
        p.x_s_prime = 0.0;
        assert!(p.validate().is_err());
        p.x_s_prime = 0.2;
        assert!(p.validate().is_ok());
        p.inertia = -1.0;
        assert!(p.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// T_m·ω_r·S_b/ω_s = P_m across the operating envelope.
            #[test]
            fn torque_power_identity(
                cp in 0.01f64..0.75,
                v in 4.0f64..20.0,
                wr in 0.5f64..1.5,
            ) {
                let p = test_params();
                let ws = 2.0 * std::f64::consts::PI * 60.0;
                let t_m = mechanical_torque(&p, ws, cp, v, wr);
                let p_m = mechanical_power(p.air_density, p.rotor_radius, cp, v);
                let back = t_m * wr * p.base_power / ws;
                prop_assert!((back - p_m).abs() < 1e-10 * p_m.abs());
            }

            /// The analytic λ-derivative matches a central difference everywhere
            /// on the physical branch.
            #[test]
            fn cp_partial_matches_fd_everywhere(lambda in 1.0f64..28.0) {
                let a = cp_partials(lambda, 0.0);
                let h = 1e-6 * lambda;
                let fd = (power_coefficient(lambda + h, 0.0)
                    - power_coefficient(lambda - h, 0.0)) / (2.0 * h);
                prop_assert!((a.d_lambda - fd).abs() <= 1e-6 * a.d_lambda.abs().max(1.0));
            }
        }
    }
}
