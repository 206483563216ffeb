//! Rotor-side-converter control: a feedback-linearizing d-axis voltage law
//! that makes each generator's electrical torque chase a consensus-derived
//! reference, with a control-Lyapunov certificate for the tracking error.
//!
//! ## From utilization to torque
//!
//! Utilization z = C_p/C̄_p evolves through the rotor speed:
//!
//! ```text
//! ż = G · (T_m − T_e),   G = (1/C̄_p) · (∂C_p/∂λ) · (∂λ/∂ω_r) · ω_s/(2H)
//! ```
//!
//! Demanding the dispatch behavior ż = −k_α (z − z_up) (z_up: upstream
//! neighbor's utilization, or the farm tracking integrator for the leader)
//! fixes the torque reference and its feed-forward rate:
//!
//! ```text
//! T_e* = T_m + k_α (z − z_up)/G
//! Ṫ_e* = Ṫ_m + k_α [ (ż − ż_up)/G + (z − z_up) · d(1/G)/dt ]
//! d(1/G)/dt = −C̄_p · (2H/ω_s) · (∂²C_p/∂λ² / (∂C_p/∂λ)²) · ω̇_r
//! ```
//!
//! On the over-speed branch ∂C_p/∂λ < 0, so G < 0 and the reference is well
//! defined; near the C_p peak G → 0 and the law falls back to T_e* = T_m
//! (flagged, see [`RscConfig::eps_singular`]).
//!
//! ## Voltage law and certificate
//!
//! With T_e = E_q′ V_s / X_s′, choosing
//!
//! ```text
//! V_dr = (X_r/(X_m ω_s)) · (X_s′/V_s) · [Ṫ_e* − k_β (T_e − T_e*)] − γ
//! γ    = (X_r/(X_m ω_s)) · [ −(E_q′ + (X_s − X_s′) I_ds)/T₀′ − s_e E_d′ ]
//! ```
//!
//! cancels the open-loop flux dynamics exactly and leaves
//!
//! ```text
//! Ṫ_e = Ṫ_e* − k_β (T_e − T_e*)
//! ```
//!
//! so V_e = ½ (T_e − T_e*)² obeys V̇_e = −2 k_β V_e: the torque error decays
//! exponentially at rate k_β regardless of the operating point. The q-axis
//! voltage does not enter the torque channel; it is chosen once at start-up
//! (see [`VqrPolicy`]) and held.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::turbine::{
    self, CpPartials, GridBoundary, WgParams, WgState,
};

/// How the q-axis rotor voltage is fixed at start-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VqrPolicy {
    /// Solve Ė_d′ = 0 at the initial state and hold that voltage.
    Hold,
    /// Drive with V_qr = 0.
    Zero,
}

/// Per-generator rotor-side-converter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RscConfig {
    /// Consensus gain k_α [1/s] shaping the torque reference.
    pub k_alpha: f64,
    /// Torque-error feedback gain k_β [1/s].
    pub k_beta: f64,
    /// Gain on the rate feed-forward term of Ṫ_e*; equal to `k_alpha`
    /// unless deliberately detuned.
    pub rate_gain: f64,
    /// Fallback threshold on |∂C_p/∂λ|: below it the reference degenerates
    /// to T_e* = T_m.
    pub eps_singular: f64,
    /// Symmetric d-axis voltage clamp [p.u.].
    pub vdr_limit: f64,
    /// Start-up policy for the held q-axis voltage.
    pub vqr_policy: VqrPolicy,
}

impl RscConfig {
    /// Standard configuration for the given gain pair.
    pub fn new(k_alpha: f64, k_beta: f64) -> Self {
        RscConfig {
            k_alpha,
            k_beta,
            rate_gain: k_alpha,
            eps_singular: 1e-8,
            vdr_limit: 1.0,
            vqr_policy: VqrPolicy::Hold,
        }
    }

    /// Rejects non-positive gains or limits.
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("k_alpha", self.k_alpha),
            ("k_beta", self.k_beta),
            ("rate_gain", self.rate_gain),
            ("eps_singular", self.eps_singular),
            ("vdr_limit", self.vdr_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!(
                    "controller.{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a generator's controller reads at one evaluation instant.
#[derive(Debug, Clone, Copy)]
pub struct ControlInputs {
    /// Wind speed at the rotor [m/s].
    pub v_w: f64,
    /// Pitch angle [deg].
    pub theta: f64,
    /// Upstream utilization signal z_up [-] (predecessor's z, or the farm
    /// tracking integrator for the leader).
    pub upstream_z: f64,
    /// Upstream utilization rate ż_up [1/s].
    pub upstream_z_rate: f64,
    /// Externally estimated mechanical-torque rate [p.u./s]; `None` selects
    /// the built-in frozen-wind analytic rate.
    pub t_m_rate: Option<f64>,
    /// Held q-axis rotor voltage [p.u.].
    pub v_qr_held: f64,
}

/// One evaluation of the rotor-side control law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RscCommand {
    /// d-axis rotor voltage [p.u.], after clamping.
    pub v_dr: f64,
    /// q-axis rotor voltage [p.u.] (the held value, passed through).
    pub v_qr: f64,
    /// Torque reference T_e* [p.u.].
    pub t_e_star: f64,
    /// Reference rate Ṫ_e* [p.u./s].
    pub t_e_star_rate: f64,
    /// Certificate value V_e = ½ (T_e − T_e*)² [p.u.²].
    pub v_e: f64,
    /// Own utilization z [-].
    pub z: f64,
    /// Own utilization rate ż [1/s].
    pub z_rate: f64,
    /// Mechanical torque at this instant [p.u.].
    pub t_m: f64,
    /// Electrical torque at this instant [p.u.].
    pub t_e: f64,
    /// True when the d-axis voltage hit the clamp.
    pub saturated: bool,
    /// True when |∂C_p/∂λ| fell below the fallback threshold.
    pub singular_fallback: bool,
}

/// Utilization z = C_p/C̄_p, with negative C_p treated as zero capture.
pub fn utilization(cp: f64, cp_max: f64) -> f64 {
    cp.max(0.0) / cp_max
}

/// Utilization rate ż = G (T_m − T_e) for torque gain G.
pub fn utilization_rate(gain: f64, t_m: f64, t_e: f64) -> f64 {
    gain * (t_m - t_e)
}

/// Torque gain G = (1/C̄_p)(∂C_p/∂λ)(∂λ/∂ω_r)·ω_s/(2H) [1/(s·p.u.)].
///
/// Negative on the over-speed branch; vanishes at the C_p peak.
pub fn utilization_torque_gain(
    params: &WgParams,
    omega_s: f64,
    v_w: f64,
    cp_d_lambda: f64,
) -> f64 {
    let cp_max = turbine::optimal_cp().cp_max;
    cp_d_lambda * turbine::lambda_partial(params, v_w) * omega_s
        / (cp_max * 2.0 * params.inertia)
}

/// Frozen-wind analytic mechanical-torque rate [p.u./s].
///
/// With T_m = κ C_p(λ)/ω_r, κ = ½ ρ π R² ω_s v³ / S_b, and λ = L ω_r:
///
/// ```text
/// Ṫ_m = (κ/ω_r) · (∂C_p/∂λ · L − C_p/ω_r) · ω̇_r
/// ```
pub fn mechanical_torque_rate(
    params: &WgParams,
    omega_s: f64,
    v_w: f64,
    omega_r: f64,
    partials: &CpPartials,
    omega_r_dot: f64,
) -> f64 {
    let kappa = 0.5 * params.air_density * params.swept_area() * omega_s * v_w.powi(3)
        / params.base_power;
    let cp = partials.value.max(0.0);
    let l = turbine::lambda_partial(params, v_w);
    (kappa / omega_r) * (partials.d_lambda * l - cp / omega_r) * omega_r_dot
}

/// Certificate value V_e = ½ (T_e − T_e*)².
pub fn clf_value(t_e: f64, t_e_star: f64) -> f64 {
    let e = t_e - t_e_star;
    0.5 * e * e
}

/// Flux-dynamics cancellation term γ of the d-axis voltage law [p.u.].
pub fn gamma_correction(params: &WgParams, grid: &GridBoundary, state: &WgState) -> f64 {
    let currents = turbine::stator_currents(state, grid.v_s, params.x_s_prime);
    let slip = grid.omega_s * (1.0 - state.omega_r);
    let open_loop = -(state.e_q_prime + (params.x_s - params.x_s_prime) * currents.i_ds)
        / params.t0_prime
        - slip * state.e_d_prime;
    open_loop * params.x_r / (params.x_m * grid.omega_s)
}

/// q-axis voltage that freezes the d-axis flux state (Ė_d′ = 0) at `state`.
pub fn vqr_hold_value(params: &WgParams, grid: &GridBoundary, state: &WgState) -> f64 {
    let currents = turbine::stator_currents(state, grid.v_s, params.x_s_prime);
    let slip = grid.omega_s * (1.0 - state.omega_r);
    (params.x_r / (params.x_m * grid.omega_s))
        * (slip * state.e_q_prime
            - (state.e_d_prime - (params.x_s - params.x_s_prime) * currents.i_qs)
                / params.t0_prime)
}

/// Evaluates the rotor-side control law for one generator.
pub fn rsc_control(
    params: &WgParams,
    grid: &GridBoundary,
    state: &WgState,
    inputs: &ControlInputs,
    cfg: &RscConfig,
) -> RscCommand {
    let cp_max = turbine::optimal_cp().cp_max;
    let lambda = turbine::tip_speed_ratio(params, state.omega_r, inputs.v_w);
    let partials = turbine::cp_partials(lambda, inputs.theta);
    let cp = partials.value.max(0.0);

    let z = utilization(partials.value, cp_max);
    let t_m = turbine::mechanical_torque(params, grid.omega_s, cp, inputs.v_w, state.omega_r);
    let t_e = turbine::electrical_torque(state.e_q_prime, grid.v_s, params.x_s_prime);
    let gain = utilization_torque_gain(params, grid.omega_s, inputs.v_w, partials.d_lambda);
    let z_rate = utilization_rate(gain, t_m, t_e);
    let omega_r_dot = turbine::rotor_speed_deriv(params, grid, t_m, t_e);
    let t_m_rate = inputs.t_m_rate.unwrap_or_else(|| {
        mechanical_torque_rate(params, grid.omega_s, inputs.v_w, state.omega_r, &partials, omega_r_dot)
    });

    let gap = z - inputs.upstream_z;
    let singular_fallback = partials.d_lambda.abs() < cfg.eps_singular;
    let (t_e_star, t_e_star_rate) = if singular_fallback {
        (t_m, t_m_rate)
    } else {
        let gain_inv_rate = -cp_max * (2.0 * params.inertia / grid.omega_s)
            * (partials.d2_lambda / (partials.d_lambda * partials.d_lambda))
            * omega_r_dot;
        let t_e_star = t_m + cfg.k_alpha * gap / gain;
        let t_e_star_rate = t_m_rate
            + cfg.rate_gain
                * ((z_rate - inputs.upstream_z_rate) / gain + gap * gain_inv_rate);
        (t_e_star, t_e_star_rate)
    };

    let torque_error = t_e - t_e_star;
    let v_dr_raw = (params.x_r / (params.x_m * grid.omega_s))
        * (params.x_s_prime / grid.v_s)
        * (t_e_star_rate - cfg.k_beta * torque_error)
        - gamma_correction(params, grid, state);
    let v_dr = v_dr_raw.clamp(-cfg.vdr_limit, cfg.vdr_limit);

    RscCommand {
        v_dr,
        v_qr: inputs.v_qr_held,
        t_e_star,
        t_e_star_rate,
        v_e: clf_value(t_e, t_e_star),
        z,
        z_rate,
        t_m,
        t_e,
        saturated: v_dr != v_dr_raw,
        singular_fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbine::test_params;
    use crate::wind::SplitMix64;

    fn grid() -> GridBoundary {
        GridBoundary { v_s: 1.0, omega_s: 2.0 * std::f64::consts::PI * 60.0 }
    }

    fn cfg() -> RscConfig {
        RscConfig::new(40.0, 60.0)
    }

    fn inputs(upstream_z: f64) -> ControlInputs {
        ControlInputs {
            v_w: 9.0,
            theta: 0.0,
            upstream_z,
            upstream_z_rate: 0.0,
            t_m_rate: None,
            v_qr_held: 0.0,
        }
    }

    /// Start-of-run operating point used by the frozen-value tests:
    /// utilization 0.73 on the over-speed branch at 9 m/s.
    fn deloaded_state() -> WgState {
        WgState {
            e_d_prime: 0.0,
            e_q_prime: 1.0204993275747976,
            omega_r: 1.046076060157229,
        }
    }

    #[test]
    fn torque_gain_matches_frozen_value() {
        let p = test_params();
        let g = grid();
        let s = deloaded_state();
        let lambda = turbine::tip_speed_ratio(&p, s.omega_r, 9.0);
        let partials = turbine::cp_partials(lambda, 0.0);
        let gain = utilization_torque_gain(&p, g.omega_s, 9.0, partials.d_lambda);
        assert!(
            (gain - -54.91022183088698).abs() < 1e-10 * 54.91,
            "G = {gain}"
        );
        assert!(gain < 0.0, "over-speed branch must give a negative gain");
    }

    #[test]
    fn reference_reduces_to_mechanical_torque_at_consensus() {
        // Zero gap to the upstream signal: T_e* must equal T_m exactly.
        let p = test_params();
        let g = grid();
        let s = deloaded_state();
        let cmd = rsc_control(&p, &g, &s, &inputs(0.73), &cfg());
        assert!((cmd.z - 0.73).abs() < 1e-12, "z = {}", cmd.z);
        assert!(
            (cmd.t_e_star - cmd.t_m).abs() < 1e-12 * cmd.t_m,
            "T_e* = {}, T_m = {}",
            cmd.t_e_star,
            cmd.t_m
        );
        assert!((cmd.t_m - 5.102496637873988).abs() < 1e-9, "T_m = {}", cmd.t_m);
    }

    #[test]
    fn tracking_the_reference_realizes_the_consensus_rate() {
        // With T_e pinned to T_e*, ż must equal −k_α (z − z_up).
        let p = test_params();
        let g = grid();
        let c = cfg();
        let mut s = deloaded_state();
        let upstream = 0.76;
        let first = rsc_control(&p, &g, &s, &inputs(upstream), &c);
        // Re-seat the q-axis flux so the electrical torque equals the reference.
        s.e_q_prime = first.t_e_star * p.x_s_prime / g.v_s;
        let cmd = rsc_control(&p, &g, &s, &inputs(upstream), &c);
        let want = -c.k_alpha * (cmd.z - upstream);
        assert!(
            (cmd.z_rate - want).abs() <= 1e-10 * want.abs().max(1.0),
            "ż = {}, −k_α·gap = {want}",
            cmd.z_rate
        );
    }

    #[test]
    fn closed_loop_torque_rate_matches_design_on_random_states() {
        // The d-axis voltage law must cancel the open-loop flux terms
        // exactly: Ṫ_e = Ṫ_e* − k_β (T_e − T_e*) through the plant model.
        let p = test_params();
        let g = grid();
        let mut c = cfg();
        c.vdr_limit = 50.0; // keep the clamp out of this algebraic check
        let mut rng = SplitMix64::new(99);
        for trial in 0..200 {
            let s = WgState {
                e_d_prime: -0.2 + 0.4 * rng.next_uniform(),
                e_q_prime: 0.8 + 0.4 * rng.next_uniform(),
                omega_r: 0.95 + 0.2 * rng.next_uniform(),
            };
            let mut inp = inputs(0.6 + 0.3 * rng.next_uniform());
            inp.upstream_z_rate = -0.5 + rng.next_uniform();
            inp.v_qr_held = -0.05 + 0.1 * rng.next_uniform();
            let cmd = rsc_control(&p, &g, &s, &inp, &c);
            assert!(!cmd.saturated, "trial {trial} unexpectedly clamped");
            let (_, e_q_dot) = turbine::rotor_voltage_derivs(&p, &g, &s, cmd.v_dr, cmd.v_qr);
            let t_e_dot = g.v_s / p.x_s_prime * e_q_dot;
            let want = cmd.t_e_star_rate - c.k_beta * (cmd.t_e - cmd.t_e_star);
            assert!(
                (t_e_dot - want).abs() <= 1e-10 * want.abs().max(1.0),
                "trial {trial}: Ṫ_e = {t_e_dot}, design = {want}"
            );
        }
    }

    #[test]
    fn reference_rate_matches_finite_difference_of_reference() {
        // Move the full state along its closed-loop flow for a small dt and
        // compare Ṫ_e* against the central difference of T_e*.
        let p = test_params();
        let g = grid();
        let c = cfg();
        let s0 = WgState { e_d_prime: 0.01, e_q_prime: 1.05, omega_r: 1.03 };
        let upstream = 0.75;
        let dt = 1e-6;

        let eval = |s: &WgState| rsc_control(&p, &g, s, &inputs(upstream), &c);
        let step = |s: &WgState, h: f64| {
            let cmd = eval(s);
            let (e_d_dot, e_q_dot) = turbine::rotor_voltage_derivs(&p, &g, s, cmd.v_dr, cmd.v_qr);
            let w_dot = turbine::rotor_speed_deriv(&p, &g, cmd.t_m, cmd.t_e);
            WgState {
                e_d_prime: s.e_d_prime + h * e_d_dot,
                e_q_prime: s.e_q_prime + h * e_q_dot,
                omega_r: s.omega_r + h * w_dot,
            }
        };

        // upstream_z_rate is zero here, so the frozen upstream signal is
        // consistent with the rate law and the FD check is clean.
        let ahead = eval(&step(&s0, dt));
        let behind = eval(&step(&s0, -dt));
        let fd = (ahead.t_e_star - behind.t_e_star) / (2.0 * dt);
        let rate = eval(&s0).t_e_star_rate;
        assert!(
            (rate - fd).abs() <= 1e-5 * fd.abs().max(1.0),
            "Ṫ_e* = {rate}, FD = {fd}"
        );
    }

    #[test]
    fn held_q_axis_voltage_freezes_d_axis_flux() {
        let p = test_params();
        let g = grid();
        let states = [
            deloaded_state(),
            WgState { e_d_prime: 0.05, e_q_prime: 0.9, omega_r: 1.1 },
        ];
        for s in states {
            let v_qr = vqr_hold_value(&p, &g, &s);
            let (e_d_dot, _) = turbine::rotor_voltage_derivs(&p, &g, &s, 0.123, v_qr);
            assert!(e_d_dot.abs() < 1e-12, "Ė_d′ = {e_d_dot}");
        }
    }

    #[test]
    fn reference_falls_back_near_the_cp_peak() {
        let p = test_params();
        let g = grid();
        // Put the tip-speed ratio exactly at the C_p peak, where the
        // utilization-to-torque channel loses authority.
        let lambda_opt = turbine::optimal_cp().lambda_opt;
        let omega_r = lambda_opt / turbine::lambda_partial(&p, 9.0);
        let s = WgState { e_d_prime: 0.0, e_q_prime: 1.0, omega_r };
        let cmd = rsc_control(&p, &g, &s, &inputs(0.5), &cfg());
        assert!(cmd.singular_fallback);
        assert_eq!(cmd.t_e_star, cmd.t_m);
        assert!((cmd.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn d_axis_voltage_clamps_and_flags() {
        let p = test_params();
        let g = grid();
        let mut c = cfg();
        c.vdr_limit = 0.05;
        let s = deloaded_state();
        // A huge utilization gap demands more voltage than the clamp allows.
        let cmd = rsc_control(&p, &g, &s, &inputs(3.0), &c);
        assert!(cmd.saturated);
        assert!((cmd.v_dr.abs() - 0.05).abs() < 1e-15);
        // A zero gap with matched torque stays comfortably inside.
        let calm = rsc_control(&p, &g, &s, &inputs(0.73), &c);
        assert!(!calm.saturated, "v_dr = {}", calm.v_dr);
    }

    #[test]
    fn certificate_value_is_half_squared_error() {
        let err = 5.2f64 - 5.0;
        assert_eq!(clf_value(5.2, 5.0), 0.5 * err * err);
        assert_eq!(clf_value(5.0, 5.0), 0.0);
        assert_eq!(clf_value(4.5, 5.5), 0.5);
    }

    #[test]
    fn config_validation_rejects_bad_gains() {
        assert!(cfg().validate().is_ok());
        let mut bad = cfg();
        bad.k_beta = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg();
        bad.vdr_limit = f64::NAN;
        assert!(bad.validate().is_err());
    }
}
