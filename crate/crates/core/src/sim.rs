//! Closed-loop farm simulation: fixed-step RK4 over the coupled electrical,
//! mechanical, wind, and dispatch dynamics of all generators.
//!
//! ## State vector
//!
//! ```text
//! y[0]                    ξ_h      farm tracking integrator
//! y[1+3i .. 4+3i]         E_d′, E_q′, ω_r        for generator i
//! y[1+3n+2i .. 3+3n+2i]   v_s, v̇_s   (turbulence filter, when enabled)
//! ```
//!
//! ## Step semantics
//!
//! Once per macro-step, at its start:
//! - the farm power total is aggregated (chain relay or average consensus)
//!   and held for the step — ξ̇_h uses this frozen value at every stage;
//! - the reference p_d is sampled from the schedule and held;
//! - one standard-normal excitation per generator is drawn and held
//!   (turbulence only);
//! - the backward-difference mechanical-torque rate is updated
//!   (finite-difference mode only).
//!
//! Within the four RK4 stages, each follower reads its predecessor's
//! utilization and utilization rate *fresh from the stage state* — the
//! torque loop is much faster than the consensus layer, and stale
//! neighbor rates would stall the torque-error decay. Setting
//! `hop_delay_steps > 0` instead holds whole-step-old snapshots, modeling
//! a communication delay.
//!
//! Initialization is closed-form: the deloaded tip-speed ratio solving
//! C_p(λ) = z₀·C̄_p on the over-speed branch fixes ω_r(0); torques are
//! matched up to the configured offset; with a zero offset, calm wind,
//! and the derived farm base the initial state is an exact equilibrium.

use crate::config::{Aggregation, Scenario, TorqueRateMode};
use crate::controller::{self, ControlInputs, RscCommand, RscConfig, VqrPolicy};
use crate::error::Error;
use crate::protocol::{self, DelayLine};
use crate::trace::SimTrace;
use crate::turbine::{self, WgState};
use crate::wind::{self, SplitMix64, WindParams, WindState};

/// One classic RK4 step of `y' = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let k1 = f(t, y);
    let y2: Vec<f64> = y.iter().zip(&k1).map(|(yi, ki)| yi + 0.5 * dt * ki).collect();
    let k2 = f(t + 0.5 * dt, &y2);
    let y3: Vec<f64> = y.iter().zip(&k2).map(|(yi, ki)| yi + 0.5 * dt * ki).collect();
    let k3 = f(t + 0.5 * dt, &y3);
    let y4: Vec<f64> = y.iter().zip(&k3).map(|(yi, ki)| yi + dt * ki).collect();
    let k4 = f(t + dt, &y4);
    (0..y.len())
        .map(|j| y[j] + dt / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]))
        .collect()
}

/// Tip-speed ratio on the over-speed (deloaded) branch delivering
/// utilization `z`: the root of C_p(λ) = z·C̄_p with λ > λ_opt.
///
/// Reducing rotor speed from this branch *raises* the power coefficient,
/// which is what lets a torque increase raise captured power.
pub fn deloaded_tip_speed_ratio(z: f64) -> f64 {
    assert!(z > 0.0 && z < 1.0, "utilization must lie in (0, 1), got {z}");
    let opt = turbine::optimal_cp();
    let target = z * opt.cp_max;
    let (mut lo, mut hi) = (opt.lambda_opt, 40.0);
    // C_p decreases from C̄_p to below zero on (λ_opt, 40], so the target is
    // bracketed. 200 halvings drive the interval below one ulp.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if turbine::power_coefficient(mid, 0.0) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form start-of-run operating point shared by all generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialEquilibrium {
    /// Deloaded tip-speed ratio λ(0).
    pub lambda: f64,
    /// Rotor speed ω_r(0) [p.u.].
    pub omega_r: f64,
    /// Power coefficient C_p(0).
    pub c_p: f64,
    /// Utilization z(0).
    pub z: f64,
    /// Mechanical torque T_m(0) [p.u.].
    pub t_m: f64,
    /// Electrical torque T_e(0) = T_m(0)·(1 + offset) [p.u.].
    pub t_e: f64,
    /// q-axis transient voltage E_q′(0) [p.u.].
    pub e_q_prime: f64,
    /// d-axis transient voltage E_d′(0) [p.u.].
    pub e_d_prime: f64,
    /// Tracking integrator ξ_h(0).
    pub xi_h: f64,
    /// Held q-axis rotor voltage [p.u.].
    pub v_qr: f64,
}

/// Computes the start-of-run operating point for a scenario.
pub fn initial_equilibrium(sc: &Scenario) -> InitialEquilibrium {
    let z0 = sc.init_utilization;
    let lambda = deloaded_tip_speed_ratio(z0);
    let omega_r = lambda / turbine::lambda_partial(&sc.turbine, sc.wind.mean);
    let c_p = turbine::power_coefficient(lambda, 0.0);
    let t_m = turbine::mechanical_torque(&sc.turbine, sc.grid.omega_s, c_p, sc.wind.mean, omega_r);
    let t_e = t_m * (1.0 + sc.init_torque_offset);
    let e_q_prime = t_e * sc.turbine.x_s_prime / sc.grid.v_s;
    let e_d_prime = sc.init_e_d_prime;
    let state = WgState { e_d_prime, e_q_prime, omega_r };
    let v_qr = match sc.vqr_policy {
        VqrPolicy::Hold => controller::vqr_hold_value(&sc.turbine, &sc.grid, &state),
        VqrPolicy::Zero => 0.0,
    };
    InitialEquilibrium {
        lambda,
        omega_r,
        c_p,
        z: controller::utilization(c_p, turbine::optimal_cp().cp_max),
        t_m,
        t_e,
        e_q_prime,
        e_d_prime,
        xi_h: z0,
        v_qr,
    }
}

/// Why and where an integration was cut short.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbortInfo {
    /// Simulation time of the failed step [s].
    pub t: f64,
    /// Generator whose state went non-finite (0 for farm-level state).
    pub generator: usize,
    /// Name of the offending state component.
    pub quantity: &'static str,
}

impl AbortInfo {
    /// The equivalent error value.
    pub fn to_error(self) -> Error {
        Error::NonFinite { t: self.t, generator: self.generator, quantity: self.quantity }
    }
}

/// A completed (or aborted) simulation.
#[derive(Debug, Clone)]
pub struct SimRun {
    /// Recorded samples; on abort, everything recorded before the failure.
    pub trace: SimTrace,
    /// Held q-axis voltage per generator [p.u.].
    pub v_qr_held: Vec<f64>,
    /// Present when the run stopped on a non-finite state.
    pub aborted: Option<AbortInfo>,
}

/// Runs a validated scenario to completion (or abort).
pub fn run_scenario(sc: &Scenario) -> Result<SimRun, Error> {
    sc.validate()?;
    Engine::new(sc).run()
}

/// Per-macro-step frozen quantities.
struct StepContext {
    p_d: f64,
    sum_pm: f64,
    noise: Vec<f64>,
    t_m_rate_fd: Option<Vec<f64>>,
    delayed: Option<Vec<(f64, f64)>>,
}

/// Per-generator algebraic quantities at one evaluation point.
#[derive(Clone, Copy)]
struct GenAlgebra {
    v_w: f64,
    z: f64,
    z_rate: f64,
    t_m: f64,
    c_p_raw: f64,
    p_m: f64,
}

struct Engine<'a> {
    sc: &'a Scenario,
    n: usize,
    cp_max: f64,
    wind_params: WindParams,
    rsc: Vec<RscConfig>,
    v_qr_held: Vec<f64>,
    init: InitialEquilibrium,
}

const XI: usize = 0;

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let init = initial_equilibrium(sc);
        let rsc: Vec<RscConfig> = (0..sc.n)
            .map(|i| RscConfig {
                k_alpha: sc.gains.k_alpha[i],
                k_beta: sc.gains.k_beta[i],
                rate_gain: sc.rate_gain.unwrap_or(sc.gains.k_alpha[i]),
                eps_singular: sc.eps_singular,
                vdr_limit: sc.vdr_limit,
                vqr_policy: sc.vqr_policy,
            })
            .collect();
        Engine {
            sc,
            n: sc.n,
            cp_max: turbine::optimal_cp().cp_max,
            wind_params: sc.wind.filter_params(sc.dt),
            rsc,
            v_qr_held: vec![init.v_qr; sc.n],
            init,
        }
    }

    fn state_len(&self) -> usize {
        1 + 3 * self.n + if self.sc.wind.turbulence { 2 * self.n } else { 0 }
    }

    fn wind_offset(&self) -> usize {
        1 + 3 * self.n
    }

    fn wg_state(&self, y: &[f64], i: usize) -> WgState {
        WgState {
            e_d_prime: y[1 + 3 * i],
            e_q_prime: y[2 + 3 * i],
            omega_r: y[3 + 3 * i],
        }
    }

    fn wind_speed_of(&self, y: &[f64], i: usize) -> f64 {
        if self.sc.wind.turbulence {
            self.wind_params.mean + y[self.wind_offset() + 2 * i]
        } else {
            self.wind_params.mean
        }
    }

    fn init_state(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.state_len()];
        y[XI] = self.init.xi_h;
        for i in 0..self.n {
            y[1 + 3 * i] = self.init.e_d_prime;
            y[2 + 3 * i] = self.init.e_q_prime;
            y[3 + 3 * i] = self.init.omega_r;
        }
        // Turbulence filter states start at rest (zero deviation).
        y
    }

    /// Names the state component at flat index `idx`.
    fn classify(&self, idx: usize) -> (usize, &'static str) {
        if idx == XI {
            return (0, "xi_h");
        }
        let body = idx - 1;
        if body < 3 * self.n {
            let names = ["e_d_prime", "e_q_prime", "omega_r"];
            return (body / 3, names[body % 3]);
        }
        let w = body - 3 * self.n;
        (w / 2, if w % 2 == 0 { "wind_v_s" } else { "wind_v_s_dot" })
    }

    /// Turbine algebra for every generator at state `y`.
    fn algebra(&self, y: &[f64]) -> Vec<GenAlgebra> {
        let sc = self.sc;
        (0..self.n)
            .map(|i| {
                let ws = self.wg_state(y, i);
                let v_w = self.wind_speed_of(y, i);
                let lambda = turbine::tip_speed_ratio(&sc.turbine, ws.omega_r, v_w);
                let partials = turbine::cp_partials(lambda, 0.0);
                let cp = partials.value.max(0.0);
                let z = controller::utilization(partials.value, self.cp_max);
                let t_m =
                    turbine::mechanical_torque(&sc.turbine, sc.grid.omega_s, cp, v_w, ws.omega_r);
                let t_e = turbine::electrical_torque(ws.e_q_prime, sc.grid.v_s, sc.turbine.x_s_prime);
                let gain =
                    controller::utilization_torque_gain(&sc.turbine, sc.grid.omega_s, v_w, partials.d_lambda);
                let z_rate = controller::utilization_rate(gain, t_m, t_e);
                let p_m = turbine::mechanical_power(sc.turbine.air_density, sc.turbine.rotor_radius, cp, v_w)
                    / sc.farm_base;
                GenAlgebra { v_w, z, z_rate, t_m, c_p_raw: partials.value, p_m }
            })
            .collect()
    }

    /// Aggregated farm power [p.u.], by the configured scheme.
    fn aggregate(&self, powers: &[f64]) -> f64 {
        match self.sc.aggregation {
            Aggregation::Relay => protocol::relay_aggregate(powers).0,
            Aggregation::Average => {
                let x = protocol::average_consensus(powers, self.sc.average_step, self.sc.average_rounds)
                    .expect("average_step validated against the diffusion bound");
                self.n as f64 * x[0]
            }
        }
    }

    /// Upstream (z, ż) signal seen by generator `i` at this evaluation.
    fn upstream(
        &self,
        i: usize,
        y: &[f64],
        ctx: &StepContext,
        gens: &[GenAlgebra],
    ) -> (f64, f64) {
        if i == 0 {
            (y[XI], protocol::leader_aux_deriv(ctx.p_d, ctx.sum_pm))
        } else if let Some(delayed) = &ctx.delayed {
            delayed[i - 1]
        } else {
            (gens[i - 1].z, gens[i - 1].z_rate)
        }
    }

    /// Controller commands for every generator at state `y`.
    fn commands(&self, y: &[f64], ctx: &StepContext, gens: &[GenAlgebra]) -> Vec<RscCommand> {
        (0..self.n)
            .map(|i| {
                let ws = self.wg_state(y, i);
                let (upstream_z, upstream_z_rate) = self.upstream(i, y, ctx, gens);
                let inputs = ControlInputs {
                    v_w: gens[i].v_w,
                    theta: 0.0,
                    upstream_z,
                    upstream_z_rate,
                    t_m_rate: ctx.t_m_rate_fd.as_ref().map(|r| r[i]),
                    v_qr_held: self.v_qr_held[i],
                };
                controller::rsc_control(&self.sc.turbine, &self.sc.grid, &ws, &inputs, &self.rsc[i])
            })
            .collect()
    }

    /// Full state derivative under the frozen step context.
    fn derivs(&self, y: &[f64], ctx: &StepContext) -> Vec<f64> {
        let gens = self.algebra(y);
        let cmds = self.commands(y, ctx, &gens);
        let mut dy = vec![0.0; y.len()];
        dy[XI] = protocol::leader_aux_deriv(ctx.p_d, ctx.sum_pm);
        for i in 0..self.n {
            let ws = self.wg_state(y, i);
            let (e_d_dot, e_q_dot) =
                turbine::rotor_voltage_derivs(&self.sc.turbine, &self.sc.grid, &ws, cmds[i].v_dr, cmds[i].v_qr);
            let omega_dot =
                turbine::rotor_speed_deriv(&self.sc.turbine, &self.sc.grid, cmds[i].t_m, cmds[i].t_e);
            dy[1 + 3 * i] = e_d_dot;
            dy[2 + 3 * i] = e_q_dot;
            dy[3 + 3 * i] = omega_dot;
            if self.sc.wind.turbulence {
                let off = self.wind_offset() + 2 * i;
                let wstate = WindState { v_s: y[off], v_s_dot: y[off + 1] };
                let (v_s_dot, v_s_ddot) =
                    wind::turbulence_derivs(&self.wind_params, &wstate, ctx.noise[i]);
                dy[off] = v_s_dot;
                dy[off + 1] = v_s_ddot;
            }
        }
        dy
    }

    fn record(&self, trace: &mut SimTrace, t: f64, y: &[f64], ctx: &StepContext) {
        let gens = self.algebra(y);
        let cmds = self.commands(y, ctx, &gens);
        trace.t.push(t);
        trace.p_d.push(ctx.p_d);
        trace.sum_p_m.push(ctx.sum_pm);
        trace.xi_h.push(y[XI]);
        for i in 0..self.n {
            let ws = self.wg_state(y, i);
            trace.z[i].push(gens[i].z);
            trace.omega_r[i].push(ws.omega_r);
            trace.t_e[i].push(cmds[i].t_e);
            trace.t_m[i].push(cmds[i].t_m);
            trace.v_dr[i].push(cmds[i].v_dr);
            trace.v_e[i].push(cmds[i].v_e);
            trace.v_w[i].push(gens[i].v_w);
            trace.c_p[i].push(gens[i].c_p_raw);
            trace.t_e_star[i].push(cmds[i].t_e_star);
            trace.t_e_star_rate[i].push(cmds[i].t_e_star_rate);
        }
    }

    fn first_non_finite(&self, y: &[f64]) -> Option<usize> {
        y.iter().position(|v| !v.is_finite())
    }

    fn run(&self) -> Result<SimRun, Error> {
        let sc = self.sc;
        let steps = sc.steps();
        let mut y = self.init_state();
        let mut trace = SimTrace::new(self.n);
        let mut rngs: Vec<SplitMix64> = (0..self.n)
            .map(|i| SplitMix64::for_generator(sc.wind.seed, i))
            .collect();
        let mut prev_t_m: Option<Vec<f64>> = None;
        let mut delay: Option<DelayLine<Vec<(f64, f64)>>> = if sc.hop_delay_steps > 0 {
            Some(DelayLine::new(sc.hop_delay_steps))
        } else {
            None
        };
        let mut aborted = None;

        for k in 0..=steps {
            let t = k as f64 * sc.dt;
            let gens = self.algebra(&y);
            if let Some(line) = delay.as_mut() {
                line.push(gens.iter().map(|g| (g.z, g.z_rate)).collect());
            }
            let powers: Vec<f64> = gens.iter().map(|g| g.p_m).collect();
            let noise: Vec<f64> = if sc.wind.turbulence {
                rngs.iter_mut().map(|r| r.next_normal()).collect()
            } else {
                Vec::new()
            };
            let t_m_now: Vec<f64> = gens.iter().map(|g| g.t_m).collect();
            let t_m_rate_fd = match sc.torque_rate_mode {
                TorqueRateMode::Analytic => None,
                TorqueRateMode::FiniteDifference => Some(match &prev_t_m {
                    Some(prev) => t_m_now
                        .iter()
                        .zip(prev)
                        .map(|(now, was)| (now - was) / sc.dt)
                        .collect(),
                    None => vec![0.0; self.n],
                }),
            };
            prev_t_m = Some(t_m_now);
            let ctx = StepContext {
                p_d: sc.p_d_at(t),
                sum_pm: self.aggregate(&powers),
                noise,
                t_m_rate_fd,
                delayed: delay.as_ref().and_then(|l| l.delayed().cloned()),
            };

            if k % sc.decimate == 0 || k == steps {
                self.record(&mut trace, t, &y, &ctx);
            }
            if k == steps {
                break;
            }

            let mut f = |_t: f64, state: &[f64]| self.derivs(state, &ctx);
            let y_next = rk4_step(&mut f, t, &y, sc.dt);
            if let Some(idx) = self.first_non_finite(&y_next) {
                let (generator, quantity) = self.classify(idx);
                aborted = Some(AbortInfo { t: t + sc.dt, generator, quantity });
                break;
            }
            y = y_next;
        }

        Ok(SimRun { trace, v_qr_held: self.v_qr_held.clone(), aborted })
    }
}
