//! Scenario configuration: a TOML schema, defaults, and validation that
//! turn a config file into a ready-to-run [`Scenario`].
//!
//! ## Schema
//!
//! ```text
//! [scenario]   generators, t_end [s], dt [s], decimate
//! [schedule]   points = [[t, p_d], ...]      # farm reference steps, t in s,
//!                                            # p_d in p.u. on the farm base
//! [init]       utilization, torque_offset, e_d_prime        (all optional)
//! [farm]       base_va                                      (optional)
//! [wind]       mean [m/s], turbulence, seed, length_scale [m], intensity,
//!              p1 [s], p2 [s], k                 (last three override the
//!                                                 derived filter constants)
//! [turbine]    rotor_radius [m], air_density [kg/m³], base_power [VA],
//!              inertia [s], x_s, x_s_prime, x_r, x_m [p.u.],
//!              t0_prime [s], gearbox_ratio, poles
//! [grid]       v_s [p.u.], frequency_hz
//! [protocol]   k_alpha (scalar or per-generator array) [1/s],
//!              aggregation ("relay" | "average"), average_rounds,
//!              average_step, hop_delay_steps
//! [controller] k_beta (scalar or array) [1/s], rate_gain, eps_singular,
//!              vdr_limit [p.u.], vqr_policy ("hold" | "zero"),
//!              torque_rate_mode ("analytic" | "finite-difference")
//! [sweep]      k_alpha_min, k_alpha_max [1/s], t_end [s], dt [s],
//!              relative_width, coarse_points                (all optional)
//! ```
//!
//! When `[farm] base_va` is omitted it is derived so that the initial
//! utilization is an exact equilibrium of the dispatch layer:
//! S_farm = Σᵢ P̄_W,i · z₀ / p_d(0). Unknown keys anywhere are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::controller::VqrPolicy;
use crate::error::Error;
use crate::protocol::{self, Gains};
use crate::turbine::{self, GridBoundary, WgParams};
use crate::wind::{self, WindParams};

/// How the farm power total reaches the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Partial sums relayed hop by hop along the chain (exact).
    Relay,
    /// Iterative average consensus (approximate, round-limited).
    Average,
}

/// How the controller obtains the mechanical-torque rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TorqueRateMode {
    /// Closed-form rate, exact under frozen wind.
    Analytic,
    /// Backward difference of the measured torque across macro-steps;
    /// use when turbulence makes the frozen-wind form inexact.
    FiniteDifference,
}

/// Wind-field settings for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct WindSettings {
    /// Mean wind speed v_m [m/s].
    pub mean: f64,
    /// Whether the stochastic component is active.
    pub turbulence: bool,
    /// Base seed; generator i draws from stream `seed XOR i`.
    pub seed: u64,
    /// Turbulence length scale [m] for the derived filter constants.
    pub length_scale: f64,
    /// Turbulence intensity (standard deviation / mean).
    pub intensity: f64,
    /// Optional explicit filter constants overriding the derived ones.
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub k: Option<f64>,
}

impl WindSettings {
    /// Filter constants for macro-step `dt`, honoring explicit overrides.
    pub fn filter_params(&self, dt: f64) -> WindParams {
        let mut p = wind::turbulence_params(self.mean, self.length_scale, self.intensity, dt);
        if let Some(p1) = self.p1 {
            p.p1 = p1;
        }
        if let Some(p2) = self.p2 {
            p.p2 = p2;
        }
        if let Some(k) = self.k {
            p.k = k;
        }
        p
    }
}

/// Stability-boundary sweep settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// Lower end of the consensus-gain scan [1/s].
    pub k_alpha_min: f64,
    /// Upper end of the consensus-gain scan [1/s].
    pub k_alpha_max: f64,
    /// Time budget per trial run [s].
    pub t_end: f64,
    /// Trial integration step [s].
    pub dt: f64,
    /// Bisection stops when (hi − lo)/hi falls below this.
    pub relative_width: f64,
    /// Number of log-spaced points in the initial coarse scan.
    pub coarse_points: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            k_alpha_min: 0.2,
            k_alpha_max: 5.0,
            t_end: 30.0,
            dt: 1e-3,
            relative_width: 0.05,
            coarse_points: 8,
        }
    }
}

/// A fully validated simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Number of generators.
    pub n: usize,
    /// Simulated duration [s].
    pub t_end: f64,
    /// Macro integration step [s].
    pub dt: f64,
    /// Record every `decimate`-th macro-step (plus the initial sample).
    pub decimate: usize,
    /// Farm reference schedule: (start time [s], p_d [p.u.]) pairs.
    pub schedule: Vec<(f64, f64)>,
    /// Initial utilization z₀ shared by all generators.
    pub init_utilization: f64,
    /// Relative initial torque mismatch: T_e(0) = T_m(0) · (1 + offset).
    pub init_torque_offset: f64,
    /// Initial d-axis transient voltage [p.u.].
    pub init_e_d_prime: f64,
    /// Farm power base S_farm [VA].
    pub farm_base: f64,
    /// Wind-field settings.
    pub wind: WindSettings,
    /// Machine parameters (identical across the farm).
    pub turbine: WgParams,
    /// Grid boundary.
    pub grid: GridBoundary,
    /// Per-generator consensus / torque-loop gains.
    pub gains: Gains,
    /// Gain on the torque-reference rate feed-forward [1/s].
    pub rate_gain: Option<f64>,
    /// Torque-authority fallback threshold on |∂C_p/∂λ|.
    pub eps_singular: f64,
    /// d-axis voltage clamp [p.u.].
    pub vdr_limit: f64,
    /// Start-up q-axis voltage policy.
    pub vqr_policy: VqrPolicy,
    /// Mechanical-torque-rate source.
    pub torque_rate_mode: TorqueRateMode,
    /// Power aggregation scheme.
    pub aggregation: Aggregation,
    /// Rounds per aggregation when `aggregation = "average"`.
    pub average_rounds: usize,
    /// Diffusion step when `aggregation = "average"`.
    pub average_step: f64,
    /// Neighbor-signal delay in whole macro-steps (0 = fresh values).
    pub hop_delay_steps: usize,
    /// Stability-sweep settings.
    pub sweep: SweepSettings,
}

impl Scenario {
    /// Parses and validates a TOML configuration.
    pub fn from_toml_str(text: &str) -> Result<Scenario, Error> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("TOML: {e}")))?;
        let scenario = raw.build()?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Loads and validates a TOML configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, Error> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Scenario::from_toml_str(&text)
    }

    /// The reference p_d active at time `t` (step schedule; half-step
    /// tolerance so grid-aligned switch times are robust to rounding).
    pub fn p_d_at(&self, t: f64) -> f64 {
        let tol = 0.5 * self.dt;
        self.schedule
            .iter()
            .take_while(|(start, _)| *start <= t + tol)
            .last()
            .map(|(_, p)| *p)
            .expect("schedule is validated non-empty starting at t = 0")
    }

    /// Available (maximum) mechanical power per generator at the mean wind
    /// speed, as a fraction of the farm base. The farm total obeys
    /// Σ P_m = Σ alpha_i z_i.
    pub fn alpha(&self) -> Vec<f64> {
        let p_avail = turbine::max_mechanical_power(
            self.turbine.air_density,
            self.turbine.rotor_radius,
            self.wind.mean,
        );
        vec![p_avail / self.farm_base; self.n]
    }

    /// Σ alpha_i, the farm's available-power fraction.
    pub fn sum_alpha(&self) -> f64 {
        protocol::farm_power_sum(&self.alpha())
    }

    /// Number of macro integration steps.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Checks every cross-field constraint. Called by the loaders; call
    /// again after mutating a scenario programmatically.
    pub fn validate(&self) -> Result<(), Error> {
        if self.n == 0 {
            return Err(Error::config("scenario.generators must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("scenario.dt must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.dt) {
            return Err(Error::config(format!(
                "scenario.t_end must be at least one step ({}), got {}",
                self.dt, self.t_end
            )));
        }
        if self.decimate == 0 {
            return Err(Error::config("scenario.decimate must be >= 1"));
        }
        self.turbine.validate()?;
        self.grid.validate()?;
        self.gains.validate(self.n)?;
        let max_k_beta = self.gains.k_beta.iter().cloned().fold(0.0_f64, f64::max);
        if self.dt * max_k_beta > 0.1 {
            return Err(Error::config(format!(
                "scenario.dt = {} is too coarse for k_beta = {max_k_beta}; require dt·k_beta <= 0.1",
                self.dt
            )));
        }
        if let Some(g) = self.rate_gain {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::config(format!("controller.rate_gain must be finite and > 0, got {g}")));
            }
        }
        for (name, v) in [("eps_singular", self.eps_singular), ("vdr_limit", self.vdr_limit)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("controller.{name} must be finite and > 0, got {v}")));
            }
        }

        if self.schedule.is_empty() {
            return Err(Error::config("schedule.points must not be empty"));
        }
        if self.schedule[0].0 != 0.0 {
            return Err(Error::config(format!(
                "schedule.points must start at t = 0, got t = {}",
                self.schedule[0].0
            )));
        }
        for w in self.schedule.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::config(format!(
                    "schedule.points times must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some((t, _)) = self.schedule.iter().find(|(t, _)| *t >= self.t_end) {
            return Err(Error::config(format!(
                "schedule.points time {t} is not before t_end = {}",
                self.t_end
            )));
        }

        if !(self.init_utilization > 0.0 && self.init_utilization < 1.0) {
            return Err(Error::config(format!(
                "init.utilization must lie in (0, 1), got {}",
                self.init_utilization
            )));
        }
        if !(self.init_torque_offset.is_finite() && self.init_torque_offset.abs() < 0.1) {
            return Err(Error::config(format!(
                "init.torque_offset must be small (|offset| < 0.1), got {}",
                self.init_torque_offset
            )));
        }
        if !self.init_e_d_prime.is_finite() {
            return Err(Error::config("init.e_d_prime must be finite"));
        }
        if !(self.farm_base.is_finite() && self.farm_base > 0.0) {
            return Err(Error::config(format!("farm.base_va must be finite and > 0, got {}", self.farm_base)));
        }

        if !(self.wind.mean.is_finite() && self.wind.mean > 0.0) {
            return Err(Error::config(format!("wind.mean must be finite and > 0, got {}", self.wind.mean)));
        }
        if !(self.wind.length_scale.is_finite() && self.wind.length_scale > 0.0) {
            return Err(Error::config(format!(
                "wind.length_scale must be finite and > 0, got {}",
                self.wind.length_scale
            )));
        }
        if !(self.wind.intensity.is_finite() && self.wind.intensity >= 0.0) {
            return Err(Error::config(format!(
                "wind.intensity must be finite and >= 0, got {}",
                self.wind.intensity
            )));
        }
        self.wind.filter_params(self.dt).validate()?;

        // Every scheduled reference must be reachable with utilization < 1.
        let sum_alpha = self.sum_alpha();
        for (t, p_d) in &self.schedule {
            if !(p_d.is_finite() && *p_d > 0.0) {
                return Err(Error::config(format!("schedule p_d at t = {t} must be finite and > 0, got {p_d}")));
            }
            let z_star = p_d / sum_alpha;
            if z_star >= 1.0 {
                return Err(Error::config(format!(
                    "schedule p_d = {p_d} at t = {t} needs utilization {z_star:.3} >= 1 \
                     (farm can deliver at most {sum_alpha:.4} p.u. at the mean wind)"
                )));
            }
        }

        match self.aggregation {
            Aggregation::Relay => {}
            Aggregation::Average => {
                if self.average_rounds == 0 {
                    return Err(Error::config("protocol.average_rounds must be >= 1"));
                }
                if self.n >= 2 {
                    let bound = 2.0 / protocol::chain_laplacian_lambda_max(self.n);
                    if !(self.average_step > 0.0 && self.average_step < bound) {
                        return Err(Error::config(format!(
                            "protocol.average_step must lie in (0, {bound:.6}) for n = {}, got {}",
                            self.n, self.average_step
                        )));
                    }
                }
            }
        }

        let s = &self.sweep;
        if !(s.k_alpha_min > 0.0 && s.k_alpha_max > s.k_alpha_min) {
            return Err(Error::config(format!(
                "sweep range must satisfy 0 < k_alpha_min < k_alpha_max, got [{}, {}]",
                s.k_alpha_min, s.k_alpha_max
            )));
        }
        if !(s.dt > 0.0 && s.t_end >= s.dt) {
            return Err(Error::config(format!(
                "sweep timing must satisfy 0 < dt <= t_end, got dt = {}, t_end = {}",
                s.dt, s.t_end
            )));
        }
        if !(s.relative_width > 0.0 && s.relative_width < 1.0) {
            return Err(Error::config(format!(
                "sweep.relative_width must lie in (0, 1), got {}",
                s.relative_width
            )));
        }
        if s.coarse_points < 2 {
            return Err(Error::config("sweep.coarse_points must be >= 2"));
        }
        Ok(())
    }
}

/// Scalar applied to every generator, or one value per generator.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PerGenerator {
    Scalar(f64),
    Each(Vec<f64>),
}

impl PerGenerator {
    fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>, Error> {
        match self {
            PerGenerator::Scalar(v) => Ok(vec![*v; n]),
            PerGenerator::Each(v) => {
                if v.len() == n {
                    Ok(v.clone())
                } else {
                    Err(Error::config(format!(
                        "{what} lists {} values for {n} generators",
                        v.len()
                    )))
                }
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    schedule: RawSchedule,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    farm: RawFarm,
    wind: RawWind,
    turbine: WgParams,
    #[serde(default)]
    grid: RawGrid,
    protocol: RawProtocol,
    controller: RawController,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    generators: usize,
    t_end: f64,
    dt: f64,
    #[serde(default = "default_decimate")]
    decimate: usize,
}

fn default_decimate() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    points: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    #[serde(default = "default_utilization")]
    utilization: f64,
    #[serde(default)]
    torque_offset: f64,
    #[serde(default)]
    e_d_prime: f64,
}

fn default_utilization() -> f64 {
    0.73
}

impl Default for RawInit {
    fn default() -> Self {
        RawInit { utilization: default_utilization(), torque_offset: 0.0, e_d_prime: 0.0 }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFarm {
    base_va: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWind {
    mean: f64,
    #[serde(default)]
    turbulence: bool,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_length_scale")]
    length_scale: f64,
    #[serde(default = "default_intensity")]
    intensity: f64,
    p1: Option<f64>,
    p2: Option<f64>,
    k: Option<f64>,
}

fn default_length_scale() -> f64 {
    200.0
}

fn default_intensity() -> f64 {
    0.05
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default = "default_v_s")]
    v_s: f64,
    #[serde(default = "default_frequency")]
    frequency_hz: f64,
}

fn default_v_s() -> f64 {
    1.0
}

fn default_frequency() -> f64 {
    60.0
}

impl Default for RawGrid {
    fn default() -> Self {
        RawGrid { v_s: default_v_s(), frequency_hz: default_frequency() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    k_alpha: PerGenerator,
    #[serde(default = "default_aggregation")]
    aggregation: Aggregation,
    #[serde(default = "default_average_rounds")]
    average_rounds: usize,
    #[serde(default = "default_average_step")]
    average_step: f64,
    #[serde(default)]
    hop_delay_steps: usize,
}

fn default_aggregation() -> Aggregation {
    Aggregation::Relay
}

fn default_average_rounds() -> usize {
    500
}

fn default_average_step() -> f64 {
    0.45
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    k_beta: PerGenerator,
    rate_gain: Option<f64>,
    #[serde(default = "default_eps_singular")]
    eps_singular: f64,
    #[serde(default = "default_vdr_limit")]
    vdr_limit: f64,
    #[serde(default = "default_vqr_policy")]
    vqr_policy: VqrPolicy,
    #[serde(default = "default_torque_rate_mode")]
    torque_rate_mode: TorqueRateMode,
}

fn default_eps_singular() -> f64 {
    1e-8
}

fn default_vdr_limit() -> f64 {
    1.0
}

fn default_vqr_policy() -> VqrPolicy {
    VqrPolicy::Hold
}

fn default_torque_rate_mode() -> TorqueRateMode {
    TorqueRateMode::Analytic
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    k_alpha_min: Option<f64>,
    k_alpha_max: Option<f64>,
    t_end: Option<f64>,
    dt: Option<f64>,
    relative_width: Option<f64>,
    coarse_points: Option<usize>,
}

impl RawConfig {
    fn build(self) -> Result<Scenario, Error> {
        let n = self.scenario.generators;
        let k_alpha = self.protocol.k_alpha.resolve(n, "protocol.k_alpha")?;
        let k_beta = self.controller.k_beta.resolve(n, "controller.k_beta")?;

        let schedule = self.schedule.points.clone();
        let p_d0 = schedule
            .first()
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::config("schedule.points must not be empty"))?;

        // Derive the farm base so z₀ is the exact initial equilibrium,
        // unless an explicit base is given.
        let farm_base = match self.farm.base_va {
            Some(b) => b,
            None => {
                if !(p_d0 > 0.0) {
                    return Err(Error::config("schedule p_d(0) must be > 0 to derive farm.base_va"));
                }
                let p_avail = turbine::max_mechanical_power(
                    self.turbine.air_density,
                    self.turbine.rotor_radius,
                    self.wind.mean,
                );
                n as f64 * p_avail * self.init.utilization / p_d0
            }
        };

        let defaults = SweepSettings::default();
        let sweep = SweepSettings {
            k_alpha_min: self.sweep.k_alpha_min.unwrap_or(defaults.k_alpha_min),
            k_alpha_max: self.sweep.k_alpha_max.unwrap_or(defaults.k_alpha_max),
            t_end: self.sweep.t_end.unwrap_or(defaults.t_end),
            dt: self.sweep.dt.unwrap_or(defaults.dt),
            relative_width: self.sweep.relative_width.unwrap_or(defaults.relative_width),
            coarse_points: self.sweep.coarse_points.unwrap_or(defaults.coarse_points),
        };

        Ok(Scenario {
            n,
            t_end: self.scenario.t_end,
            dt: self.scenario.dt,
            decimate: self.scenario.decimate,
            schedule,
            init_utilization: self.init.utilization,
            init_torque_offset: self.init.torque_offset,
            init_e_d_prime: self.init.e_d_prime,
            farm_base,
            wind: WindSettings {
                mean: self.wind.mean,
                turbulence: self.wind.turbulence,
                seed: self.wind.seed,
                length_scale: self.wind.length_scale,
                intensity: self.wind.intensity,
                p1: self.wind.p1,
                p2: self.wind.p2,
                k: self.wind.k,
            },
            turbine: self.turbine,
            grid: GridBoundary {
                v_s: self.grid.v_s,
                omega_s: 2.0 * std::f64::consts::PI * self.grid.frequency_hz,
            },
            gains: Gains { k_alpha, k_beta },
            rate_gain: self.controller.rate_gain,
            eps_singular: self.controller.eps_singular,
            vdr_limit: self.controller.vdr_limit,
            vqr_policy: self.controller.vqr_policy,
            torque_rate_mode: self.controller.torque_rate_mode,
            aggregation: self.protocol.aggregation,
            average_rounds: self.protocol.average_rounds,
            average_step: self.protocol.average_step,
            hop_delay_steps: self.protocol.hop_delay_steps,
            sweep,
        })
    }
}

/// Reference configuration shared by tests across the crate: ten identical
/// machines, calm 9 m/s wind, a 0.38 → 0.42 p.u. reference step at t = 0.2 s.
#[cfg(test)]
pub(crate) const BASE_TOML: &str = r#"
[scenario]
generators = 10
t_end = 12.0
dt = 1e-4
decimate = 10

[schedule]
points = [[0.0, 0.38], [0.2, 0.42]]

[init]
utilization = 0.73
torque_offset = 1e-4

[wind]
mean = 9.0
turbulence = false
seed = 42

[turbine]
rotor_radius = 45.0
air_density = 1.225
base_power = 1.1e8
inertia = 3.0
x_s = 3.0
x_s_prime = 0.2
x_r = 3.0
x_m = 2.9
t0_prime = 0.55
gearbox_ratio = 5.7
poles = 4.0

[grid]
v_s = 1.0
frequency_hz = 60.0

[protocol]
k_alpha = 40.0

[controller]
k_beta = 60.0
"#;
