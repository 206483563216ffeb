//! Dispatch-layer analysis: the linear consensus model, its time-scale
//! separation, a stability-boundary sweep, and summary metrics for
//! recorded traces.
//!
//! ## Linear layer
//!
//! With utilizations z and available-power fractions α_i (generator i's
//! maximum power over the farm base at the mean wind), the dispatch layer is
//!
//! ```text
//! ξ̇_h = p_d − Σ α_i z_i
//! ż   = k_α (A_f z + e₁ ξ_h)
//! ```
//!
//! where A_f is the chain matrix with −1 on the diagonal and +1 on the
//! first subdiagonal. A_f is triangular, so its spectrum is {−1}ⁿ: the
//! consensus layer alone is uniformly fast. The ratio ε = ᾱ/k_α compares
//! the farm integrator's rate to the consensus rate; for small ε the
//! integrator follows the scalar *slow model*
//!
//! ```text
//! ξ̇_h = p_d − (Σα) ξ_h   ⇒   ξ_h(t) = ξ̄ + (ξ_h(0) − ξ̄) e^{−Σα·t},
//! ξ̄ = p_d / Σα
//! ```
//!
//! The interconnected system is *conditionally* stable: it can lose
//! stability when the consensus gain is too small relative to the α's.
//! [`epsilon_star_sweep`] locates the largest workable ε in a given gain
//! range empirically — each candidate gain is simulated from a cold start
//! and classified by its end-of-run behavior, and the verdict boundary is
//! bisected.

use crate::config::SweepSettings;
use crate::error::Error;
use crate::protocol::{self, ConsensusState, Gains};
use crate::sim::rk4_step;
use crate::trace::SimTrace;
use crate::turbine::{self, WgParams};

/// Available-power fraction α_i per generator: each machine's maximum
/// mechanical power at wind speed `v_m`, over the farm base.
pub fn alpha_coefficients(params: &[WgParams], v_m: f64, farm_base: f64) -> Vec<f64> {
    params
        .iter()
        .map(|p| turbine::max_mechanical_power(p.air_density, p.rotor_radius, v_m) / farm_base)
        .collect()
}

/// Mean available-power fraction ᾱ.
pub fn alpha_bar(alpha: &[f64]) -> f64 {
    protocol::farm_power_sum(alpha) / alpha.len() as f64
}

/// Time-scale ratio ε = ᾱ / k_α between the farm integrator and the
/// consensus layer.
pub fn epsilon(alpha: &[f64], k_alpha: f64) -> f64 {
    alpha_bar(alpha) / k_alpha
}

/// The common equilibrium utilization ξ̄ = z* = p_d / Σα.
pub fn equilibrium_utilization(alpha: &[f64], p_d: f64) -> f64 {
    p_d / protocol::farm_power_sum(alpha)
}

/// Chain consensus matrix A_f (row-major): −1 on the diagonal, +1 on the
/// first subdiagonal.
pub fn fast_matrix(n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = -1.0;
        if i > 0 {
            a[i * n + i - 1] = 1.0;
        }
    }
    a
}

/// Spectrum of [`fast_matrix`]: n copies of −1 (it is lower triangular).
pub fn fast_eigenvalues(n: usize) -> Vec<f64> {
    vec![-1.0; n]
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(matrix: &[f64], n: usize) -> f64 {
    assert_eq!(matrix.len(), n * n, "matrix must be n×n row-major");
    let mut a = matrix.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .abs()
                    .partial_cmp(&a[s * n + col].abs())
                    .expect("non-NaN matrix")
            })
            .expect("non-empty column");
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
        }
    }
    det
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn identity(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        e[i * n + i] = 1.0;
    }
    e
}

fn inf_norm(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential e^A by scaling-and-squaring with a truncated series.
///
/// The argument is scaled below norm ½, the series is summed to machine
/// precision, and the result is squared back up; accuracy is far inside
/// 1e-12 for the small, modestly scaled matrices used here.
pub fn matrix_exponential(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "matrix must be n×n row-major");
    let norm = inf_norm(a, n);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scale = 0.5f64.powi(squarings);
    let b: Vec<f64> = a.iter().map(|v| v * scale).collect();

    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=60u32 {
        term = mat_mul(&term, &b, n);
        let inv_k = 1.0 / k as f64;
        for v in term.iter_mut() {
            *v *= inv_k;
        }
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
        let term_max = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let result_max = result.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if term_max <= 1e-18 * result_max.max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result, n);
    }
    result
}

/// Closed-form consensus trajectory under a frozen integrator value:
/// z(t) = ξ̄·1 + e^{k_α·t·A_f} (z₀ − ξ̄·1).
pub fn fast_subsystem_solution(k_alpha: f64, xi_bar: f64, z0: &[f64], t: f64) -> Vec<f64> {
    let n = z0.len();
    let a: Vec<f64> = fast_matrix(n).iter().map(|v| v * k_alpha * t).collect();
    let e = matrix_exponential(&a, n);
    (0..n)
        .map(|i| {
            let mut zi = xi_bar;
            for j in 0..n {
                zi += e[i * n + j] * (z0[j] - xi_bar);
            }
            zi
        })
        .collect()
}

/// Slow-model derivative ξ̇_h = p_d − (Σα)·ξ_h.
pub fn slow_model_deriv(sum_alpha: f64, p_d: f64, xi_h: f64) -> f64 {
    p_d - sum_alpha * xi_h
}

/// Closed-form slow-model solution from ξ_h(0) = `xi0`.
pub fn slow_model_solution(sum_alpha: f64, p_d: f64, xi0: f64, t: f64) -> f64 {
    let xi_bar = p_d / sum_alpha;
    xi_bar + (xi0 - xi_bar) * (-sum_alpha * t).exp()
}

/// Setup for a linear dispatch-layer simulation.
#[derive(Debug, Clone)]
pub struct LinearRunConfig {
    /// Available-power fractions α_i.
    pub alpha: Vec<f64>,
    /// Homogeneous consensus gain k_α [1/s].
    pub k_alpha: f64,
    /// Farm reference p_d [p.u.].
    pub p_d: f64,
    /// Initial integrator value.
    pub xi0: f64,
    /// Initial utilizations (length must match `alpha`).
    pub z0: Vec<f64>,
    /// Integration step [s].
    pub dt: f64,
    /// Horizon [s].
    pub t_end: f64,
    /// Record every this many steps (1 = every step).
    pub record_every: usize,
    /// Hold ξ_h at `xi0` (isolates the consensus subsystem).
    pub freeze_integrator: bool,
}

/// Recorded linear dispatch-layer run; `z` is laid out `[generator][sample]`.
#[derive(Debug, Clone)]
pub struct LinearRun {
    pub t: Vec<f64>,
    pub xi_h: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

/// Integrates the linear dispatch layer with RK4.
pub fn simulate_protocol(cfg: &LinearRunConfig) -> LinearRun {
    let n = cfg.alpha.len();
    assert_eq!(cfg.z0.len(), n, "z0 and alpha must have equal length");
    assert!(cfg.record_every >= 1, "record_every must be >= 1");
    let gains = Gains::homogeneous(n, cfg.k_alpha, 1.0);
    let steps = (cfg.t_end / cfg.dt).round() as usize;

    let mut f = |_t: f64, y: &[f64]| {
        let state = ConsensusState { xi_h: y[0], z: y[1..].to_vec() };
        let powers: Vec<f64> = cfg.alpha.iter().zip(&state.z).map(|(a, z)| a * z).collect();
        let (xi_dot, z_dot) = protocol::protocol_derivs(&gains, &state, cfg.p_d, &powers);
        let mut dy = Vec::with_capacity(1 + n);
        dy.push(if cfg.freeze_integrator { 0.0 } else { xi_dot });
        dy.extend(z_dot);
        dy
    };

    let mut y = Vec::with_capacity(1 + n);
    y.push(cfg.xi0);
    y.extend_from_slice(&cfg.z0);
    let mut run = LinearRun { t: Vec::new(), xi_h: Vec::new(), z: vec![Vec::new(); n] };
    let record = |t: f64, y: &[f64], run: &mut LinearRun| {
        run.t.push(t);
        run.xi_h.push(y[0]);
        for i in 0..n {
            run.z[i].push(y[1 + i]);
        }
    };
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        if k % cfg.record_every == 0 {
            record(t, &y, &mut run);
        }
        y = rk4_step(&mut f, t, &y, cfg.dt);
    }
    record(steps as f64 * cfg.dt, &y, &mut run);
    run
}

/// Outcome of one budgeted stability trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Utilizations agreed and the reference was tracked by the end.
    Converged,
    /// The state blew up (non-finite or beyond ±10³).
    Diverged,
    /// Neither within the time budget.
    Inconclusive,
}

impl Verdict {
    /// Stable lowercase name for reports.
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Classifies a finished trial run.
///
/// Converged: over the last tenth of the run, the utilization spread stays
/// below 1e-3 and the tracking error below 0.5%. Diverged: any sample
/// non-finite or beyond ±10³.
pub fn classify_run(run: &LinearRun, alpha: &[f64], p_d: f64) -> Verdict {
    let m = run.t.len();
    let wild = |v: f64| !v.is_finite() || v.abs() > 1e3;
    if run.xi_h.iter().any(|&v| wild(v)) || run.z.iter().any(|zi| zi.iter().any(|&v| wild(v))) {
        return Verdict::Diverged;
    }
    let window = (m / 10).max(2).min(m);
    for k in m - window..m {
        let mut z_min = f64::INFINITY;
        let mut z_max = f64::NEG_INFINITY;
        for zi in &run.z {
            z_min = z_min.min(zi[k]);
            z_max = z_max.max(zi[k]);
        }
        let powers: Vec<f64> = alpha.iter().enumerate().map(|(i, a)| a * run.z[i][k]).collect();
        let tracking = (protocol::farm_power_sum(&powers) - p_d).abs() / p_d;
        if z_max - z_min > 1e-3 || tracking > 5e-3 {
            return Verdict::Inconclusive;
        }
    }
    Verdict::Converged
}

/// One evaluated gain in a stability sweep.
#[derive(Debug, Clone, Copy)]
pub struct ScanPoint {
    /// Consensus gain k_α [1/s].
    pub k_alpha: f64,
    /// Trial outcome.
    pub verdict: Verdict,
}

/// Result of [`epsilon_star_sweep`].
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Mean available-power fraction ᾱ used to express ε.
    pub alpha_bar: f64,
    /// Every evaluated gain, sorted by k_α.
    pub scan: Vec<ScanPoint>,
    /// (largest non-converged gain, smallest converged gain) around the
    /// boundary, bisected to the requested relative width.
    pub bracket: Option<(f64, f64)>,
    /// ε at the bracket: (ᾱ/hi, ᾱ/lo) — the workable-ε threshold interval.
    pub epsilon_star: Option<(f64, f64)>,
    /// Every trial in the scanned range converged.
    pub all_converged: bool,
    /// No trial in the scanned range converged.
    pub none_converged: bool,
    /// The coarse scan showed exactly one non-converged → converged
    /// transition (the bracket is trustworthy).
    pub single_crossing: bool,
}

impl StabilityReport {
    /// key=value summary (one line each).
    pub fn summary_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "alpha_bar={:.16e}", self.alpha_bar);
        let _ = writeln!(out, "trials={}", self.scan.len());
        let _ = writeln!(out, "all_converged={}", self.all_converged);
        let _ = writeln!(out, "none_converged={}", self.none_converged);
        let _ = writeln!(out, "single_crossing={}", self.single_crossing);
        match self.bracket {
            Some((lo, hi)) => {
                let _ = writeln!(out, "k_alpha_unstable_below={lo:.16e}");
                let _ = writeln!(out, "k_alpha_stable_above={hi:.16e}");
            }
            None => {
                let _ = writeln!(out, "k_alpha_unstable_below=none");
                let _ = writeln!(out, "k_alpha_stable_above=none");
            }
        }
        match self.epsilon_star {
            Some((lo, hi)) => {
                let _ = writeln!(out, "epsilon_star_low={lo:.16e}");
                let _ = writeln!(out, "epsilon_star_high={hi:.16e}");
            }
            None => {
                let _ = writeln!(out, "epsilon_star_low=none");
                let _ = writeln!(out, "epsilon_star_high=none");
            }
        }
        out
    }

    /// CSV of every evaluated gain and its verdict.
    pub fn verdicts_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("k_alpha,epsilon,verdict\n");
        for p in &self.scan {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{}",
                p.k_alpha,
                self.alpha_bar / p.k_alpha,
                p.verdict.as_str()
            );
        }
        out
    }
}

/// Locates the stability boundary of the dispatch layer in a gain range.
///
/// Trials start from a cold state (ξ_h = 0, z = 0) and run for the budget
/// in `settings`; the coarse log-spaced scan is refined by bisecting the
/// last non-converged → converged transition until the bracket's relative
/// width drops below `settings.relative_width`.
pub fn epsilon_star_sweep(
    settings: &SweepSettings,
    alpha: &[f64],
    p_d: f64,
) -> Result<StabilityReport, Error> {
    let n = alpha.len();
    if n == 0 {
        return Err(Error::config("sweep needs at least one generator"));
    }
    let trial = |k_alpha: f64| -> Verdict {
        let run = simulate_protocol(&LinearRunConfig {
            alpha: alpha.to_vec(),
            k_alpha,
            p_d,
            xi0: 0.0,
            z0: vec![0.0; n],
            dt: settings.dt,
            t_end: settings.t_end,
            record_every: 1,
            freeze_integrator: false,
        });
        classify_run(&run, alpha, p_d)
    };

    let m = settings.coarse_points;
    let ratio = settings.k_alpha_max / settings.k_alpha_min;
    let mut scan: Vec<ScanPoint> = (0..m)
        .map(|j| {
            let k = settings.k_alpha_min * ratio.powf(j as f64 / (m - 1) as f64);
            ScanPoint { k_alpha: k, verdict: trial(k) }
        })
        .collect();

    let converged: Vec<bool> = scan.iter().map(|p| p.verdict == Verdict::Converged).collect();
    let all_converged = converged.iter().all(|&c| c);
    let none_converged = converged.iter().all(|&c| !c);
    let crossings: Vec<usize> = (1..m).filter(|&j| !converged[j - 1] && converged[j]).collect();
    let single_crossing = crossings.len() == 1;

    let mut bracket = None;
    if let Some(&j) = crossings.last() {
        let (mut lo, mut hi) = (scan[j - 1].k_alpha, scan[j].k_alpha);
        while (hi - lo) / hi > settings.relative_width {
            let mid = (lo * hi).sqrt();
            let verdict = trial(mid);
            scan.push(ScanPoint { k_alpha: mid, verdict });
            if verdict == Verdict::Converged {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        bracket = Some((lo, hi));
    }

    scan.sort_by(|a, b| a.k_alpha.partial_cmp(&b.k_alpha).expect("finite gains"));
    let a_bar = alpha_bar(alpha);
    Ok(StabilityReport {
        alpha_bar: a_bar,
        scan,
        bracket,
        epsilon_star: bracket.map(|(lo, hi)| (a_bar / hi, a_bar / lo)),
        all_converged,
        none_converged,
        single_crossing,
    })
}

/// Summary metrics distilled from a recorded trace.
#[derive(Debug, Clone)]
pub struct SummaryMetrics {
    /// Final sample time [s].
    pub t_end: f64,
    /// Reference at the end [p.u.].
    pub p_d_final: f64,
    /// Aggregated farm power at the end [p.u.].
    pub sum_p_m_final: f64,
    /// |sum_p_m − p_d| / p_d at the end.
    pub tracking_rel_final: f64,
    /// Smallest / largest / mean utilization at the end.
    pub utilization_min_final: f64,
    pub utilization_max_final: f64,
    pub utilization_mean_final: f64,
    /// max z − min z at the end.
    pub utilization_spread_final: f64,
    /// Per reference step: (step time [s], time to stay within 2% [s]).
    pub settling_2pct: Vec<(f64, Option<f64>)>,
    /// Per generator: fitted d(ln V_e)/dt over the initial decay [1/s].
    pub clf_decay_rates: Vec<Option<f64>>,
}

impl SummaryMetrics {
    /// key=value summary (one line each).
    pub fn to_key_values(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "t_end={:.16e}", self.t_end);
        let _ = writeln!(out, "p_d_final={:.16e}", self.p_d_final);
        let _ = writeln!(out, "sum_p_m_final={:.16e}", self.sum_p_m_final);
        let _ = writeln!(out, "tracking_rel_final={:.16e}", self.tracking_rel_final);
        let _ = writeln!(out, "utilization_min_final={:.16e}", self.utilization_min_final);
        let _ = writeln!(out, "utilization_max_final={:.16e}", self.utilization_max_final);
        let _ = writeln!(out, "utilization_mean_final={:.16e}", self.utilization_mean_final);
        let _ = writeln!(out, "utilization_spread_final={:.16e}", self.utilization_spread_final);
        for (i, (t_step, settle)) in self.settling_2pct.iter().enumerate() {
            let _ = writeln!(out, "step_{}_time={t_step:.16e}", i + 1);
            match settle {
                Some(d) => {
                    let _ = writeln!(out, "step_{}_settling_2pct={d:.16e}", i + 1);
                }
                None => {
                    let _ = writeln!(out, "step_{}_settling_2pct=unsettled", i + 1);
                }
            }
        }
        for (i, rate) in self.clf_decay_rates.iter().enumerate() {
            match rate {
                Some(r) => {
                    let _ = writeln!(out, "gen_{}_clf_decay_rate={r:.16e}", i + 1);
                }
                None => {
                    let _ = writeln!(out, "gen_{}_clf_decay_rate=none", i + 1);
                }
            }
        }
        out
    }
}

/// Least-squares slope of `ln(v)` against `t` over `[0, upto)`.
fn log_slope(t: &[f64], v: &[f64], upto: usize) -> Option<f64> {
    if upto < 5 {
        return None;
    }
    let m = upto as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..upto {
        let y = v[k].ln();
        st += t[k];
        sy += y;
        stt += t[k] * t[k];
        sty += t[k] * y;
    }
    let denom = m * stt - st * st;
    (denom != 0.0).then(|| (m * sty - st * sy) / denom)
}

/// Distills summary metrics from a recorded trace.
///
/// Settling is measured on the farm tracking error (2% band, must hold
/// until the next reference change). The certificate decay rate is fitted
/// on ln V_e over the initial stretch where V_e stays above e⁻⁶ of its
/// starting value; a healthy torque loop with gain k_β fits ≈ −2 k_β.
pub fn trace_metrics(trace: &SimTrace) -> Result<SummaryMetrics, Error> {
    let m = trace.len();
    if m == 0 {
        return Err(Error::TraceParse("trace has no samples".into()));
    }
    let last = m - 1;
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    let mut z_sum = 0.0;
    for zi in &trace.z {
        z_min = z_min.min(zi[last]);
        z_max = z_max.max(zi[last]);
        z_sum += zi[last];
    }

    // Reference-step boundaries: sample 0 plus every change in p_d.
    let mut boundaries = vec![0usize];
    for k in 1..m {
        if trace.p_d[k] != trace.p_d[k - 1] {
            boundaries.push(k);
        }
    }
    let mut settling = Vec::new();
    for (bi, &start) in boundaries.iter().enumerate() {
        let end = boundaries.get(bi + 1).copied().unwrap_or(m) - 1;
        let p_d = trace.p_d[start.min(end)];
        let within =
            |k: usize| (trace.sum_p_m[k] - trace.p_d[k]).abs() <= 0.02 * p_d;
        let mut last_violation = None;
        for k in (start..=end).rev() {
            if !within(k) {
                last_violation = Some(k);
                break;
            }
        }
        let settle = match last_violation {
            None => Some(0.0),
            Some(v) if v == end => None,
            Some(v) => Some(trace.t[v + 1] - trace.t[start]),
        };
        settling.push((trace.t[start], settle));
    }

    let clf_decay_rates = trace
        .v_e
        .iter()
        .map(|ve| {
            let v0 = ve[0];
            if !(v0 > 1e-300) {
                return None;
            }
            let floor = v0 * (-6.0f64).exp();
            let upto = ve.iter().position(|&v| !(v > floor)).unwrap_or(m);
            log_slope(&trace.t, ve, upto)
        })
        .collect();

    Ok(SummaryMetrics {
        t_end: trace.t[last],
        p_d_final: trace.p_d[last],
        sum_p_m_final: trace.sum_p_m[last],
        tracking_rel_final: (trace.sum_p_m[last] - trace.p_d[last]).abs() / trace.p_d[last],
        utilization_min_final: z_min,
        utilization_max_final: z_max,
        utilization_mean_final: z_sum / trace.n as f64,
        utilization_spread_final: z_max - z_min,
        settling_2pct: settling,
        clf_decay_rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_matrix_is_the_chain_bidiagonal() {
        let a = fast_matrix(3);
        assert_eq!(a, vec![-1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn determinant_on_a_known_matrix() {
        let a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        assert!((determinant(&a, 3) - 18.0).abs() < 1e-12);
        // A singular matrix.
        let s = [1.0, 2.0, 2.0, 4.0];
        assert_eq!(determinant(&s, 2), 0.0);
    }

    #[test]
    fn chain_matrix_spectrum_is_all_minus_one() {
        // Verify via the characteristic polynomial: det(A_f − μI) must equal
        // (−1 − μ)ⁿ at arbitrary probe points, which pins every eigenvalue
        // at −1 as fast_eigenvalues claims.
        let n = 6;
        for mu in [0.3f64, -2.2, 1.7] {
            let mut a = fast_matrix(n);
            for i in 0..n {
                a[i * n + i] -= mu;
            }
            let want = (-1.0 - mu).powi(n as i32);
            let got = determinant(&a, n);
            assert!(
                ((got - want) / want).abs() < 1e-12,
                "mu = {mu}: det = {got}, expected {want}"
            );
        }
        assert_eq!(fast_eigenvalues(4), vec![-1.0; 4]);
    }

    #[test]
    fn matrix_exponential_matches_closed_forms() {
        // Diagonal.
        let d = [0.3, 0.0, 0.0, -1.2];
        let e = matrix_exponential(&d, 2);
        assert!((e[0] - 0.3f64.exp()).abs() < 1e-14);
        assert!((e[3] - (-1.2f64).exp()).abs() < 1e-14);
        assert!(e[1].abs() < 1e-16 && e[2].abs() < 1e-16);
        // Nilpotent: e^[[0,1],[0,0]] = [[1,1],[0,1]].
        let nil = [0.0, 1.0, 0.0, 0.0];
        let e = matrix_exponential(&nil, 2);
        assert!((e[0] - 1.0).abs() < 1e-15 && (e[1] - 1.0).abs() < 1e-15);
        assert!(e[2].abs() < 1e-15 && (e[3] - 1.0).abs() < 1e-15);
        // Rotation by θ.
        let th: f64 = 0.9;
        let rot = [0.0, -th, th, 0.0];
        let e = matrix_exponential(&rot, 2);
        assert!((e[0] - th.cos()).abs() < 1e-13);
        assert!((e[1] + th.sin()).abs() < 1e-13);
        // Jordan block: e^{t·[[-1,1],[0,-1]]} = e^{−t}[[1,t],[0,1]].
        let t = 0.7;
        let jor = [-t, t, 0.0, -t];
        let e = matrix_exponential(&jor, 2);
        let s = (-t).exp();
        assert!((e[0] - s).abs() < 1e-13 && (e[1] - s * t).abs() < 1e-13);
        assert!(e[2].abs() < 1e-16 && (e[3] - s).abs() < 1e-13);
    }

    #[test]
    fn frozen_integrator_consensus_matches_the_matrix_exponential() {
        let k_alpha = 2.0;
        let xi_bar = 0.6;
        let z0 = [0.1, 0.5, 0.9];
        let run = simulate_protocol(&LinearRunConfig {
            alpha: vec![0.05; 3],
            k_alpha,
            p_d: 0.4,
            xi0: xi_bar,
            z0: z0.to_vec(),
            dt: 1e-3,
            t_end: 1.0,
            record_every: 100,
            freeze_integrator: true,
        });
        for (s, &t) in run.t.iter().enumerate() {
            let want = fast_subsystem_solution(k_alpha, xi_bar, &z0, t);
            for i in 0..3 {
                let err = (run.z[i][s] - want[i]).abs();
                assert!(err < 1e-9, "t = {t}, gen {i}: err = {err:e}");
            }
        }
        // Long-run limit of the closed form: every utilization approaches
        // the frozen integrator value.
        let far = fast_subsystem_solution(k_alpha, xi_bar, &z0, 10.0);
        for zi in far {
            assert!((zi - xi_bar).abs() < 1e-2);
        }
    }

    #[test]
    fn slow_model_solution_solves_its_equation() {
        let (sa, p_d, xi0) = (0.5205479452054794, 0.42, 0.73);
        // Derivative by central difference.
        let h = 1e-6;
        for t in [0.0, 0.5, 3.0] {
            let fd = (slow_model_solution(sa, p_d, xi0, t + h)
                - slow_model_solution(sa, p_d, xi0, t - h))
                / (2.0 * h);
            let xi = slow_model_solution(sa, p_d, xi0, t);
            let want = slow_model_deriv(sa, p_d, xi);
            assert!((fd - want).abs() < 1e-8, "t = {t}: {fd} vs {want}");
        }
        // Equilibrium value.
        let xi_bar = equilibrium_utilization(&[sa / 2.0, sa / 2.0], 0.42);
        assert!((xi_bar - 0.8068421052631579).abs() < 1e-14);
        let far = slow_model_solution(sa, 0.42, 0.73, 60.0);
        assert!((far - xi_bar).abs() < 1e-13);
    }

    #[test]
    fn dispatch_layer_holds_its_equilibrium() {
        let alpha = vec![0.052054794520547945; 10];
        let p_d = 0.42;
        let xi_bar = equilibrium_utilization(&alpha, p_d);
        let run = simulate_protocol(&LinearRunConfig {
            alpha: alpha.clone(),
            k_alpha: 40.0,
            p_d,
            xi0: xi_bar,
            z0: vec![xi_bar; 10],
            dt: 1e-4,
            t_end: 1.0,
            record_every: 1000,
            freeze_integrator: false,
        });
        let last = run.t.len() - 1;
        assert!((run.xi_h[last] - xi_bar).abs() < 1e-12);
        for zi in &run.z {
            assert!((zi[last] - xi_bar).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_expresses_the_rate_ratio() {
        let alpha = vec![0.052054794520547945; 10];
        let eps = epsilon(&alpha, 40.0);
        assert!((eps - 0.052054794520547945 / 40.0).abs() < 1e-18);
        assert!((alpha_bar(&alpha) - 0.052054794520547945).abs() < 1e-16);
    }

    #[test]
    fn sweep_reports_uniform_convergence_without_a_bracket() {
        // Two equal machines: the dispatch layer is stable at any gain in
        // the scanned range, so there is no boundary to bracket.
        let settings = SweepSettings {
            k_alpha_min: 0.5,
            k_alpha_max: 5.0,
            t_end: 120.0,
            dt: 2e-3,
            relative_width: 0.05,
            coarse_points: 4,
        };
        let report = epsilon_star_sweep(&settings, &[0.05, 0.05], 0.06).unwrap();
        assert!(report.all_converged, "verdicts: {:?}", report.scan);
        assert!(report.bracket.is_none());
        assert!(report.epsilon_star.is_none());
        let csv = report.verdicts_csv();
        assert_eq!(csv.lines().count(), 1 + report.scan.len());
        assert!(csv.lines().nth(1).unwrap().ends_with(",converged"));
    }

    #[test]
    fn sweep_brackets_a_known_two_machine_boundary() {
        // For two machines with unequal α under a shared gain k, the layer
        // is stable exactly when 2k > α₂ − α₁ (Routh condition on the 3×3
        // system). With α = [0.01, 3.0] the boundary sits at k ≈ 1.495.
        let settings = SweepSettings {
            k_alpha_min: 0.2,
            k_alpha_max: 5.0,
            t_end: 400.0,
            dt: 2e-3,
            relative_width: 0.05,
            coarse_points: 8,
        };
        let report = epsilon_star_sweep(&settings, &[0.01, 3.0], 0.38).unwrap();
        let (lo, hi) = report.bracket.expect("a boundary must be found");
        assert!(report.single_crossing, "verdicts: {:?}", report.scan);
        assert!(lo < hi && (hi - lo) / hi <= 0.05 + 1e-12);
        assert!(
            lo > 1.0 && hi < 2.6,
            "bracket ({lo}, {hi}) far from the Routh boundary 1.495"
        );
        let (e_lo, e_hi) = report.epsilon_star.unwrap();
        assert!(e_lo < e_hi);
        assert!((report.alpha_bar - 1.505).abs() < 1e-12);
    }

    #[test]
    fn metrics_recover_known_trace_properties() {
        // Synthetic two-generator trace with an exponential approach to the
        // reference after a step at t = 0.2 s and V_e decaying at −120/s.
        let n = 2;
        let mut tr = crate::trace::SimTrace::new(n);
        let dt = 1e-3;
        let samples = 1001;
        let rate = 0.5205479452054794;
        for k in 0..samples {
            let t = k as f64 * dt;
            let p_d = if t < 0.2 { 0.38 } else { 0.42 };
            let sum = if t < 0.2 {
                0.38
            } else {
                0.42 + (0.38 - 0.42) * (-rate * (t - 0.2)).exp()
            };
            tr.t.push(t);
            tr.p_d.push(p_d);
            tr.sum_p_m.push(sum);
            tr.xi_h.push(sum / rate);
            for i in 0..n {
                tr.z[i].push(sum / rate + 1e-5 * i as f64);
                tr.omega_r[i].push(1.0);
                tr.t_e[i].push(5.0);
                tr.t_m[i].push(5.0);
                tr.v_dr[i].push(0.0);
                tr.v_e[i].push(1.3e-7 * (-120.0 * t).exp());
                tr.v_w[i].push(9.0);
                tr.c_p[i].push(0.5);
            }
        }
        let m = trace_metrics(&tr).unwrap();
        assert_eq!(m.p_d_final, 0.42);
        // Final tracking error, from the synthetic exponential directly.
        let want = 0.04 * (-rate * 0.8).exp() / 0.42;
        assert!((m.tracking_rel_final - want).abs() < 1e-9);
        assert!((m.utilization_spread_final - 1e-5).abs() < 1e-12);
        assert_eq!(m.settling_2pct.len(), 2);
        // First segment starts settled.
        assert_eq!(m.settling_2pct[0], (0.0, Some(0.0)));
        // Second segment: |sum − 0.42| = 0.04·e^{−rate·τ} ≤ 0.0084 at
        // τ = ln(0.04/0.0084)/rate ≈ 3.0 s — longer than the trace, so the
        // 2% band is never reached before the end.
        assert_eq!(m.settling_2pct[1].0, 0.2);
        assert_eq!(m.settling_2pct[1].1, None);
        for r in &m.clf_decay_rates {
            let r = r.expect("decay fit must exist");
            assert!((r - -120.0).abs() < 1e-6, "rate = {r}");
        }
        let text = m.to_key_values();
        assert!(text.contains("step_2_settling_2pct=unsettled"));
        assert!(text.contains("gen_1_clf_decay_rate=-1."));
    }
}
