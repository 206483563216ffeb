//! Leader–follower dispatch protocol: one farm-level tracking integrator and
//! a chain of utilization-consensus updates, plus the aggregation schemes
//! that produce the farm power total the integrator needs.
//!
//! ## Dispatch law
//!
//! Generator `0` is the leader; generator `i` listens to `i − 1`. With
//! utilization z_i (captured power as a fraction of available power), farm
//! reference P_d, and measured farm total ΣP_m (all per unit on the farm
//! base):
//!
//! ```text
//! ξ̇_h = P_d − Σ P_m                    (shared tracking integrator)
//! ż_0 = −k_α,0 (z_0 − ξ_h)             (leader chases the integrator)
//! ż_i = −k_α,i (z_i − z_{i−1}),  i ≥ 1 (followers chase their predecessor)
//! ```
//!
//! At rest every z_i equals ξ_h and the farm total equals the reference, so
//! equal utilization and reference tracking are the same fixed point.
//!
//! ## Aggregation
//!
//! - **Chain relay** (default): partial sums hop tail → head. The fold order
//!   is fixed (highest index first), so the relayed total is bit-identical
//!   to [`farm_power_sum`], the canonical flat sum.
//! - **Average consensus**: repeated diffusion x ← x − step·L·x on the
//!   undirected chain's Laplacian L. Each round conserves Σx to machine
//!   precision and converges to the mean, so n·x_leader recovers the total.
//!   Requires step < 2/λ_max(L); λ_max = 4 sin²((n−1)π/2n) < 4.
//!
//! Messages are value types ([`ProtocolMessage`]) so the wire traffic of a
//! step can be inspected and tested.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Per-generator control gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Consensus gains k_α,i [1/s]; index 0 is the leader.
    pub k_alpha: Vec<f64>,
    /// Torque-loop gains k_β,i [1/s].
    pub k_beta: Vec<f64>,
}

impl Gains {
    /// Equal gains for `n` generators.
    pub fn homogeneous(n: usize, k_alpha: f64, k_beta: f64) -> Self {
        Gains { k_alpha: vec![k_alpha; n], k_beta: vec![k_beta; n] }
    }

    /// True when every generator shares the same pair of gains.
    pub fn is_homogeneous(&self) -> bool {
        self.k_alpha.windows(2).all(|w| w[0] == w[1])
            && self.k_beta.windows(2).all(|w| w[0] == w[1])
    }

    /// Rejects non-positive or mismatched gain vectors.
    pub fn validate(&self, n: usize) -> Result<(), Error> {
        if self.k_alpha.len() != n || self.k_beta.len() != n {
            return Err(Error::config(format!(
                "gain vectors must have length {n}, got k_alpha: {}, k_beta: {}",
                self.k_alpha.len(),
                self.k_beta.len()
            )));
        }
        for (name, v) in [("k_alpha", &self.k_alpha), ("k_beta", &self.k_beta)] {
            if let Some(bad) = v.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return Err(Error::config(format!("protocol.{name} entries must be finite and > 0, got {bad}")));
            }
        }
        Ok(())
    }
}

/// Chain topology: generator 0 leads, generator i hears i − 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainTopology {
    /// Number of generators.
    pub n: usize,
}

impl ChainTopology {
    /// The upstream neighbor a generator listens to (`None` for the leader).
    pub fn predecessor(&self, i: usize) -> Option<usize> {
        (i > 0 && i < self.n).then(|| i - 1)
    }
}

/// Dispatch-layer state: tracking integrator plus utilizations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    /// Tracking integrator ξ_h [-].
    pub xi_h: f64,
    /// Utilization levels z_i [-].
    pub z: Vec<f64>,
}

/// One hop of protocol traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    /// Sending generator index.
    pub from: usize,
    /// Receiving generator index.
    pub to: usize,
    /// What traveled.
    pub payload: Payload,
}

/// Message payloads exchanged along the chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Downstream consensus signal: the sender's utilization and its rate.
    Consensus {
        /// Sender's utilization z [-].
        z: f64,
        /// Sender's utilization rate ż [1/s].
        z_rate: f64,
    },
    /// Upstream partial power sum [p.u. on the farm base].
    PartialPowerSum(f64),
}

/// Tracking-integrator derivative ξ̇_h = P_d − ΣP_m.
pub fn leader_aux_deriv(p_d: f64, total_power: f64) -> f64 {
    p_d - total_power
}

/// Leader utilization update ż_0 = −k_α (z_0 − ξ_h).
pub fn leader_consensus_deriv(k_alpha: f64, z_leader: f64, xi_h: f64) -> f64 {
    -k_alpha * (z_leader - xi_h)
}

/// Follower utilization update ż_i = −k_α (z_i − z_{i−1}).
pub fn follower_consensus_deriv(k_alpha: f64, z_i: f64, z_prev: f64) -> f64 {
    -k_alpha * (z_i - z_prev)
}

/// Full dispatch-layer derivative for per-generator farm powers `powers`
/// [p.u. on the farm base].
///
/// Returns (ξ̇_h, ż). Each ż_i depends only on (z_i, its upstream value), so
/// the result is independent of evaluation order.
pub fn protocol_derivs(
    gains: &Gains,
    state: &ConsensusState,
    p_d: f64,
    powers: &[f64],
) -> (f64, Vec<f64>) {
    let n = state.z.len();
    debug_assert_eq!(powers.len(), n);
    let xi_dot = leader_aux_deriv(p_d, farm_power_sum(powers));
    let mut z_dot = vec![0.0; n];
    for i in 0..n {
        z_dot[i] = if i == 0 {
            leader_consensus_deriv(gains.k_alpha[0], state.z[0], state.xi_h)
        } else {
            follower_consensus_deriv(gains.k_alpha[i], state.z[i], state.z[i - 1])
        };
    }
    (xi_dot, z_dot)
}

/// Canonical farm power total: fold from the highest index down to the
/// leader. This is the one summation order used everywhere, chosen to match
/// the tail→head relay hop direction exactly (bit for bit).
pub fn farm_power_sum(powers: &[f64]) -> f64 {
    powers.iter().rev().fold(0.0, |acc, &p| acc + p)
}

/// Chain-relay aggregation: partial sums hop tail → head.
///
/// Returns the farm total as received by the leader and the message list
/// (one `PartialPowerSum` per hop). Bit-identical to [`farm_power_sum`].
pub fn relay_aggregate(powers: &[f64]) -> (f64, Vec<ProtocolMessage>) {
    let n = powers.len();
    let mut messages = Vec::with_capacity(n.saturating_sub(1));
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += powers[i];
        if i > 0 {
            messages.push(ProtocolMessage { from: i, to: i - 1, payload: Payload::PartialPowerSum(acc) });
        }
    }
    (acc, messages)
}

/// Largest Laplacian eigenvalue of the undirected n-chain:
/// λ_max = 4 sin²((n−1)π / 2n).
pub fn chain_laplacian_lambda_max(n: usize) -> f64 {
    let s = ((n - 1) as f64 * std::f64::consts::PI / (2.0 * n as f64)).sin();
    4.0 * s * s
}

/// One diffusion round x ← x − step·L·x on the undirected chain Laplacian.
fn average_consensus_round(x: &mut [f64], step: f64) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let mut lx = vec![0.0; n];
    for i in 0..n {
        let mut v = 0.0;
        if i > 0 {
            v += x[i] - x[i - 1];
        }
        if i + 1 < n {
            v += x[i] - x[i + 1];
        }
        lx[i] = v;
    }
    for i in 0..n {
        x[i] -= step * lx[i];
    }
}

/// Iterative average consensus over the chain.
///
/// Returns the per-node values after `rounds` rounds; each node's value
/// approaches mean(x₀), so n·x_i approximates Σx₀. Fails unless
/// 0 < step < 2/λ_max(L), the diffusion stability bound.
pub fn average_consensus(x0: &[f64], step: f64, rounds: usize) -> Result<Vec<f64>, Error> {
    let n = x0.len();
    if n >= 2 {
        let bound = 2.0 / chain_laplacian_lambda_max(n);
        if !(step > 0.0 && step < bound) {
            return Err(Error::config(format!(
                "protocol.average_step must lie in (0, {bound:.6}) for n = {n}, got {step}"
            )));
        }
    }
    let mut x = x0.to_vec();
    for _ in 0..rounds {
        average_consensus_round(&mut x, step);
    }
    Ok(x)
}

/// Fixed-depth delay line for neighbor signals (whole macro-steps).
///
/// Depth 0 is pass-through. With depth d, `get` returns the snapshot pushed
/// d steps ago, or the oldest available during warm-up.
#[derive(Debug, Clone)]
pub struct DelayLine<T: Clone> {
    depth: usize,
    buf: std::collections::VecDeque<T>,
}

impl<T: Clone> DelayLine<T> {
    /// New delay line of the given depth.
    pub fn new(depth: usize) -> Self {
        DelayLine { depth, buf: std::collections::VecDeque::with_capacity(depth + 1) }
    }

    /// Pushes the current-step snapshot.
    pub fn push(&mut self, value: T) {
        self.buf.push_back(value);
        while self.buf.len() > self.depth + 1 {
            self.buf.pop_front();
        }
    }

    /// The snapshot `depth` steps back (or the oldest one while warming up).
    pub fn delayed(&self) -> Option<&T> {
        self.buf.front()
    }
}
