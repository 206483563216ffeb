//! Time-series recording for simulation runs, with a plain-text CSV codec.
//!
//! ## Column contract
//!
//! One row per recorded sample:
//!
//! ```text
//! t, p_d, sum_p_m, xi_h,
//! z_1..z_n, omega_r_1..omega_r_n, t_e_1..t_e_n, t_m_1..t_m_n,
//! v_dr_1..v_dr_n, v_e_1..v_e_n, v_w_1..v_w_n, c_p_1..c_p_n
//! ```
//!
//! - `t` [s]; `p_d`, `sum_p_m` [p.u. on the farm base]; `xi_h` [-]
//! - per-generator blocks: utilization `z` [-], rotor speed `omega_r`
//!   [p.u.], electrical / mechanical torque `t_e` / `t_m` [p.u.],
//!   commanded d-axis rotor voltage `v_dr` [p.u.], torque-error certificate
//!   `v_e` [p.u.²], wind speed `v_w` [m/s], power coefficient `c_p` [-]
//!
//! Values are written with 17 significant digits, enough to round-trip an
//! `f64` exactly, so re-reading a file reproduces the run bit for bit.
//!
//! The in-memory trace additionally carries the controller's torque
//! reference and its feed-forward rate per generator; these verification
//! channels are not part of the CSV contract.

use crate::error::Error;

/// Per-generator column blocks, in CSV order.
const BLOCKS: [&str; 8] = ["z", "omega_r", "t_e", "t_m", "v_dr", "v_e", "v_w", "c_p"];

/// Recorded time series of one simulation run.
///
/// Per-generator data is laid out `[generator][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// Number of generators.
    pub n: usize,
    /// Sample times [s].
    pub t: Vec<f64>,
    /// Farm power reference [p.u.].
    pub p_d: Vec<f64>,
    /// Aggregated farm power [p.u.].
    pub sum_p_m: Vec<f64>,
    /// Farm tracking integrator [-].
    pub xi_h: Vec<f64>,
    /// Utilization per generator [-].
    pub z: Vec<Vec<f64>>,
    /// Rotor speed per generator [p.u.].
    pub omega_r: Vec<Vec<f64>>,
    /// Electrical torque per generator [p.u.].
    pub t_e: Vec<Vec<f64>>,
    /// Mechanical torque per generator [p.u.].
    pub t_m: Vec<Vec<f64>>,
    /// Commanded d-axis rotor voltage per generator [p.u.].
    pub v_dr: Vec<Vec<f64>>,
    /// Torque-error certificate per generator [p.u.²].
    pub v_e: Vec<Vec<f64>>,
    /// Wind speed per generator [m/s].
    pub v_w: Vec<Vec<f64>>,
    /// Power coefficient per generator [-].
    pub c_p: Vec<Vec<f64>>,
    /// Torque reference per generator [p.u.]; in-memory only.
    pub t_e_star: Vec<Vec<f64>>,
    /// Torque-reference rate per generator [p.u./s]; in-memory only.
    pub t_e_star_rate: Vec<Vec<f64>>,
}

impl SimTrace {
    /// An empty trace for `n` generators.
    pub fn new(n: usize) -> Self {
        let empty = || vec![Vec::new(); n];
        SimTrace {
            n,
            t: Vec::new(),
            p_d: Vec::new(),
            sum_p_m: Vec::new(),
            xi_h: Vec::new(),
            z: empty(),
            omega_r: empty(),
            t_e: empty(),
            t_m: empty(),
            v_dr: empty(),
            v_e: empty(),
            v_w: empty(),
            c_p: empty(),
            t_e_star: empty(),
            t_e_star_rate: empty(),
        }
    }

    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    /// True when nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn block(&self, name: &str) -> &[Vec<f64>] {
        match name {
            "z" => &self.z,
            "omega_r" => &self.omega_r,
            "t_e" => &self.t_e,
            "t_m" => &self.t_m,
            "v_dr" => &self.v_dr,
            "v_e" => &self.v_e,
            "v_w" => &self.v_w,
            "c_p" => &self.c_p,
            _ => unreachable!("unknown block {name}"),
        }
    }

    fn block_mut(&mut self, name: &str) -> &mut [Vec<f64>] {
        match name {
            "z" => &mut self.z,
            "omega_r" => &mut self.omega_r,
            "t_e" => &mut self.t_e,
            "t_m" => &mut self.t_m,
            "v_dr" => &mut self.v_dr,
            "v_e" => &mut self.v_e,
            "v_w" => &mut self.v_w,
            "c_p" => &mut self.c_p,
            _ => unreachable!("unknown block {name}"),
        }
    }

    /// Serializes the trace following the documented column contract.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (4 + 8 * self.n) * (self.len() + 1));
        out.push_str("t,p_d,sum_p_m,xi_h");
        for name in BLOCKS {
            for g in 1..=self.n {
                out.push(',');
                out.push_str(name);
                out.push('_');
                out.push_str(&g.to_string());
            }
        }
        out.push('\n');
        for k in 0..self.len() {
            push_field(&mut out, self.t[k], true);
            push_field(&mut out, self.p_d[k], false);
            push_field(&mut out, self.sum_p_m[k], false);
            push_field(&mut out, self.xi_h[k], false);
            for name in BLOCKS {
                let block = self.block(name);
                for g in 0..self.n {
                    push_field(&mut out, block[g][k], false);
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses a trace written by [`SimTrace::to_csv`].
    ///
    /// The verification-only channels (torque reference and its rate) are
    /// left empty.
    pub fn from_csv(text: &str) -> Result<SimTrace, Error> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::TraceParse("empty input".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.len() < 4 + BLOCKS.len() || columns[..4] != ["t", "p_d", "sum_p_m", "xi_h"] {
            return Err(Error::TraceParse(format!(
                "unexpected header start: {:?}",
                &columns[..columns.len().min(4)]
            )));
        }
        let n = columns[4..].iter().take_while(|c| c.starts_with("z_")).count();
        if n == 0 || columns.len() != 4 + BLOCKS.len() * n {
            return Err(Error::TraceParse(format!(
                "header has {} columns, expected 4 + {}·n",
                columns.len(),
                BLOCKS.len()
            )));
        }
        for (b, name) in BLOCKS.iter().enumerate() {
            for g in 0..n {
                let want = format!("{name}_{}", g + 1);
                let got = columns[4 + b * n + g];
                if got != want {
                    return Err(Error::TraceParse(format!(
                        "expected column {want}, found {got}"
                    )));
                }
            }
        }

        let mut trace = SimTrace::new(n);
        for (line_no, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |what: &str| -> Result<f64, Error> {
                let raw = fields.next().ok_or_else(|| {
                    Error::TraceParse(format!("line {}: missing field {what}", line_no + 1))
                })?;
                raw.parse::<f64>().map_err(|_| {
                    Error::TraceParse(format!("line {}: bad number {raw:?} for {what}", line_no + 1))
                })
            };
            trace.t.push(next("t")?);
            trace.p_d.push(next("p_d")?);
            trace.sum_p_m.push(next("sum_p_m")?);
            trace.xi_h.push(next("xi_h")?);
            for name in BLOCKS {
                for g in 0..n {
                    let v = next(name)?;
                    trace.block_mut(name)[g].push(v);
                }
            }
            if fields.next().is_some() {
                return Err(Error::TraceParse(format!(
                    "line {}: too many fields",
                    line_no + 1
                )));
            }
        }
        Ok(trace)
    }
}

/// Appends one value with enough digits to round-trip an `f64` exactly.
fn push_field(out: &mut String, value: f64, first: bool) {
    use std::fmt::Write;
    if !first {
        out.push(',');
    }
    write!(out, "{value:.16e}").expect("writing to a String cannot fail");
}
