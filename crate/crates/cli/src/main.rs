//! Command-line front end for the wind-farm dispatch simulator.
//!
//! Subcommands:
//!
//! * `run`               — simulate a scenario; writes `trace.csv` and
//!                         `summary.txt` into the output directory.
//! * `sweep-epsilon`     — locate the dispatch-layer stability boundary;
//!                         writes `stability.txt` and `verdicts.csv`.
//! * `analyze`           — recompute summary metrics from an existing
//!                         `trace.csv` (no configuration needed).
//! * `print-equilibrium` — print the closed-form initial operating point.
//!
//! Exit codes: 0 on success, 1 on configuration / input / I/O errors,
//! 2 when a simulation aborts on a non-finite state (the partial trace is
//! still written). All file writes go through a temp-file + rename so a
//! crash never leaves a half-written artifact behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairwind_core::config::Scenario;
use fairwind_core::{analysis, sim, trace::SimTrace, Error};

#[derive(Parser)]
#[command(name = "fairwind", version, about = "Deloaded wind-farm dispatch simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario; write trace.csv and summary.txt
    Run {
        /// Scenario TOML file
        #[arg(long)]
        config: PathBuf,
        /// Directory for trace.csv and summary.txt
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Override the wind seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trace decimation
        #[arg(long)]
        decimate: Option<usize>,
    },
    /// Locate the dispatch-layer stability boundary; write stability.txt and verdicts.csv
    SweepEpsilon {
        /// Scenario TOML file (the [sweep] section sets the scan)
        #[arg(long)]
        config: PathBuf,
        /// Directory for stability.txt and verdicts.csv
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Recompute summary metrics from an existing trace.csv
    Analyze {
        /// Trace CSV produced by `run`
        #[arg(long)]
        trace: PathBuf,
        /// Write the summary here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the closed-form initial operating point
    PrintEquilibrium {
        /// Scenario TOML file
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Run { config, out_dir, seed, decimate } => cmd_run(&config, &out_dir, seed, decimate),
        Cmd::SweepEpsilon { config, out_dir } => cmd_sweep(&config, &out_dir),
        Cmd::Analyze { trace, out } => cmd_analyze(&trace, out.as_deref()),
        Cmd::PrintEquilibrium { config } => cmd_print_equilibrium(&config),
    }
}

/// Writes via a sibling temp file and rename, so readers never observe a
/// partially written file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_run(
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    decimate: Option<usize>,
) -> Result<(), Error> {
    let mut sc = Scenario::load(config)?;
    if let Some(seed) = seed {
        sc.wind.seed = seed;
    }
    if let Some(decimate) = decimate {
        sc.decimate = decimate;
    }
    sc.validate()?;

    let run = sim::run_scenario(&sc)?;
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("trace.csv"), &run.trace.to_csv())?;

    let metrics = analysis::trace_metrics(&run.trace)?;
    let mut summary = String::new();
    summary.push_str(&format!("generators={}\n", sc.n));
    summary.push_str(&format!("seed={}\n", sc.wind.seed));
    summary.push_str(&format!("samples={}\n", run.trace.len()));
    match &run.aborted {
        Some(a) => summary.push_str(&format!(
            "aborted=t={:.6e},generator={},quantity={}\n",
            a.t, a.generator, a.quantity
        )),
        None => summary.push_str("aborted=none\n"),
    }
    summary.push_str(&metrics.to_key_values());
    write_atomic(&out_dir.join("summary.txt"), &summary)?;

    if let Some(a) = run.aborted {
        return Err(a.to_error());
    }
    println!("wrote {} and {}", out_dir.join("trace.csv").display(), out_dir.join("summary.txt").display());
    Ok(())
}

fn cmd_sweep(config: &Path, out_dir: &Path) -> Result<(), Error> {
    let sc = Scenario::load(config)?;
    let alpha = sc.alpha();
    // Trials track the first scheduled reference value.
    let p_d = sc.schedule[0].1;
    let report = analysis::epsilon_star_sweep(&sc.sweep, &alpha, p_d)?;
    fs::create_dir_all(out_dir)?;
    write_atomic(&out_dir.join("stability.txt"), &report.summary_text())?;
    write_atomic(&out_dir.join("verdicts.csv"), &report.verdicts_csv())?;
    println!(
        "wrote {} and {}",
        out_dir.join("stability.txt").display(),
        out_dir.join("verdicts.csv").display()
    );
    Ok(())
}

fn cmd_analyze(trace_path: &Path, out: Option<&Path>) -> Result<(), Error> {
    let text = fs::read_to_string(trace_path)?;
    let trace = SimTrace::from_csv(&text)?;
    let metrics = analysis::trace_metrics(&trace)?;
    let summary = metrics.to_key_values();
    match out {
        Some(path) => write_atomic(path, &summary)?,
        None => print!("{summary}"),
    }
    Ok(())
}

fn cmd_print_equilibrium(config: &Path) -> Result<(), Error> {
    let sc = Scenario::load(config)?;
    let eq = sim::initial_equilibrium(&sc);
    let sum_alpha = sc.sum_alpha();
    let mut out = String::new();
    out.push_str(&format!("farm_base={:.16e}\n", sc.farm_base));
    out.push_str(&format!("sum_alpha={sum_alpha:.16e}\n"));
    out.push_str(&format!("lambda={:.16e}\n", eq.lambda));
    out.push_str(&format!("omega_r={:.16e}\n", eq.omega_r));
    out.push_str(&format!("c_p={:.16e}\n", eq.c_p));
    out.push_str(&format!("z={:.16e}\n", eq.z));
    out.push_str(&format!("t_m={:.16e}\n", eq.t_m));
    out.push_str(&format!("t_e={:.16e}\n", eq.t_e));
    out.push_str(&format!("e_q_prime={:.16e}\n", eq.e_q_prime));
    out.push_str(&format!("e_d_prime={:.16e}\n", eq.e_d_prime));
    out.push_str(&format!("v_qr={:.16e}\n", eq.v_qr));
    out.push_str(&format!("xi_h={:.16e}\n", eq.xi_h));
    // The integrator value that holds each scheduled reference at steady
    // state: ξ̄ = p_d / Σα per schedule entry.
    for (i, (t, p_d)) in sc.schedule.iter().enumerate() {
        out.push_str(&format!("schedule_{}_time={t:.16e}\n", i + 1));
        out.push_str(&format!("schedule_{}_p_d={p_d:.16e}\n", i + 1));
        out.push_str(&format!("schedule_{}_xi_bar={:.16e}\n", i + 1, p_d / sum_alpha));
    }
    print!("{out}");
    Ok(())
}
