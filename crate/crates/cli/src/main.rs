//! `sedctl`: synthesis, simulation and reporting for the sediment flushing
//! controller.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sedctl::io::{
    export_trace, read_trace, write_comparison, write_flushing, write_kernels, write_text,
    RunConfig,
};
use sedctl::linearize::{eigen_structure, EigenMode};
use sedctl::metrics::{flushing_from_series, l2_norms, observer_error_norms, sediment_flux};
use sedctl::sim::{run, run_many, LoopMode, PlantModel, Trace};
use sedctl::synthesis::{canonical_stage, resolve_equilibrium, Synthesis};
use sedctl::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "sedctl",
    version,
    about = "Boundary control of a water and sediment channel"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; defaults to `output_dir`, then `$SEDCTL_OUT`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the exact eigenvalues of the transport matrix.
    #[arg(long, global = true)]
    exact_eigen: bool,
    /// Plant model used by the simulator.
    #[arg(long, value_enum, global = true)]
    plant: Option<PlantArg>,
    /// Run with the gate held at its equilibrium opening.
    #[arg(long, global = true)]
    open_loop: bool,
    /// Feed back the plant state instead of the observer estimate.
    #[arg(long, global = true)]
    no_observer: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PlantArg {
    Linear,
    Nonlinear,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the equilibrium, the characteristic speeds and the boundary coefficients.
    Linearize,
    /// Solve the controller and observer kernels and write them as CSV.
    Kernels,
    /// Simulate one run and write its trace.
    Simulate,
    /// Simulate closed and open loop side by side.
    Compare,
    /// Recompute norms and flushing effectiveness from a written trace.
    Metrics {
        /// Path to a `trace.csv`.
        trace: PathBuf,
    },
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if cli.exact_eigen {
        cfg.eigen_mode = EigenMode::Exact;
    }
    match cli.plant {
        Some(PlantArg::Linear) => cfg.sim.plant = PlantModel::LinearCanonical,
        Some(PlantArg::Nonlinear) => cfg.sim.plant = PlantModel::Nonlinear,
        None => {}
    }
    if cli.open_loop {
        cfg.sim.mode = LoopMode::OpenLoop;
    }
    if cli.no_observer {
        cfg.sim.observer_enabled = false;
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("SEDCTL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn fmt4(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.10e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_linearize(cfg: &RunConfig) -> Result<()> {
    let opts = cfg.synthesis_options();
    let (params, derived, eq) =
        resolve_equilibrium(&cfg.params, &cfg.setpoint, opts.concentration)?;
    let (ls, es, regime, cs) = canonical_stage(&params, &derived, &eq, &opts)?;
    let exact = eigen_structure(&params, &derived, &eq, EigenMode::Exact)?;
    let approx = eigen_structure(&params, &derived, &eq, EigenMode::Approximate)?;
    let gap = exact
        .lambda
        .iter()
        .zip(&approx.lambda)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    println!(
        "equilibrium: H = {}, V = {}, Z = {}, C = {}",
        eq.h, eq.v, eq.z, eq.c
    );
    println!("Q0 = {}", eq.q0);
    println!("U_eq = {:.6} m", eq.u_eq);
    println!("Fr = {:.6}", eq.froude);
    println!("S_b = {:e}", eq.s_b);
    println!("ed_residual = {:e}", eq.ed_residual);
    println!("regime: {regime:?}");
    println!("bed coupling a = {:e}", derived.a);
    println!("eigenvalues (exact): {}", fmt4(&exact.lambda));
    println!("eigenvalues (approximate): {}", fmt4(&approx.lambda));
    println!("eigenvalue gap: {gap:e}");
    println!("eigen mode in use: {:?}", es.mode);
    println!("gamma = {}", fmt4(&cs.gamma));
    println!("mu = {:.10e}", cs.mu);
    println!("delta = {}", fmt4(&cs.delta));
    println!("rho = {}", fmt4(&cs.rho));
    println!("pi_u = {:.10e}", cs.pi_u);
    println!("A = {:.6e}", ls.a);
    println!("B = {:.6e}", ls.b);
    Ok(())
}

fn cmd_kernels(cfg: &RunConfig, out: &Path) -> Result<()> {
    let syn = Synthesis::build(&cfg.params, &cfg.setpoint, &cfg.synthesis_options())?;
    let k = &syn.controller;
    let o = &syn.observer;
    write_kernels(
        &out.join("controller_kernels.csv"),
        &k.grid,
        ["k1", "k2", "k3", "k4"],
        &k.k,
    )?;
    write_kernels(
        &out.join("observer_kernels.csv"),
        &o.grid,
        ["m1", "m2", "m3", "m4"],
        &o.m,
    )?;
    println!("lattice M = {}", k.grid.m);
    println!(
        "controller: iterations = {}, residual max = {:e}, residual L2 = {:e}, boundary error = {:e}",
        k.iterations,
        k.residual.max_norm(),
        k.residual.l2_norm(),
        k.boundary_error
    );
    println!(
        "observer: iterations = {}, residual max = {:e}, residual L2 = {:e}, boundary error = {:e}",
        o.iterations,
        o.residual.max_norm(),
        o.residual.l2_norm(),
        o.boundary_error
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn summarize(label: &str, trace: &Trace, window: f64) -> Result<()> {
    let norms = l2_norms(trace);
    let (first, last) = (norms.total[0], *norms.total.last().unwrap_or(&0.0));
    println!("{label}: initial norm = {first:e}");
    println!(
        "{label}: final norm = {last:e} ({:.4}% of initial)",
        100.0 * last / first
    );
    if trace.len() >= 2 {
        let (fin, fout, q) = sediment_flux(&trace.physical);
        let fe = flushing_from_series(&trace.times, &fin, &fout, &q, window)?;
        println!("{label}: Fe max = {:.6}%", 100.0 * fe.fe_max);
    }
    if let Some(err) = observer_error_norms(trace) {
        let peak = err.iter().cloned().fold(0.0, f64::max);
        println!(
            "{label}: observer error final = {:e} (peak {peak:e})",
            err.last().unwrap_or(&0.0)
        );
    }
    println!(
        "{label}: steps = {}, saturated steps = {}",
        trace.steps, trace.diagnostics.saturated_steps
    );
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let syn = Synthesis::build(&cfg.params, &cfg.setpoint, &cfg.synthesis_options())?;
    let trace = run(&cfg.sim, &syn)?;
    let files = export_trace(out, &trace, &syn, cfg.fe_window)?;
    write_text(&out.join("config.txt"), &cfg.to_config_string())?;
    summarize("run", &trace, cfg.fe_window)?;
    println!(
        "wrote {} and {}",
        files.trace.display(),
        files.series.display()
    );
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let syn = Synthesis::build(&cfg.params, &cfg.setpoint, &cfg.synthesis_options())?;
    let closed = sedctl::sim::SimConfig {
        mode: LoopMode::ClosedLoop,
        ..cfg.sim.clone()
    };
    let open = sedctl::sim::SimConfig {
        mode: LoopMode::OpenLoop,
        ..cfg.sim.clone()
    };
    let mut results = run_many(&[closed, open], &syn).into_iter();
    let closed = results.next().expect("two results")?;
    let open = results.next().expect("two results")?;
    let path = out.join("compare.csv");
    write_comparison(&path, &l2_norms(&closed), &l2_norms(&open))?;
    write_text(&out.join("config.txt"), &cfg.to_config_string())?;
    summarize("closed loop", &closed, cfg.fe_window)?;
    summarize("open loop", &open, cfg.fe_window)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_metrics(cfg: &RunConfig, trace_path: &Path, out: &Path) -> Result<()> {
    let tt = read_trace(trace_path)?;
    if tt.times.is_empty() {
        return Err(Error::Config(format!(
            "{} holds no snapshots",
            trace_path.display()
        )));
    }
    let dx = tt.dx();
    let norms: Vec<f64> = tt.canonical.iter().map(|s| s.norm(dx)).collect();
    let (fin, fout, q) = sediment_flux(&tt.physical);
    let report = flushing_from_series(&tt.times, &fin, &fout, &q, cfg.fe_window)?;
    let path = out.join("flushing.csv");
    write_flushing(&path, &report)?;
    println!("snapshots = {}", tt.times.len());
    println!("initial norm = {:e}", norms[0]);
    println!("final norm = {:e}", norms[norms.len() - 1]);
    println!("flux in (final) = {:e}", fin[fin.len() - 1]);
    println!("flux out (final) = {:e}", fout[fout.len() - 1]);
    let fe_max = if report.fe_max.is_finite() {
        report.fe_max
    } else {
        0.0
    };
    println!("Fe max = {fe_max:e}");
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    match &cli.command {
        Command::Linearize => cmd_linearize(&cfg),
        Command::Kernels => cmd_kernels(&cfg, &output_dir(cli, &cfg)?),
        Command::Simulate => cmd_simulate(&cfg, &output_dir(cli, &cfg)?),
        Command::Compare => cmd_compare(&cfg, &output_dir(cli, &cfg)?),
        Command::Metrics { trace } => cmd_metrics(&cfg, trace, &output_dir(cli, &cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
