use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use qdpair::harness::{
    convergence_report, preset, preset_g_values, run_dynamics, run_scenario, sweep, write_dynamics, write_json,
    write_scenario, write_sweep, PresetKind, ScenarioConfig, SweepAxis, PRESET_NAMES,
};
use qdpair::Error;

/// Polarization-entangled photon pairs from a cavity-coupled quantum dot.
#[derive(Parser, Debug)]
#[command(name = "qdpair", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--param g_coupling=130`. Repeatable.
    #[arg(long = "param", short = 'p', value_name = "KEY=VALUE", global = true)]
    params: Vec<String>,
    /// Output directory (default: `out`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Exit with status 2 when a convergence check fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Density-matrix dynamics and single-time diagnostics.
    Dynamics,
    /// Two-photon matrix and concurrence.
    Tomography,
    /// Concurrence and diagnostics along one parameter axis.
    Sweep {
        /// g_coupling (alias g), delta, rabi_peak or tau_fwhm.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values; defaults to the config's sweep_values, then 10..150 μeV for g.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Concurrence sensitivity to horizon, grid spacing and Fock truncation.
    Converge,
    /// Run the scenarios behind one figure; `list` prints the names.
    Preset { name: String },
}

enum Failure {
    Physics(Error),
    Convergence(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Physics(e)
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    for p in &cli.params {
        config.apply_override(p)?;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    config.validate()?;
    Ok(config)
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn tomography(config: &ScenarioConfig, strict: bool) -> Result<(), Failure> {
    let r = run_scenario(config)?;
    let tp = &r.two_photon;
    println!("{}: t_max = {} ps, {} points", config.name, r.t_max, r.n_points);
    println!(
        "  alpha_HH = {:.6}  beta_HV = {:.6}  beta_VH = {:.6}  alpha_VV = {:.6}",
        tp.alpha_hh(),
        tp.beta_hv(),
        tp.beta_vh(),
        tp.alpha_vv()
    );
    println!("  gamma = {:.6} {:+.6}i", tp.gamma().re, tp.gamma().im);
    println!(
        "  concurrence = {:.6}  (2|gamma| = {:.6})",
        r.concurrence.concurrence, r.concurrence.coherence_bound
    );
    report_files(&write_scenario(&config.output_dir, &r)?);
    if strict && !r.horizon_converged {
        return Err(Failure::Convergence(format!(
            "{}: photon-pair count not converged at t_max = {} ps",
            config.name, r.t_max
        )));
    }
    Ok(())
}

fn dynamics(config: &ScenarioConfig) -> Result<(), Failure> {
    let r = run_dynamics(config)?;
    let last = r.diagnostics.len() - 1;
    println!(
        "{}: rho_GG(t_max) = {:.6}, peak <n_H> = {:.4e}, peak ETTOCF = {:.3e}, min eigenvalue = {:.2e}",
        config.name,
        r.diagnostics.rho_gg[last],
        r.diagnostics.n_h.iter().copied().fold(0.0, f64::max),
        r.diagnostics.ettocf.iter().copied().fold(0.0, f64::max),
        r.min_eigenvalue
    );
    report_files(&write_dynamics(&config.output_dir, &r)?);
    Ok(())
}

fn run_sweep(config: &ScenarioConfig, axis: SweepAxis, values: &[f64], strict: bool) -> Result<(), Failure> {
    let table = sweep(config, axis, values)?;
    for row in &table.rows {
        match (&row.summary, &row.error) {
            (Some(s), _) => println!("  {} = {:>8}  C = {:.6}", axis.name(), row.value, s.concurrence),
            (None, Some(e)) => println!("  {} = {:>8}  failed: {e}", axis.name(), row.value),
            _ => {}
        }
    }
    report_files(&write_sweep(&config.output_dir, &table)?);
    if strict {
        if let Some(r) = table.rows.iter().find(|r| r.summary.as_ref().is_some_and(|s| s.horizon_change >= qdpair::harness::HORIZON_TOL)) {
            return Err(Failure::Convergence(format!("{} = {}: horizon not converged", axis.name(), r.value)));
        }
    }
    Ok(())
}

fn converge(config: &ScenarioConfig, strict: bool) -> Result<(), Failure> {
    let report = convergence_report(config);
    match (report.base_concurrence, &report.base_error) {
        (Some(c), _) => println!("{}: base concurrence {c:.6} at t_max = {} ps", config.name, report.base_t_max),
        (None, Some(e)) => println!("{}: base run failed: {e}", config.name),
        _ => {}
    }
    for p in &report.probes {
        let d = p.delta.map_or("n/a".to_string(), |d| format!("{d:.3e}"));
        let flag = if p.flagged { "  FLAGGED" } else { "" };
        println!("  {:<15} delta = {d}{flag}", p.label);
    }
    std::fs::create_dir_all(&config.output_dir).map_err(Error::from)?;
    let path = config.output_dir.join(format!("{}_convergence.json", config.name));
    write_json(&path, &report)?;
    report_files(&[path]);
    if strict && report.flagged() {
        return Err(Failure::Convergence(format!("{}: convergence check flagged", config.name)));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Command::Preset { name } = &cli.command {
        if name == "list" {
            for n in PRESET_NAMES {
                println!("{n}");
            }
            return Ok(());
        }
    }
    let config = load_config(cli)?;
    match &cli.command {
        Command::Dynamics => dynamics(&config),
        Command::Tomography => tomography(&config, cli.strict),
        Command::Sweep { axis, values } => {
            let axis = match (axis, &config.sweep) {
                (Some(a), _) => SweepAxis::parse(a)?,
                (None, Some(s)) => s.axis,
                (None, None) => SweepAxis::GCoupling,
            };
            let values = if !values.is_empty() {
                values.clone()
            } else {
                match &config.sweep {
                    Some(s) if s.axis == axis && !s.values.is_empty() => s.values.clone(),
                    _ if axis == SweepAxis::GCoupling => preset_g_values(),
                    _ => return Err(Error::Config(format!("no values given for sweep axis {}", axis.name())).into()),
                }
            };
            run_sweep(&config, axis, &values, cli.strict)
        }
        Command::Converge => converge(&config, cli.strict),
        Command::Preset { name } => {
            let mut convergence = None;
            for entry in preset(name, &config)? {
                println!("== {}", entry.config.name);
                let res = match entry.kind {
                    PresetKind::Dynamics => dynamics(&entry.config),
                    PresetKind::Tomography => tomography(&entry.config, cli.strict),
                    PresetKind::Sweep => {
                        let s = entry.config.sweep.clone().expect("sweep preset");
                        run_sweep(&entry.config, s.axis, &s.values, cli.strict)
                    }
                };
                match res {
                    Err(Failure::Convergence(msg)) => convergence = Some(msg),
                    other => other?,
                }
            }
            convergence.map_or(Ok(()), |m| Err(Failure::Convergence(m)))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Physics(e)) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Convergence(msg)) => {
            eprintln!("convergence: {msg}");
            ExitCode::from(2)
        }
    }
}
