use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rewgm_core::config::load_config;
use rewgm_core::fitkit::{
    fit_decay, fit_heating_quadratic, fit_pi_pulse, fit_two_stage_hole, DecayModel, DecayOptions, FitResult, HoleFitMode,
    HoleFitOptions,
};
use rewgm_core::io::read_series;
use rewgm_core::scenario::{run_scenario, RunOptions, Scenario, OUT_DIR_ENV, REPORT_SCHEMA_VERSION};
use rewgm_core::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Parser)]
#[command(name = "rewgm", version, about = "Cavity-QED, photon-echo and bistability toolkit for rare-earth-doped WGM resonators")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for traces and the JSON report.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    /// Seed for synthetic noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cavity rates, coupling and critical numbers.
    Cqed,
    /// Fundamental mode, mode volume and dipole coupling.
    Modevol,
    /// Simulated echo runs and their decay fits.
    Echo,
    /// Power-ladder sweeps, hysteresis widths and the g fit.
    Bistab,
    /// Fit a two-column data file.
    Fit {
        file: PathBuf,
        /// amp_2pe, int_2pe, pop_3pe, hole, two_stage_hole, pi_pulse or heating;
        /// taken from the file's `# model:` header when omitted.
        #[arg(long)]
        model: Option<String>,
        /// Fit an additive floor (decay models only).
        #[arg(long)]
        floor: bool,
    },
    /// Run a named scenario.
    Run {
        /// table1, cavity_qed_numbers, mode_volume, echo_suite, bistab_suite or heating
        scenario: String,
    },
}

fn fit_file(file: &PathBuf, model: Option<&str>, floor: bool) -> anyhow::Result<FitResult> {
    let series = read_series(file)?;
    let model = model
        .map(str::to_string)
        .or(series.model.clone())
        .with_context(|| format!("{}: no --model given and no `# model:` header", file.display()))?;
    let fit = match model.as_str() {
        "two_stage_hole" => fit_two_stage_hole(&series.points, &HoleFitOptions { mode: HoleFitMode::Sum, breakpoint: None })?,
        "two_stage_hole_piecewise" => fit_two_stage_hole(&series.points, &HoleFitOptions::default())?,
        "pi_pulse" => fit_pi_pulse(&series.points)?,
        "heating" => fit_heating_quadratic(&series.points)?,
        m => fit_decay(&series.points, m.parse::<DecayModel>()?, &DecayOptions { floor, init: None })?,
    };
    Ok(fit)
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn fit_text(fit: &FitResult) -> String {
    let mut s = format!("model {} converged={} rss={:.3e}\n", fit.model_name, fit.converged, fit.residual_norm);
    for (i, p) in fit.parameters.iter().enumerate() {
        let err = fit.standard_errors.as_ref().map_or(String::new(), |e| format!(" ± {:.3e}", e[i]));
        s.push_str(&format!("  {:<12} {:.6e}{err} {}\n", p.name, p.value, p.unit));
    }
    for (k, v) in &fit.diagnostics {
        s.push_str(&format!("  {k:<12} {v:.6e}\n"));
    }
    for f in &fit.flags {
        s.push_str(&format!("  flag: {f}\n"));
    }
    s
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let scenario = match &cli.command {
        Command::Cqed => Scenario::CavityQedNumbers,
        Command::Modevol => Scenario::ModeVolume,
        Command::Echo => Scenario::EchoSuite,
        Command::Bistab => Scenario::BistabSuite,
        Command::Run { scenario } => scenario.parse()?,
        Command::Fit { file, model, floor } => {
            let fit = fit_file(file, model.as_deref(), *floor)?;
            match cli.format {
                Format::Json => {
                    let v = serde_json::json!({ "schema_version": REPORT_SCHEMA_VERSION, "fit": fit });
                    emit(&(serde_json::to_string_pretty(&v)? + "\n"));
                }
                Format::Text => emit(&fit_text(&fit)),
            }
            return Ok(true);
        }
    };
    let Some(path) = &cli.config else { bail!("--config is required for `{scenario}`") };
    let config = load_config(path)?;
    let opts = RunOptions {
        out_dir: cli.out.clone(),
        seed: cli.seed,
        exec: if cli.sequential { Execution::Sequential } else { Execution::Parallel },
    };
    let report = run_scenario(scenario, &config, &opts)?;
    match cli.format {
        Format::Json => emit(&report.to_json()),
        Format::Text => emit(&report.to_text()),
    }
    if let Some(dir) = &cli.out {
        eprintln!("report: {}", dir.join(report.report_file_name()).display());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
