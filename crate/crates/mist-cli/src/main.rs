//! `mist-sim`: batch front end for the MIST simulation library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mist_core::pipeline::{Figure, Outputs, Pipeline, RunOptions};
use mist_core::scenario::{parse_scenario, Model};
use mist_core::Error;

const EXIT_SCENARIO: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mist-sim", version, about = "Measurement-induced state transition simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Use the full-size truncations and trajectory counts.
    #[arg(long)]
    paper_scale: bool,
    /// Append entanglement columns to time series.
    #[arg(long)]
    entanglement: bool,
    /// Also write SVG plots next to the CSVs.
    #[arg(long)]
    plots: bool,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fluxonium spectrum and charge matrix elements.
    Spectrum(Common),
    /// Reduced two-level model parameters.
    Reduce(Common),
    /// Analytic transition rates over the drive grid.
    Rates(Common),
    /// Reduced-model steady states over the drive and detuning grids.
    SteadyScan(Common),
    /// Time evolution at a single drive amplitude.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Model to run; repeat for several. Defaults to the scenario list.
        #[arg(long)]
        model: Vec<String>,
    },
    /// Data behind one figure.
    Figure {
        #[command(flatten)]
        common: Common,
        /// One of fig1b, fig2a, fig2b, fig2c, fig3, fig4.
        #[arg(long)]
        figure: String,
    },
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("MIST_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::param("MIST_SIM_THREADS", format!("expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Numerical(e.to_string()))
}

fn pipeline(c: &Common, models: Option<Vec<Model>>) -> Result<Pipeline, Error> {
    let loaded = parse_scenario(&c.scenario)?;
    Ok(Pipeline::new(
        loaded,
        RunOptions {
            paper_scale: c.paper_scale,
            entanglement: c.entanglement,
            plots: c.plots,
            seed: c.seed,
            out_dir: c.out.clone(),
            models,
        },
    ))
}

fn run(cli: Cli) -> Result<Outputs, Error> {
    configure_threads()?;
    match cli.command {
        Command::Spectrum(c) => pipeline(&c, None)?.run_spectrum(),
        Command::Reduce(c) => pipeline(&c, None)?.run_reduce(),
        Command::Rates(c) => pipeline(&c, None)?.run_rates(),
        Command::SteadyScan(c) => pipeline(&c, None)?.run_steady_scan(),
        Command::Evolve { common, model } => {
            let models = if model.is_empty() {
                None
            } else {
                Some(model.iter().map(|m| m.parse()).collect::<Result<Vec<Model>, _>>()?)
            };
            pipeline(&common, models)?.run_evolve()
        }
        Command::Figure { common, figure } => {
            let figure: Figure = figure.parse()?;
            pipeline(&common, None)?.run_figure(figure)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mist-sim: {e}");
            ExitCode::from(if e.is_configuration() { EXIT_SCENARIO } else { EXIT_NUMERICAL })
        }
    }
}
