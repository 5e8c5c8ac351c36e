//! `feeder-envelope` command-line front end.

mod batch;
mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use feeder_envelope::Relinearization;

use commands::RunConfig;
use error::ExitCode;

#[derive(Parser)]
#[command(name = "feeder-envelope", version, about = "Admissible dispatch on radial feeders via inner-approximation OPF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact load flow at the scenario's demand.
    Loadflow(Common),
    /// Robust single-period dispatch, optionally tightened.
    Solve(Common),
    /// Hosting capacity of the candidate units, distributed vs centralized.
    Hosting {
        #[command(flatten)]
        common: Common,
        /// Node of the single unit in the centralized run.
        #[arg(long, default_value_t = 2)]
        centralized_node: usize,
    },
    /// Multi-period dispatch with storage.
    Multiperiod {
        #[command(flatten)]
        common: Common,
        /// Also solve without storage and with one centralized battery.
        #[arg(long)]
        compare: bool,
        /// Node of the battery in the centralized comparison run.
        #[arg(long, default_value_t = 2)]
        centralized_node: usize,
        #[arg(long, value_enum, default_value_t = Mode::PerStep)]
        relinearization: Mode,
    },
    /// Checks a dispatch file against the exact load flow.
    Validate {
        #[command(flatten)]
        common: Common,
        /// JSON with `generator_nodes`, `p_g` and optionally `q_g`,
        /// `battery_nodes`, `p_b`; a `solution.json` is accepted too.
        #[arg(long)]
        dispatch: PathBuf,
    },
    /// Up and down flexibility bounds of the scenario's units.
    Flexibility(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    feeder: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run the tightening loop (default).
    #[arg(long, overrides_with = "no_tighten")]
    tighten: bool,
    /// Single robust solve around the forecast.
    #[arg(long)]
    no_tighten: bool,
    /// Tightening stop tolerance on the voltage mismatch (pu²).
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    max_outer: usize,
    /// QP primal and dual tolerance.
    #[arg(long, default_value_t = 1e-7)]
    qp_eps: f64,
    /// Load-flow convergence tolerance (pu²).
    #[arg(long, default_value_t = 1e-10)]
    oracle_tol: f64,
    /// Slack allowed when checking limits.
    #[arg(long, default_value_t = 1e-6)]
    validation_slack: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    PerStep,
    Fixed,
}

impl Common {
    fn config(&self, relinearization: Relinearization) -> RunConfig {
        RunConfig {
            feeder: self.feeder.clone(),
            scenario: self.scenario.clone(),
            out: self.out.clone(),
            eps: self.eps,
            qp_eps: self.qp_eps,
            oracle_tol: self.oracle_tol,
            validation_slack: self.validation_slack,
            max_outer: self.max_outer,
            tighten: !self.no_tighten,
            relinearization,
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let per_step = Relinearization::PerStep;
    let result = match &cli.command {
        Command::Loadflow(c) => commands::loadflow(&c.config(per_step)),
        Command::Solve(c) => commands::solve(&c.config(per_step)),
        Command::Hosting { common, centralized_node } => commands::hosting(&common.config(per_step), *centralized_node),
        Command::Multiperiod { common, compare, centralized_node, relinearization } => {
            let mode = match relinearization {
                Mode::PerStep => Relinearization::PerStep,
                Mode::Fixed => Relinearization::Fixed,
            };
            commands::multiperiod(&common.config(mode), *compare, *centralized_node)
        }
        Command::Validate { common, dispatch } => commands::validate(&common.config(per_step), dispatch),
        Command::Flexibility(c) => commands::flexibility(&c.config(per_step)),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            e.code
        }
    };
    if code != ExitCode::Ok {
        process::exit(code as i32);
    }
}
