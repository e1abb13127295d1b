mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{PlotKind, PlotRequest};
use config::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "mtdnet",
    version,
    about = "MTD financial networks, assortativity and penalized portfolios"
)]
struct Cli {
    /// TOML file with config keys; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "PATH", default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an MTD model to a price CSV and write model.json.
    Estimate {
        #[arg(long)]
        prices: PathBuf,
    },
    /// Build the network from prices or a fitted model; writes network.json and network_edges.csv.
    Network {
        #[arg(long, required_unless_present = "model", conflicts_with = "model")]
        prices: Option<PathBuf>,
        /// Model or network JSON.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Assortativity of a network, model or edge CSV; writes assortativity.csv.
    Assort {
        #[arg(long)]
        network: PathBuf,
        /// global, piraveenan, sabek, peel, a comma list, or all.
        #[arg(long, default_value = "all")]
        measure: String,
        /// in-in, in-out, out-in, out-out, a comma list, or all.
        #[arg(long, default_value = "all")]
        modality: String,
    },
    /// Solve one portfolio instance JSON; writes solution.json.
    Optimize {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Rolling-window backtest; writes report CSVs and report.json.
    Backtest {
        #[arg(long)]
        prices: PathBuf,
    },
    /// Loess profiles from a network, model or backtest report JSON.
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Local measure(s) for node profiles; ignored for edge profiles.
        #[arg(long, default_value = "all")]
        measure: String,
        #[arg(long, default_value = "all")]
        modality: String,
        /// Series label written to the market column.
        #[arg(long, default_value = "market")]
        market: String,
    },
}

fn override_keys() -> Vec<String> {
    config::keys().into_iter().filter(|k| k != "seed").collect()
}

fn command() -> clap::Command {
    let extra = override_keys().into_iter().map(|key| {
        Arg::new(key.clone())
            .long(key.clone())
            .global(true)
            .value_name("VALUE")
            .action(ArgAction::Set)
            .help_heading("Config overrides")
            .help(format!("Set config key {key}"))
    });
    Cli::command().args(extra)
}

fn overrides(matches: &ArgMatches, seed: Option<u64>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = override_keys()
        .into_iter()
        .filter_map(|k| {
            let v = matches.get_one::<String>(&k)?.clone();
            Some((k, v))
        })
        .collect();
    if let Some(seed) = seed {
        out.push(("seed".into(), seed.to_string()));
    }
    out
}

fn run(cli: &Cli, settings: &Settings) -> mtdnet::Result<()> {
    let out = cli.output_dir.as_path();
    match &cli.command {
        Command::Estimate { prices } => commands::estimate(settings, prices, out),
        Command::Network { prices, model } => {
            commands::network(settings, prices.as_deref(), model.as_deref(), out)
        }
        Command::Assort {
            network,
            measure,
            modality,
        } => commands::assort(settings, network, measure, modality, out),
        Command::Optimize { instance } => commands::optimize(settings, instance, out),
        Command::Backtest { prices } => commands::backtest(settings, prices, out),
        Command::Plotdata {
            input,
            kind,
            measure,
            modality,
            market,
        } => {
            let req = PlotRequest {
                input,
                kind: *kind,
                measure,
                modality,
                market,
            };
            commands::plotdata(settings, &req, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = Settings::load(cli.config.as_deref(), &overrides(&matches, cli.seed))
        .and_then(|settings| run(&cli, &settings));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
