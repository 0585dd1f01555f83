use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drivenhunt::Error;

mod datagen;
mod manifest;
mod report;
mod sweep;
mod train;

#[derive(Parser, Debug)]
#[command(name = "drivenhunt", version, about = "Predator-prey grokking experiments")]
struct Cli {
    /// Root under which run directories are created when `--out` is absent.
    #[arg(long, global = true, env = "DRIVENHUNT_OUT", default_value = "runs")]
    out_root: PathBuf,

    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Materialize a dataset with a checksum manifest.
    DataGen(datagen::Args),
    /// Train one run.
    Train(train::Args),
    /// Sweep β or the initial scale and fit grokking times.
    Sweep(sweep::Args),
    /// Merge run exports into plot-ready tables.
    Report(report::Args),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::DataGen(a) => datagen::run(a, &cli.out_root),
        Command::Train(a) => train::run(a, &cli.out_root),
        Command::Sweep(a) => sweep::run(a, &cli.out_root),
        Command::Report(a) => report::run(a, &cli.out_root),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
