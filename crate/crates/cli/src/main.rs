use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coopbeacon::sim;
use coopbeacon_cli::{describe, parse_sweep_param, write_reports, CliError, ConfigArgs, ExperimentSpec};

#[derive(Parser, Debug)]
#[command(name = "coopbeacon", version, about = "Simulate cooperative beacon verification under clogging attacks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one configuration and write its reports.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the cartesian product of parameter lists, one report set each.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// NAME=V1,V2,... over SimConfig field names; repeatable.
        #[arg(long = "param", value_name = "NAME=VALUES", required = true, value_parser = parse_sweep_param)]
        params: Vec<(String, Vec<serde_json::Value>)>,
    },
    /// Check a configuration and print the effective values.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { cfg, out } => {
            let cfg = cfg.resolve()?;
            let report = sim::run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            write_reports(&report, &out)?;
            println!("{}", describe(&report));
        }
        Cmd::Sweep { cfg, out, params } => {
            let spec = ExperimentSpec {
                base: cfg.resolve()?,
                sweep: params,
                output_dir: out,
            };
            for (label, cfg) in spec.cells()? {
                let report = sim::run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
                write_reports(&report, &spec.output_dir.join(&label))?;
                println!("{label}: {}", describe(&report));
            }
        }
        Cmd::ValidateConfig { cfg } => {
            let cfg = cfg.resolve()?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
