use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use singcond::equivalence;
use singcond::sampler::workers_from_env;
use singcond_cli::run::{appendix_sweep, read_table};
use singcond_cli::{run, CliError, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "singcond", version, about = "Conditional densities on measure-zero level sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Replace every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Distance between two density CSVs.
    Compare { a: PathBuf, b: PathBuf },
    /// Consistency sweep of the extension counterexample.
    Appendix {
        #[arg(long, default_value_t = singcond_cli::config::default_rho_steps())]
        rho_steps: usize,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let opts = RunOptions {
                out_dir: out,
                base_dir: config.parent().map(PathBuf::from).unwrap_or_default(),
                workers: workers_from_env(),
            };
            let report = run(&cfg, &opts).with_context(|| format!("run {}", config.display()))?;
            for w in &report.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.files {
                println!("{}", opts.out_dir.join(f).display());
            }
        }
        Command::Compare { a, b } => {
            let (ta, tb) = (read_table(&a)?, read_table(&b)?);
            let d = equivalence::density_distance(&ta, &tb).map_err(CliError::from)?;
            println!("{}", serde_json::to_string_pretty(&d)?);
        }
        Command::Appendix { rho_steps } => {
            let rep = appendix_sweep(rho_steps);
            println!("{}", serde_json::to_string_pretty(&rep)?);
            if !rep.confirms() {
                eprintln!("warning: found consistent pairs with rho > 0");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<CliError>()).map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
