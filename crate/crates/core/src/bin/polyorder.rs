use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use polyorder::cli::{execute, list_experiments, RunArgs, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(name = "polyorder", version, about = "Polymer partition functions and their concave order")]
struct Args {
    /// Experiment to run, or `list` for the catalog.
    experiment: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if args.experiment == "list" {
        for e in list_experiments() {
            match e.label {
                Some(l) => println!("{:<20} {} [{l}]", e.name, e.summary),
                None => println!("{:<20} {}", e.name, e.summary),
            }
        }
        return ExitCode::SUCCESS;
    }
    if !list_experiments().iter().any(|e| e.name == args.experiment) {
        eprintln!("error: unknown experiment '{}' (try `polyorder list`)", args.experiment);
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let (Some(config), Some(out)) = (args.config, args.out) else {
        eprintln!("error: --config and --out are required");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    let code = execute(&RunArgs { subcommand: args.experiment, config, out, seed: args.seed, threads: args.threads });
    ExitCode::from(code as u8)
}
