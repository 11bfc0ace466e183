use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use shape_newton::cli::{self, CONFIG_HELP};

/// Shape-Newton solver for free-surface potential flow.
#[derive(Debug, Parser)]
#[command(name = "shape-newton", version, about, after_help = CONFIG_HELP)]
struct Args {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory, overriding `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Suppress the iteration log.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => String::new(),
    };
    let mut config = match cli::parse_config(&text, &args.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(cli::exit_code_for(&e) as u8);
        }
    };
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    ExitCode::from(cli::run(&config, args.quiet) as u8)
}
