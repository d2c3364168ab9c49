use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qfilter_cli::config::{self, Mode, RunConfig};
use qfilter_cli::{run_experiment, RunError, EXIT_INVALID_CONFIG};

#[derive(Parser)]
#[command(name = "qfilter", version, about = "Quantum filtering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file or manifest.
    Run {
        config: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn main() -> ExitCode {
    let Command::Run { config, mode, seed, out, trajectories, dt } = Cli::parse().command;
    let cfg = config::load(&config).and_then(|mut map| {
        let overrides = [
            ("mode", mode),
            ("sim.seed", seed.map(|s| s.to_string())),
            ("output.dir", out.map(|p| p.display().to_string())),
            ("sim.trajectories", trajectories.map(|n| n.to_string())),
            ("sim.dt", dt.map(|d| d.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        RunConfig::from_map(&map)
    });
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("qfilter: invalid config: {e}");
            return ExitCode::from(EXIT_INVALID_CONFIG);
        }
    };
    match run_experiment(&cfg) {
        Ok(r) => {
            if cfg.mode != Mode::NoiseSelftest && cfg.mode != Mode::MgfCheck {
                eprintln!("qfilter: {} trajectories written to {}", cfg.trajectories, r.out_dir.display());
            } else {
                eprintln!("qfilter: report written to {}", r.out_dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qfilter: {e}");
            if let RunError::Numerical(_) = e {
                eprintln!("qfilter: partial outputs flagged in {}", cfg.out_dir.join("summary.json").display());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
