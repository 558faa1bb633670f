use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use irsma_cli::config::ExperimentConfig;
use irsma_cli::oracle::{run_suite, Suite};
use irsma_cli::presets;
use irsma_cli::run::{run_experiment, write_outputs, Outcome, PointReport};

const EXIT_CONFIG: u8 = 1;
const EXIT_ORACLE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "irsma", version, about = "Ergodic sum-rate experiments for IRS-aided two-user downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct Overrides {
    /// Output CSV path; the JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of fading states F.
    #[arg(long)]
    states: Option<usize>,
    /// Write zero runtimes so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare solvers against their slow oracles.
    OracleCheck {
        /// One of power, phase, sdp, channel.
        suite: String,
    },
    /// Run a built-in figure sweep (fig3 to fig9).
    Figure {
        name: String,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the preset configuration instead of running it.
        #[arg(long)]
        print_config: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match cli.command {
        Command::Run { config, overrides } => match ExperimentConfig::load(&config) {
            Ok(cfg) => execute(cfg, overrides, &config.with_extension("csv")),
            Err(e) => {
                eprintln!("error: {}: {e}", config.display());
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::OracleCheck { suite } => oracle_check(&suite),
        Command::Figure { name, overrides, print_config } => match presets::figure(&name) {
            Some(cfg) if print_config => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Some(cfg) => execute(cfg, overrides, &PathBuf::from(format!("{name}.csv"))),
            None => {
                eprintln!("error: unknown figure \"{name}\"; expected one of {}", presets::FIGURES.join(", "));
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}

fn execute(mut cfg: ExperimentConfig, o: Overrides, default_out: &std::path::Path) -> ExitCode {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(f) = o.states {
        if f == 0 {
            eprintln!("error: --states must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        cfg.states = f;
    }
    let out = o.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| default_out.to_path_buf());
    let report = run_experiment(&cfg, |p: &PointReport| {
        let pt = &p.point;
        let label = format!(
            "{} {} N={} L={} P={} dBm R={}",
            pt.access.name(),
            pt.adjustment.name(),
            pt.num_elements,
            pt.level_label(),
            pt.avg_power_dbm,
            pt.min_rate
        );
        match &p.outcome {
            Outcome::Solved(r) => eprintln!("{label}: {:.4} bits/s/Hz in {:.1} s", r.avg_sum_rate, r.runtime_s),
            Outcome::Infeasible { message } => eprintln!("{label}: infeasible: {message}"),
            Outcome::Failed { message } => eprintln!("{label}: failed: {message}"),
        }
    });
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Err(e) = write_outputs(&report, &out, !o.no_timing) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return ExitCode::from(EXIT_CONFIG);
    }
    eprintln!("wrote {}", out.display());
    if report.any_infeasible() || report.any_failed() {
        ExitCode::from(EXIT_INFEASIBLE)
    } else {
        ExitCode::SUCCESS
    }
}

fn oracle_check(name: &str) -> ExitCode {
    let Some(suite) = Suite::parse(name) else {
        let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
        eprintln!("error: unknown suite \"{name}\"; expected one of {}", names.join(", "));
        return ExitCode::from(EXIT_CONFIG);
    };
    let checks = run_suite(suite);
    for c in &checks {
        println!("{c}");
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ORACLE)
    }
}
