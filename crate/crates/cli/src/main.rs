//! `diffgame`: batch front-end for training, solving, evaluating and
//! reporting.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use diffgame_core::mesh::MeshSpec;
use diffgame_core::AdversaryMethod;

use commands::{EvaluateArgs, IsaacsArgs, PolicySource, SolveArgs};
use config::FlagOverrides;
use error::CliError;

#[derive(Parser)]
#[command(name = "diffgame", version, about = "Zero-sum differential games by deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy pair; one run directory per seed.
    Train {
        /// TOML file with training keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dot-path override, e.g. `--set hidden=[64,64]`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        env: Option<String>,
        /// Repeatable; runs fan out over seeds.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Output root (default: $DIFFGAME_OUTPUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact upper and lower values on a state grid (state dimension <= 3).
    Solve {
        #[arg(long)]
        env: String,
        #[arg(long)]
        dt: Option<f64>,
        /// Nodes per axis, comma separated.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lo: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        hi: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack trained policies with adversaries and report guaranteed results.
    Evaluate {
        /// Model files or run directories containing model.json.
        checkpoints: Vec<PathBuf>,
        /// Evaluate greedy policies of the solved grid for this environment.
        #[arg(long, conflicts_with = "checkpoints")]
        grid_policies: Option<String>,
        /// grid, dqn or random. Repeatable.
        #[arg(long = "method")]
        methods: Vec<AdversaryMethod>,
        #[arg(long, default_value_t = 4)]
        dqn_draws: usize,
        #[arg(long, default_value_t = 50_000)]
        dqn_steps: usize,
        #[arg(long, default_value_t = 1000)]
        random_sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerical Isaacs-condition check on the action meshes.
    CheckIsaacs {
        #[arg(long)]
        env: String,
        #[arg(long)]
        u_mesh: Option<MeshSpec>,
        #[arg(long)]
        v_mesh: Option<MeshSpec>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate evaluation directories into table.csv and series.csv.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Directory for the CSV files; the table goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            sets,
            algorithm,
            env,
            seeds,
            steps,
            dt,
            out,
        } => {
            let flags = FlagOverrides { algorithm, env, steps, dt };
            let base = config::resolve(config.as_deref(), &sets, &flags)?;
            let seeds = if seeds.is_empty() { vec![base.seed] } else { seeds };
            for dir in commands::cmd_train(&base, &seeds, &commands::output_root(out.as_deref()))? {
                println!("{}", dir.display());
            }
        }
        Command::Solve { env, dt, nodes, lo, hi, out } => {
            let args = SolveArgs { env, dt, nodes, lo, hi };
            let (dir, summary) = commands::cmd_solve(&args, &commands::output_root(out.as_deref()))?;
            print_json(&summary)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Evaluate {
            checkpoints,
            grid_policies,
            methods,
            dqn_draws,
            dqn_steps,
            random_sequences,
            seed,
            out,
        } => {
            let source = match grid_policies {
                Some(env) => PolicySource::GridGreedy { env },
                None => PolicySource::Checkpoints(checkpoints),
            };
            let args = EvaluateArgs {
                source,
                methods,
                dqn_draws,
                dqn_steps,
                random_sequences,
                seed,
            };
            let (dir, report) = commands::cmd_evaluate(&args, &commands::output_root(out.as_deref()))?;
            print_json(&report.table_row())?;
            eprintln!("wrote {}", dir.display());
        }
        Command::CheckIsaacs {
            env,
            u_mesh,
            v_mesh,
            samples,
            seed,
        } => {
            let args = IsaacsArgs {
                env,
                u_mesh,
                v_mesh,
                samples,
                seed,
            };
            print_json(&commands::cmd_check_isaacs(&args)?)?;
        }
        Command::Report { dirs, out } => {
            let rows = commands::cmd_report(&dirs, out.as_deref())?;
            if out.is_none() {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
