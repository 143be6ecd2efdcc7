use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use clipbound::hpo::GridSpec;
use clipbound::privacy::DEFAULT_DELTA;
use clipbound_cli::commands::AccountRequest;
use clipbound_cli::config::RunConfig;
use clipbound_cli::{cmd_account, cmd_hpo, cmd_toy, cmd_train, grid_listing};

#[derive(Parser)]
#[command(name = "clipbound", version, about = "Differentially private training with bounded adaptive clipping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bimodal mean estimation under constant, unbounded and bounded clipping.
    Toy {
        /// Run config; defaults to the built-in toy setup.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory when no config is given.
        #[arg(long, default_value = "out/toy")]
        out: PathBuf,
    },
    /// Train and evaluate once per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Randomized hyperparameter search with privacy charging.
    Hpo {
        #[arg(long)]
        config: PathBuf,
    },
    /// Privacy cost of a run, or the noise needed for a target ε.
    Account(AccountArgs),
    /// Print a search grid without running it.
    Grid {
        /// Read the grid from this config's `hpo` block.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Add the batch-size axis to the default grid.
        #[arg(long)]
        batch_sizes: bool,
    },
}

#[derive(Args)]
struct AccountArgs {
    /// Poisson sampling rate.
    #[arg(long)]
    q: f64,
    /// Number of steps.
    #[arg(long = "steps", short = 'T')]
    steps: usize,
    #[arg(long)]
    sigma_grad: Option<f64>,
    /// σ_count / σ_grad; omit for a run without a count query.
    #[arg(long)]
    count_ratio: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Solve for σ_grad instead of evaluating ε.
    #[arg(long, requires = "target_epsilon")]
    calibrate: bool,
    #[arg(long)]
    target_epsilon: Option<f64>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toy { config, out } => {
            let cfg = match config {
                Some(path) => RunConfig::from_path(&path)?,
                None => RunConfig::default_toy(out),
            };
            let summary = cmd_toy(&cfg)?;
            for m in &summary.modes {
                println!(
                    "{:<10} clip_param={:<8} final_estimate={:.6} C_T={:.3e}",
                    m.strategy.name(),
                    m.clip_param,
                    m.final_estimate,
                    m.final_bound
                );
            }
        }
        Command::Train { config } => {
            let agg = cmd_train(&RunConfig::from_path(&config)?)?;
            for (name, v) in &agg.metrics {
                println!("{name:<16} {:.4} ± {:.4}", v.mean, v.se);
            }
            if let Some(e) = agg.epsilon {
                println!("epsilon          {e:.4}");
            }
        }
        Command::Hpo { config } => {
            let s = cmd_hpo(&RunConfig::from_path(&config)?)?;
            println!("grid size {}, trials drawn {}, failed {}", s.grid_size, s.trials_drawn, s.failed_trials);
            match &s.best_config {
                Some(c) => println!("best {c} objective {:.4}", s.best_objective.unwrap_or(f64::NAN)),
                None => println!("no successful trial"),
            }
            if let Some(c) = s.charge {
                println!(
                    "epsilon: per run {:.4}, search {:.4} ({}), total {:.4}",
                    c.per_run_epsilon, c.hpo_epsilon, c.policy, c.total_epsilon
                );
            }
        }
        Command::Account(a) => {
            if a.calibrate && a.sigma_grad.is_some() {
                bail!("--calibrate and --sigma-grad are mutually exclusive");
            }
            if !a.calibrate && a.target_epsilon.is_some() {
                bail!("--target-epsilon needs --calibrate");
            }
            let ledger = cmd_account(&AccountRequest {
                sampling_rate: a.q,
                steps: a.steps,
                sigma_grad: a.sigma_grad,
                count_ratio: a.count_ratio,
                delta: a.delta,
                target_epsilon: a.target_epsilon.filter(|_| a.calibrate),
            })?;
            eprintln!(
                "epsilon = {:.6} at order {} (sigma_grad = {:.6})",
                ledger.epsilon, ledger.opt_order, ledger.sigma_grad
            );
            println!("{}", serde_json::to_string_pretty(&ledger)?);
        }
        Command::Grid { config, batch_sizes } => {
            let spec = match config {
                Some(path) => match RunConfig::from_path(&path)?.hpo {
                    Some(h) => h.grid_spec(),
                    None => bail!("{} has no hpo block", path.display()),
                },
                None if batch_sizes => GridSpec::with_batch_sizes(),
                None => GridSpec::standard(),
            };
            print!("{}", grid_listing(&spec)?);
            eprintln!("grid size {}", spec.size());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
