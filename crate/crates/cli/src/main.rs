use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchid_cli::commands::{cmd_evaluate, cmd_fit_surface, cmd_identify, cmd_simulate};
use switchid_cli::{CliError, Overrides};
use switchid_core::Relaxation;

#[derive(Parser)]
#[command(name = "switchid", version, about = "Identify switching polynomial systems from state/derivative samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file or directory.
    #[arg(long)]
    output: PathBuf,
    /// Overrides the sampling seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the mode-assignment relaxation.
    #[arg(long, value_parser = parse_relaxation)]
    relaxation: Option<Relaxation>,
    /// Only print errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured system into a dataset CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the alternating identification; writes model.json and history.csv.
    Identify {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recover switching surfaces for an identified model.
    FitSurface {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a model against the configured ground truth.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        surfaces: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_relaxation(s: &str) -> Result<Relaxation, String> {
    s.parse().map_err(|_| format!("unknown relaxation {s:?} (expected lp, sdp or exact)"))
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            relaxation: self.relaxation,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common } => {
            let s = cmd_simulate(&common.config, &common.output, common.overrides())?;
            let balance: Vec<String> = s.mode_balance.iter().map(|b| format!("{b:.4}")).collect();
            log::info!(
                "wrote {} samples to {}; mode balance [{}]; seed {}{}",
                s.num_samples,
                common.output.display(),
                balance.join(", "),
                s.seed,
                if s.seed_defaulted { " (default)" } else { "" }
            );
        }
        Command::Identify { dataset, common } => {
            let s = cmd_identify(&dataset, &common.config, &common.output, common.overrides())?;
            log::info!(
                "{} iterations ({:?}), final cost {:.6e}{}; wrote {} and {}",
                s.iterations,
                s.stop,
                s.final_cost,
                s.final_mismatch_truth.map_or(String::new(), |m| format!(", {m} labels off ground truth")),
                s.model_path.display(),
                s.history_path.display()
            );
        }
        Command::FitSurface { dataset, model, common } => {
            let s = cmd_fit_surface(&dataset, &model, &common.config, &common.output, common.overrides())?;
            log::info!(
                "certificate t = {:.4e}, total slack {:.3e}; wrote {}",
                s.certificate_t,
                s.total_slack,
                common.output.display()
            );
            for (l, a) in s.coefficients.iter().enumerate() {
                log::info!("surface {}: {:?}", l + 1, a);
            }
        }
        Command::Evaluate { model, surfaces, common } => {
            let m = cmd_evaluate(&common.config, &model, surfaces.as_deref(), &common.output, common.overrides())?;
            let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            log::info!(
                "velocity RMSE {}, mode accuracy {}, mIoU {}",
                show(m.velocity_rmse),
                show(m.mode_accuracy),
                show(m.miou)
            );
            if let Some(r) = &m.rollout {
                log::info!(
                    "rollouts: RMSE {}, final {}, max {} ({} completed, {} diverged)",
                    show(r.rmse),
                    show(r.final_error),
                    show(r.max_error),
                    r.completed,
                    r.diverged
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = match &cli.command {
        Command::Simulate { common }
        | Command::Identify { common, .. }
        | Command::FitSurface { common, .. }
        | Command::Evaluate { common, .. } => common.quiet,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "info" }))
        .format_target(false)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
