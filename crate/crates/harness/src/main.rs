use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpscale::bench::{cmd_bench, reference_bench_config, BenchOptions};
use dpscale::curves::{log_grid, write_batch_curve, write_delta_curve};
use dpscale::finetune::cmd_finetune;
use dpscale::train::cmd_train;
use dpscale::tune::{cmd_fixed_eps_sweep, cmd_tune};
use dpscale::{Error, ExperimentConfig, Result};
use dpscale_core::accountant::{
    batch_scaling_curve, epsilon_curve_with, find_noise_multiplier_with, privacy_report, AccountantOptions, Conversion,
};

#[derive(Parser)]
#[command(name = "dpscale", version, about = "Differentially private SGD experiments and privacy accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, e.g. `--set optimizer.batch_size=512`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config, &self.overrides)?;
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and report accuracy and (ε, δ).
    Train(ConfigArgs),
    /// Privacy accounting queries.
    #[command(subcommand)]
    Accountant(AccountantCmd),
    /// Choose a clip norm and learning rate by the four-step procedure.
    Tune(ConfigArgs),
    /// Best accuracy per epoch count at a fixed privacy budget.
    FixedEpsSweep(ConfigArgs),
    /// Pretrain on a public split, then privately fine-tune with frozen layers.
    Finetune(ConfigArgs),
    /// Time non-private, fast-clipping and naive-clipping epochs.
    Bench(BenchArgs),
    /// Print an example config.
    ExampleConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConversionArg {
    Classic,
    Improved,
}

#[derive(Args)]
struct AccountingArgs {
    /// Sampling rate.
    #[arg(long)]
    q: f64,
    #[arg(long)]
    steps: u64,
    #[arg(long, value_enum, default_value = "improved")]
    conversion: ConversionArg,
}

impl AccountingArgs {
    fn options(&self) -> AccountantOptions {
        AccountantOptions {
            conversion: match self.conversion {
                ConversionArg::Classic => Conversion::Classic,
                ConversionArg::Improved => Conversion::Improved,
            },
            ..AccountantOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum AccountantCmd {
    /// ε for a noise multiplier.
    Epsilon {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        acct: AccountingArgs,
    },
    /// Noise multiplier for a target ε.
    Sigma {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        acct: AccountingArgs,
    },
    /// CSV of ε over a log-spaced δ grid.
    DeltaCurve {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-10)]
        delta_min: f64,
        #[arg(long, default_value_t = 1e-2)]
        delta_max: f64,
        #[arg(long, default_value_t = 17)]
        points: usize,
        #[command(flatten)]
        acct: AccountingArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CSV of ε over batch sizes with noise proportional to batch size and fixed steps.
    BatchCurve {
        /// Noise multiplier at the base batch size.
        #[arg(long)]
        base_sigma: f64,
        #[arg(long)]
        base_batch: usize,
        /// Dataset size.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        batches: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config; the reference MLP benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    warmup_epochs: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn csv_sink(out: &Option<PathBuf>) -> Result<Box<dyn std::io::Write>> {
    Ok(match out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn accountant(cmd: AccountantCmd) -> Result<()> {
    match cmd {
        AccountantCmd::Epsilon { sigma, delta, acct } => {
            print_json(&privacy_report(sigma, acct.q, acct.steps, delta, &acct.options())?)
        }
        AccountantCmd::Sigma { epsilon, delta, acct } => {
            let opts = acct.options();
            let sigma = find_noise_multiplier_with(epsilon, acct.q, acct.steps, delta, &opts)?;
            print_json(&privacy_report(sigma, acct.q, acct.steps, delta, &opts)?)
        }
        AccountantCmd::DeltaCurve {
            sigma,
            delta_min,
            delta_max,
            points,
            acct,
            out,
        } => {
            let deltas = log_grid(delta_min, delta_max, points)?;
            let rows = epsilon_curve_with(sigma, acct.q, acct.steps, &deltas, &acct.options())?;
            write_delta_curve(csv_sink(&out)?, &rows)
        }
        AccountantCmd::BatchCurve {
            base_sigma,
            base_batch,
            n,
            steps,
            delta,
            batches,
            out,
        } => {
            let rows = batch_scaling_curve(base_sigma, base_batch, n, steps, delta, &batches)?;
            write_batch_curve(csv_sink(&out)?, &rows)
        }
    }
}

fn summary(record: &dpscale::RunRecord) -> serde_json::Value {
    serde_json::json!({
        "name": record.name,
        "test_accuracy": record.final_test_accuracy,
        "steps": record.steps,
        "privacy": record.privacy,
        "sampling_mismatch": record.sampling_mismatch,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => print_json(&summary(&cmd_train(&a.load()?)?)),
        Command::Accountant(cmd) => accountant(cmd),
        Command::Tune(a) => {
            let r = cmd_tune(&a.load()?)?;
            print_json(&serde_json::json!({
                "reference_lr": r.reference_lr,
                "chosen_clip": r.chosen_clip,
                "chosen_lr": r.chosen_lr,
                "sigma": r.sigma,
                "best": r.best,
            }))
        }
        Command::FixedEpsSweep(a) => {
            for row in cmd_fixed_eps_sweep(&a.load()?)? {
                print_json(&serde_json::json!({
                    "epochs": row.epochs,
                    "sigma": row.sigma,
                    "epsilon": row.epsilon,
                    "best_lr": row.best_lr,
                    "best_accuracy": row.best_accuracy,
                }))?;
            }
            Ok(())
        }
        Command::Finetune(a) => {
            let r = cmd_finetune(&a.load()?)?;
            print_json(&serde_json::json!({
                "pretrain": summary(&r.pretrain),
                "finetune": summary(&r.finetune),
                "scratch": r.scratch.as_ref().map(summary),
                "frozen_unchanged": r.frozen_unchanged,
            }))
        }
        Command::Bench(a) => {
            let mut cfg = match &a.config {
                Some(p) => ExperimentConfig::load(p, &a.overrides)?,
                None => {
                    let v = serde_json::to_value(reference_bench_config())?;
                    ExperimentConfig::from_value(v, &a.overrides)?
                }
            };
            if a.out.is_some() {
                cfg.output_dir = a.out.clone();
            }
            let opts = BenchOptions {
                warmup_epochs: a.warmup_epochs,
                epochs: a.epochs,
                batch_sizes: a.batch_sizes,
            };
            print_json(&cmd_bench(&cfg, &opts)?)
        }
        Command::ExampleConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::example())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err: &Error = &e;
            eprintln!("{}", serde_json::json!({ "error": err.kind(), "message": err.to_string() }));
            ExitCode::FAILURE
        }
    }
}
