use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use devis_core::commands;
use devis_core::config::ExperimentConfig;
use devis_core::{DevisError, Result};

#[derive(Parser, Debug)]
#[command(name = "devis", version, about = "Accumulative extreme-view video synthesis lab")]
struct Cli {
    /// Experiment configuration (JSON); defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; `output_dir` from the config when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the evaluation dataset.
    Synth,
    /// Run accumulation on one dataset query.
    Adevis {
        #[arg(long, default_value_t = 0)]
        query: u64,
        /// rfa, rva, ora_dt, ora_cc or bta; config strategy when omitted.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the policy, resuming from the latest checkpoint.
    Train,
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare strategies on the evaluation scenes.
    Compare {
        /// Comma-separated strategy names; all five when omitted.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the default configuration as JSON.
    PrintDefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(DevisError::Config(format!("config file {} not found", p.display()))),
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::PrintDefaultConfig = cli.command {
        println!("{}", commands::default_config_json());
        return Ok(());
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(DevisError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| DevisError::Usage(e.to_string()))?;
    }
    let cfg = load_config(&cli)?;
    // kept out of the config so runs in different directories hash the same
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    match &cli.command {
        Command::Synth => {
            let dirs = commands::cmd_synth(&cfg, &out)?;
            println!("wrote {} queries under {}", dirs.len(), out.join(commands::DATASET_DIR).display());
        }
        Command::Adevis { query, strategy, steps, checkpoint } => {
            let dir = commands::cmd_adevis(&cfg, &out, *query, strategy.as_deref(), *steps, checkpoint.as_deref())?;
            println!("wrote {}", dir.display());
        }
        Command::Train => {
            let state = commands::cmd_train(&cfg, &out)?;
            let first = state.round_reward(1).unwrap_or(f64::NAN);
            let last = state.round_reward(state.round).unwrap_or(f64::NAN);
            println!("trained {} rounds; mean reward {first:.5} -> {last:.5}", state.round);
        }
        Command::Eval { checkpoint, dataset } => {
            let dataset = dataset.clone().unwrap_or_else(|| out.join(commands::DATASET_DIR));
            let (_, agg) = commands::cmd_eval(&cfg, &out, checkpoint.as_deref(), Path::new(&dataset))?;
            println!("{}", serde_json::to_string_pretty(&agg)?);
        }
        Command::Compare { strategies, steps, checkpoint } => {
            let summary = commands::cmd_compare(&cfg, &out, strategies, *steps, checkpoint.as_deref())?;
            for s in summary {
                let nocc = s.mean_psnr_nocc.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                println!("{:8} psnr {:.3} ssim {:.4} lpips {:.4} psnr_nocc {nocc}", s.strategy, s.mean_psnr, s.mean_ssim, s.mean_lpips);
            }
        }
        Command::PrintDefaultConfig => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEVIS_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
