use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use synthphys::commands::{cmd_baseline, cmd_eval, cmd_gen, cmd_train};
use synthphys::evaluate::Algorithm;
use synthphys::report::cmd_report;
use synthphys::sweep::{cmd_sweep_count, cmd_sweep_skintone};
use synthphys::{ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(name = "synthphys", version, about = "Synthetic avatar data for camera physiological sensing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides both the dataset and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, env = "SYNTHPHYS_WORKERS")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Green,
    Chrom,
    Pos,
    Motion,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Green => Algorithm::Green,
            AlgorithmArg::Chrom => Algorithm::Chrom,
            AlgorithmArg::Pos => Algorithm::Pos,
            AlgorithmArg::Motion => Algorithm::Motion,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the avatar dataset.
    Gen,
    /// Train the network on a generated dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run a classical baseline.
    Baseline {
        #[arg(long, value_enum)]
        algorithm: AlgorithmArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Sweep the number of training avatars.
    SweepCount,
    /// Train on light and dark halves of the tone range.
    SweepSkintone,
    /// Rebuild charts and the summary from saved results.
    Report,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    let workers = match cli.workers {
        Some(0) => return Err(HarnessError::Config("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    match cli.command {
        Command::Gen => {
            let m = cmd_gen(&cfg, workers)?;
            println!("wrote {} clips to {}", m.entries.len(), cfg.output_dir.join("dataset").display());
        }
        Command::Train { dataset } => {
            let t = cmd_train(&cfg, workers, dataset.as_deref())?;
            let h = &t.meta.loss_history;
            if let (Some(first), Some(last)) = (h.first(), h.last()) {
                println!("loss {first:.4} -> {last:.4} over {} epochs", h.len());
            }
            println!("checkpoint in {}", t.dir.display());
        }
        Command::Eval { checkpoint, dataset } => {
            let s = cmd_eval(&cfg, workers, checkpoint.as_deref(), dataset.as_deref())?;
            print_summary(&serde_json::to_value(&s).unwrap_or_default());
        }
        Command::Baseline { algorithm, dataset } => {
            let s = cmd_baseline(&cfg, workers, algorithm.into(), dataset.as_deref())?;
            print_summary(&serde_json::to_value(&s).unwrap_or_default());
        }
        Command::SweepCount => {
            let r = cmd_sweep_count(&cfg, workers)?;
            println!("{} cells written", r.rows.len());
        }
        Command::SweepSkintone => {
            let r = cmd_sweep_skintone(&cfg, workers)?;
            print!("{}", r.per_bin_csv);
        }
        Command::Report => {
            let p = cmd_report(&cfg)?;
            println!("report at {}", p.display());
        }
    }
    Ok(())
}

fn print_summary(v: &serde_json::Value) {
    for signal in ["pulse", "breathing"] {
        let a = &v[signal];
        if a.is_object() {
            println!(
                "{signal}: MAE {} bpm, SNR {} dB, r {}, {} windows",
                a["mae_bpm"], a["mean_snr_db"], a["pearson_r"], a["count"]
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
