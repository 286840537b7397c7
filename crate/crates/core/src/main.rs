use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dann::gradcheck::Fault;
use dann::harness::{self, ExperimentConfig, Split};
use dann::optim::Mode;
use dann::Error;

#[derive(Parser)]
#[command(name = "dann", version, about = "Domain-adversarial training on raw 1-D signals")]
struct Cli {
    /// Overrides the seed of every command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Dann,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Conv,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a two-domain corpus.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a baseline or DANN model.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-domain label accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "eval")]
        split: SplitArg,
        /// Where to write the report; defaults to eval_<split>.txt next to
        /// the checkpoint.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Baseline vs DANN accuracy table.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        dann: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let summary = harness::cmd_generate(&cfg, &out)?;
            print!("{summary}");
        }
        Command::Train {
            config,
            corpus,
            mode,
            out,
        } => {
            let mut cfg = load_config(config.as_ref(), cli.seed)?;
            cfg.mode = match mode {
                ModeArg::Baseline => Mode::Baseline,
                ModeArg::Dann => Mode::Dann,
            };
            let summary = harness::cmd_train(&cfg, &corpus, &out)?;
            println!("checkpoint {}", summary.checkpoint.display());
            println!("metrics {}", summary.metrics.display());
            if let Some(m) = summary.last {
                println!("final_label_loss {}", m.label_loss);
                println!("final_source_train_acc {}", m.source_train_acc);
            }
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            report,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Eval => Split::Eval,
            };
            let report = report.unwrap_or_else(|| {
                let name = format!("eval_{}.txt", if split == Split::Train { "train" } else { "eval" });
                checkpoint.with_file_name(name)
            });
            let result = harness::cmd_eval(&checkpoint, &corpus, split, Some(&report))?;
            print!("{result}");
        }
        Command::Gradcheck { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::Conv| Fault::ConvBackward);
            let report = harness::cmd_gradcheck(cli.seed.unwrap_or(0), fault)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Compare {
            baseline,
            dann,
            corpus,
        } => {
            let report = harness::cmd_compare(&baseline, &dann, &corpus)?;
            print!("{report}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
