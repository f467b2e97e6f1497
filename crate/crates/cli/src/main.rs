use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msam_cli::{
    cmd_analyze, cmd_eval, cmd_spans, cmd_synth, cmd_train, configure_threads, exit_code, CorpusSection, EvalSplit,
    Overrides, RunConfig, RUN_CONFIG_FILE,
};
use msam_core::Result;

/// Multi-span raw-waveform acoustic model toolkit.
///
/// Exit status: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
/// MSAM_THREADS caps the worker pool.
#[derive(Parser)]
#[command(name = "msam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct CorpusArgs {
    /// Corpus manifest (tab-separated wav path, label path, meeting id).
    #[arg(long, value_name = "PATH", conflicts_with = "synth")]
    corpus: Option<PathBuf>,
    /// Synthetic corpus spec, e.g. `classes=3,utterances=15,duration=4,snr=20,seed=1`.
    #[arg(long, value_name = "SPEC")]
    synth: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log and resolved config.
    Train {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Model spec such as `M_4,9,15^50,50,50`, `I_15^50` or `F_160^400`.
        #[arg(long, value_name = "SPEC")]
        model: Option<String>,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        #[arg(long, value_name = "N")]
        epochs: Option<usize>,
    },
    /// Frame accuracy and cross-entropy of a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Run config supplying the corpus; defaults to run.toml beside the checkpoint.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// all, train or cv.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Export kernel spectra and effective lengths as CSV.
    Analyze {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write a synthetic corpus to disk.
    Synth {
        #[arg(long, value_name = "SPEC", default_value = "")]
        synth: String,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the input span of each stream of a model spec.
    Spans {
        #[arg(long, value_name = "SPEC")]
        model: Option<String>,
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(std::env::var("MSAM_THREADS").ok().as_deref())?;
    match cli.command {
        Command::Train {
            config,
            model,
            corpus,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.apply(&Overrides {
                model,
                corpus: corpus.corpus,
                synth: corpus.synth,
                out,
                seed,
                epochs,
            });
            let outcome = cmd_train(&cfg, io::stdout().lock())?;
            eprintln!("checkpoint: {}", outcome.checkpoint.display());
            eprintln!("log: {}", outcome.log.display());
        }
        Command::Eval {
            checkpoint,
            config,
            corpus,
            split,
        } => {
            let split: EvalSplit = split.parse()?;
            let config = config.or_else(|| {
                let beside = checkpoint.parent()?.join(RUN_CONFIG_FILE);
                beside.exists().then_some(beside)
            });
            let mut cfg = load_config(config.as_ref())?;
            cfg.apply(&Overrides {
                corpus: corpus.corpus,
                synth: corpus.synth,
                ..Overrides::default()
            });
            let section: CorpusSection = cfg.corpus;
            cmd_eval(&checkpoint, &section, split, io::stdout().lock())?;
        }
        Command::Analyze { checkpoint, out } => {
            for path in cmd_analyze(&checkpoint, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Synth { synth, out } => {
            println!("{}", cmd_synth(&synth, &out)?.display());
        }
        Command::Spans { model, config } => {
            let mut cfg = load_config(config.as_ref())?;
            cfg.apply(&Overrides {
                model,
                ..Overrides::default()
            });
            print!("{}", cmd_spans(&cfg.model)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
