//! `medfuse` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use medfuse_core::checkpoint::read_header;
use medfuse_core::commands::{
    output_mismatches, rerun, run_command, Command, RunContext, RunOutcome, CHECKPOINT_FILE,
};
use medfuse_core::data::{Split, SplitConfig, SummarizationConfig, SynthSpec, TokenizeConfig};
use medfuse_core::experiments::{ExperimentKind, ExperimentSpec};
use medfuse_core::manifest::RunManifest;
use medfuse_core::metrics::EvalConfig;
use medfuse_core::model::ModelConfig;
use medfuse_core::training::TrainConfig;
use medfuse_core::{Error, Precision};

const OUT_ROOT_ENV: &str = "MEDFUSE_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(
    name = "medfuse",
    version,
    about = "Multiplicative embedding fusion for irregular time series"
)]
struct Cli {
    /// Seed for the command (overrides any seed in the config or spec).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the deterministic mode.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Floating-point width.
    #[arg(long, global = true, value_enum)]
    precision: Option<Bits>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Bits {
    #[value(name = "32")]
    B32,
    #[value(name = "64")]
    B64,
}

impl From<Bits> for Precision {
    fn from(b: Bits) -> Self {
        match b {
            Bits::B32 => Precision::F32,
            Bits::B64 => Precision::F64,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output directory (default: a fresh directory under $MEDFUSE_OUT_ROOT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic cohort (events.csv, labels.csv).
    Synth {
        /// Cohort description (TOML).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Summarize raw events into a tokenized dataset.
    Tokenize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Config file; uses its [summarization] and [split] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train a classifier on a tokenized dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Config file; uses its [model] and [train] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Score a split with a checkpoint and report metrics with bootstrap CIs.
    Evaluate {
        /// Checkpoint file or `train` output directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Config file; uses its [eval] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Compare analytic and finite-difference gradients on a toy model.
    Gradcheck {
        /// Config file; uses its [model] section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Fusion-kind ablation.
    Ablate(ExperimentArgs),
    /// Partition-factor sweep.
    Ksweep(ExperimentArgs),
    /// Cross-dataset feature-embedding transfer.
    Transfer(ExperimentArgs),
    /// Additive vs multiplicative time injection.
    Timefusion(ExperimentArgs),
    /// Write per-token embeddings before and after the first encoder layer.
    DumpEmbeddings {
        /// Checkpoint file or `train` output directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// At most this many entities.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Replay a run from its manifest and compare outputs.
    Rerun {
        /// manifest.toml or the directory holding it.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

/// Sections of a pipeline config file. Every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    model: ModelConfig,
    train: TrainConfig,
    eval: EvalConfig,
    summarization: SummarizationConfig,
    split: SplitConfig,
}

fn read_toml<C: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<C, Error> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn absolute(path: &Path) -> Result<PathBuf, Error> {
    path.canonicalize().map_err(|e| Error::io(path, e))
}

fn checkpoint_path(p: &Path) -> Result<PathBuf, Error> {
    let p = absolute(p)?;
    Ok(if p.is_dir() {
        p.join(CHECKPOINT_FILE)
    } else {
        p
    })
}

fn out_dir(arg: &OutArg, command: &str) -> PathBuf {
    if let Some(p) = &arg.out {
        return p.clone();
    }
    let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    root.join(format!("{command}-{stamp}"))
}

fn experiment(
    args: &ExperimentArgs,
    kind: ExperimentKind,
    seed: Option<u64>,
) -> Result<(Command, &OutArg), Error> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    if spec.kind != kind {
        return Err(Error::Config(format!(
            "{} is a {} spec, not {}",
            args.spec.display(),
            spec.kind.as_str(),
            kind.as_str()
        )));
    }
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    Ok((
        Command::Experiment {
            spec: Box::new(spec),
        },
        &args.out,
    ))
}

/// Turns parsed arguments into a resolved command, its output directory
/// and the precision to run it in.
fn resolve(cli: &Cli) -> Result<(Command, PathBuf, Precision), Error> {
    let flag = cli.precision.map(Precision::from);
    let default = flag.unwrap_or(Precision::F64);
    let (cmd, out, precision) = match &cli.command {
        Cmd::Synth { spec, out } => {
            let spec: SynthSpec = read_toml(spec.as_deref())?;
            let cmd = Command::Synth {
                seed: cli.seed.unwrap_or(0),
                spec,
            };
            (cmd, out, default)
        }
        Cmd::Tokenize {
            events,
            labels,
            config,
            out,
        } => {
            let fc: FileConfig = read_toml(config.as_deref())?;
            let mut split = fc.split;
            if let Some(s) = cli.seed {
                split.seed = s;
            }
            let cmd = Command::Tokenize {
                events: absolute(events)?,
                labels: absolute(labels)?,
                config: TokenizeConfig {
                    summarization: fc.summarization,
                    split,
                },
            };
            (cmd, out, default)
        }
        Cmd::Train { data, config, out } => {
            let fc: FileConfig = read_toml(config.as_deref())?;
            let mut train = fc.train;
            if let Some(s) = cli.seed {
                train.seed = s;
            }
            train.precision = flag.unwrap_or(train.precision);
            let precision = train.precision;
            let cmd = Command::Train {
                data: absolute(data)?,
                model: fc.model,
                train,
            };
            (cmd, out, precision)
        }
        Cmd::Evaluate {
            ckpt,
            data,
            split,
            config,
            out,
        } => {
            let fc: FileConfig = read_toml(config.as_deref())?;
            let mut eval = fc.eval;
            if let Some(s) = cli.seed {
                eval.seed = s;
            }
            let checkpoint = checkpoint_path(ckpt)?;
            let precision = match flag {
                Some(p) => p,
                None => read_header(&checkpoint)?.precision,
            };
            let cmd = Command::Evaluate {
                checkpoint,
                data: absolute(data)?,
                split: (*split).into(),
                eval,
            };
            (cmd, out, precision)
        }
        Cmd::Gradcheck {
            config,
            tolerance,
            out,
        } => {
            let fc: FileConfig = read_toml(config.as_deref())?;
            if flag == Some(Precision::F32) {
                log::warn!("gradient checks always run in 64-bit precision");
            }
            let cmd = Command::Gradcheck {
                seed: cli.seed.unwrap_or(0),
                tolerance: *tolerance,
                model: fc.model,
            };
            (cmd, out, Precision::F64)
        }
        Cmd::Ablate(a) => with(experiment(a, ExperimentKind::Ablation, cli.seed)?, default),
        Cmd::Ksweep(a) => with(experiment(a, ExperimentKind::Ksweep, cli.seed)?, default),
        Cmd::Transfer(a) => with(experiment(a, ExperimentKind::Transfer, cli.seed)?, default),
        Cmd::Timefusion(a) => with(
            experiment(a, ExperimentKind::Timefusion, cli.seed)?,
            default,
        ),
        Cmd::DumpEmbeddings {
            ckpt,
            data,
            split,
            limit,
            out,
        } => {
            let checkpoint = checkpoint_path(ckpt)?;
            let precision = match flag {
                Some(p) => p,
                None => read_header(&checkpoint)?.precision,
            };
            let cmd = Command::DumpEmbeddings {
                checkpoint,
                data: absolute(data)?,
                split: (*split).into(),
                limit: *limit,
            };
            (cmd, out, precision)
        }
        Cmd::Rerun { .. } => unreachable!("handled before resolve"),
    };
    let dir = out_dir(out, cmd.name());
    Ok((cmd, dir, precision))
}

fn with((cmd, out): (Command, &OutArg), p: Precision) -> (Command, &OutArg, Precision) {
    (cmd, out, p)
}

fn report(outcome: &RunOutcome) {
    println!("{}: {}", outcome.out.display(), outcome.summary);
}

fn run(cli: Cli, argv: Vec<String>) -> Result<bool, Error> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;

    if let Cmd::Rerun { manifest, out } = &cli.command {
        let recorded = RunManifest::load(manifest)?;
        let dir = out_dir(out, "rerun");
        let outcome = rerun(manifest, &dir)?;
        report(&outcome);
        let bad = output_mismatches(&recorded, &outcome.manifest);
        if bad.is_empty() {
            println!("all {} outputs byte-identical", recorded.outputs.len());
        } else {
            eprintln!("outputs differ from the recorded run: {}", bad.join(", "));
        }
        return Ok(outcome.success && bad.is_empty());
    }

    let (cmd, out, precision) = resolve(&cli)?;
    let ctx = RunContext {
        argv,
        threads: cli.threads,
        precision,
    };
    let outcome = run_command(&cmd, &ctx, &out)?;
    report(&outcome);
    Ok(outcome.success)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli, argv) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
