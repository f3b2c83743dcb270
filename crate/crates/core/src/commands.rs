//! Fully resolved pipeline commands.
//!
//! A [`Command`] carries every setting a run depends on, with input paths
//! made absolute. [`run_command`] executes it into a fresh output directory
//! and writes a [`RunManifest`] whose `config` field is the command itself,
//! so [`rerun`] can replay any run from its manifest alone.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_header, Checkpoint};
use crate::data::{
    generate_synthetic, read_events, read_labels, tokenize, write_events, write_labels, Split,
    SynthSpec, TokenizeConfig, TokenizedDataset,
};
use crate::error::{Error, Result};
use crate::experiments::{
    dump_embeddings, evaluate_split, run_experiment, score_split, train_arm, ArmHooks,
    ExperimentResult, ExperimentSpec, OutputOptions,
};
use crate::manifest::{hash_tree, RunManifest};
use crate::metrics::{EvalConfig, EvalReport};
use crate::model::ModelConfig;
use crate::real::{Precision, Real};
use crate::training::{grad_check, TrainConfig};

/// File name of the checkpoint inside a `train` output directory.
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Synth {
        seed: u64,
        spec: SynthSpec,
    },
    Tokenize {
        events: PathBuf,
        labels: PathBuf,
        config: TokenizeConfig,
    },
    Train {
        data: PathBuf,
        model: ModelConfig,
        train: TrainConfig,
    },
    Evaluate {
        checkpoint: PathBuf,
        data: PathBuf,
        split: Split,
        eval: EvalConfig,
    },
    Gradcheck {
        seed: u64,
        tolerance: f64,
        model: ModelConfig,
    },
    Experiment {
        spec: Box<ExperimentSpec>,
    },
    DumpEmbeddings {
        checkpoint: PathBuf,
        data: PathBuf,
        split: Split,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Tokenize { .. } => "tokenize",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Experiment { spec } => spec.kind.as_str(),
            Command::DumpEmbeddings { .. } => "dump-embeddings",
        }
    }

    /// The seed recorded in the manifest.
    pub fn seed(&self) -> u64 {
        match self {
            Command::Synth { seed, .. } | Command::Gradcheck { seed, .. } => *seed,
            Command::Tokenize { config, .. } => config.split.seed,
            Command::Train { train, .. } => train.seed,
            Command::Evaluate { eval, .. } => eval.seed,
            Command::Experiment { spec } => spec.seeds[0],
            Command::DumpEmbeddings { .. } => 0,
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Synth { .. } | Command::Gradcheck { .. } => Vec::new(),
            Command::Tokenize { events, labels, .. } => vec![events.clone(), labels.clone()],
            Command::Train { data, .. } => vec![data.clone()],
            Command::Evaluate {
                checkpoint, data, ..
            }
            | Command::DumpEmbeddings {
                checkpoint, data, ..
            } => vec![checkpoint.clone(), data.clone()],
            Command::Experiment { spec } => spec
                .data
                .iter()
                .chain(spec.datasets.values())
                .filter_map(|d| d.dir.clone())
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("command serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<command>"),
            message: e.to_string(),
        })
    }
}

/// Process-level settings that are not part of the command itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    /// Full argument vector, recorded verbatim.
    pub argv: Vec<String>,
    pub threads: usize,
    pub precision: Precision,
}

impl RunContext {
    /// Single-threaded runs are the deterministic mode: they also leave
    /// measured wall time out of the traces.
    pub fn deterministic(&self) -> bool {
        self.threads <= 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub manifest: RunManifest,
    /// Human-readable one-line result.
    pub summary: String,
    /// False when the command ran to completion but its check failed
    /// (for example a gradient check above tolerance).
    pub success: bool,
}

/// Runs `cmd` into `out`, which must not exist yet (an empty directory is
/// accepted). Outputs are staged in a sibling directory and moved into
/// place only on success; nothing is left behind on failure.
pub fn run_command(cmd: &Command, ctx: &RunContext, out: &Path) -> Result<RunOutcome> {
    if out.exists() {
        let empty = out.is_dir()
            && std::fs::read_dir(out)
                .map_err(|e| Error::io(out, e))?
                .next()
                .is_none();
        if !empty {
            return Err(Error::Config(format!(
                "output path {} already exists",
                out.display()
            )));
        }
    }
    if let Command::Experiment { spec } = cmd {
        spec.validate()?;
    }
    let mut manifest = RunManifest::new(ctx.argv.clone(), cmd.seed(), ctx.threads, ctx.precision)
        .with_config(cmd)?;
    for input in cmd.inputs() {
        manifest.add_input(&input)?;
    }

    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let stage = tempfile::Builder::new()
        .prefix(".medfuse-partial-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;

    let started = Instant::now();
    let (summary, success) = match ctx.precision {
        Precision::F64 => execute::<f64>(cmd, ctx, stage.path())?,
        Precision::F32 => execute::<f32>(cmd, ctx, stage.path())?,
    };
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    manifest.record_outputs(stage.path())?;
    manifest.save(stage.path())?;

    if out.exists() {
        std::fs::remove_dir(out).map_err(|e| Error::io(out, e))?;
    }
    let staged = stage.keep();
    std::fs::rename(&staged, out).map_err(|e| {
        let _ = std::fs::remove_dir_all(&staged);
        Error::io(out, e)
    })?;
    Ok(RunOutcome {
        out: out.to_path_buf(),
        manifest,
        summary,
        success,
    })
}

fn execute<T: Real>(cmd: &Command, ctx: &RunContext, out: &Path) -> Result<(String, bool)> {
    let opts = OutputOptions {
        wall_time: !ctx.deterministic(),
    };
    match cmd {
        Command::Synth { seed, spec } => {
            let cohort = generate_synthetic(spec, *seed)?;
            write_events(&out.join("events.csv"), &cohort.events)?;
            write_labels(&out.join("labels.csv"), &cohort.labels)?;
            let pos = cohort.labels.iter().filter(|l| l.label == 1).count();
            Ok((
                format!(
                    "{} entities, {} events, prevalence {:.3}",
                    cohort.labels.len(),
                    cohort.events.len(),
                    pos as f64 / cohort.labels.len().max(1) as f64
                ),
                true,
            ))
        }
        Command::Tokenize {
            events,
            labels,
            config,
        } => {
            let ds = tokenize(&read_events(events)?, &read_labels(labels)?, config)?;
            ds.save(out)?;
            Ok((
                format!(
                    "{} entities ({} train / {} val / {} test), {} features, missing rate {:.3}",
                    ds.entries.len(),
                    ds.count(Split::Train),
                    ds.count(Split::Val),
                    ds.count(Split::Test),
                    ds.schema.len(),
                    ds.missing_rate()
                ),
                true,
            ))
        }
        Command::Train { data, model, train } => {
            let ds = TokenizedDataset::load(data)?;
            let run = train_arm::<T>(&ds, model, train, train.seed, ArmHooks::default())?;
            run.trace
                .write_csv(&out.join("trace.csv"), opts.wall_time)?;
            if let Some(e) = run.trace.failure() {
                return Err(e);
            }
            run.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
            Ok((
                format!(
                    "best epoch {} of {}, validation AUPRC {:.4}",
                    run.trace.best_epoch,
                    run.trace.epochs.len(),
                    run.trace.best_val_auprc
                ),
                true,
            ))
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            eval,
        } => {
            let ckpt = Checkpoint::<T>::load(checkpoint)?;
            let ds = TokenizedDataset::load(data)?;
            let rows = score_split(&ckpt, &ds, *split)?;
            let report = crate::experiments::report_from_scores(&rows, eval)?;
            write_report(&out.join("report.csv"), &report)?;
            let header = ["entity_id", "label", "event_time", "score"].map(String::from);
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.entity_id.clone(),
                        r.label.to_string(),
                        r.event_time.map(|t| t.to_string()).unwrap_or_default(),
                        r.score.to_string(),
                    ]
                })
                .collect();
            crate::experiments::write_csv(&out.join("scores.csv"), &header, &cells)?;
            Ok((
                format!(
                    "AUPRC {:.4} [{:.4}, {:.4}], AUROC {:.4} on {} entities",
                    report.auprc.point,
                    report.auprc.ci_low,
                    report.auprc.ci_high,
                    report.auroc.point,
                    report.n
                ),
                true,
            ))
        }
        Command::Gradcheck {
            seed,
            tolerance,
            model,
        } => {
            let report = grad_check(model, *tolerance, *seed)?;
            let header = [
                "tensor",
                "entries",
                "max_rel_error",
                "max_abs_analytic",
                "passed",
            ]
            .map(String::from);
            let rows: Vec<Vec<String>> = report
                .tensors
                .iter()
                .map(|t| {
                    vec![
                        t.name.clone(),
                        t.entries.to_string(),
                        t.max_rel_error.to_string(),
                        t.max_abs_analytic.to_string(),
                        t.passed.to_string(),
                    ]
                })
                .collect();
            crate::experiments::write_csv(&out.join("gradcheck.csv"), &header, &rows)?;
            let summary = if report.passed() {
                format!(
                    "all tensors within {tolerance:e} (max {:.2e})",
                    report.max_rel_error()
                )
            } else {
                format!("tensors above {tolerance:e}: {:?}", report.failing())
            };
            Ok((summary, report.passed()))
        }
        Command::Experiment { spec } => {
            let summary = match run_experiment::<T>(spec, out, opts)? {
                ExperimentResult::Ablation(r) => format!(
                    "{} arms, fingerprints {}",
                    r.arms.len(),
                    if r.fingerprints_match() {
                        "match"
                    } else {
                        "DIFFER"
                    }
                ),
                ExperimentResult::Ksweep(r) => {
                    format!("{} arms over k = {:?}", r.arms.len(), r.k_values())
                }
                ExperimentResult::Transfer(r) => format!("{} arms", r.arms.len()),
                ExperimentResult::Timefusion(r) => format!(
                    "{} arms, closed-form checks {}",
                    r.arms.len(),
                    if r.checks.iter().all(|c| c.passed()) {
                        "pass"
                    } else {
                        "FAIL"
                    }
                ),
            };
            Ok((summary, true))
        }
        Command::DumpEmbeddings {
            checkpoint,
            data,
            split,
            limit,
        } => {
            let ckpt = Checkpoint::<T>::load(checkpoint)?;
            let ds = TokenizedDataset::load(data)?;
            let n = dump_embeddings(&ckpt, &ds, *split, *limit, &out.join("embeddings.csv"))?;
            Ok((format!("{n} rows"), true))
        }
    }
}

/// `metric,point,ci_low,ci_high` plus sample-size rows.
pub fn write_report(path: &Path, r: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("metric,point,ci_low,ci_high\n");
    for (name, m) in r.metrics() {
        match m {
            Some(m) => text.push_str(&format!("{name},{},{},{}\n", m.point, m.ci_low, m.ci_high)),
            None => text.push_str(&format!("{name},,,\n")),
        }
    }
    text.push_str(&format!(
        "n,{n},,\nn_positive,{p},,\nn_bootstrap,{b},,\nthreshold,{t},,\nredraws,{rd},,\n",
        n = r.n,
        p = r.n_positive,
        b = r.n_bootstrap,
        t = r.threshold,
        rd = r.redraws
    ));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Evaluates a checkpoint on one split without writing anything.
pub fn evaluate_checkpoint<T: Real>(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    eval: &EvalConfig,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::<T>::load(checkpoint)?;
    evaluate_split(&ckpt, &TokenizedDataset::load(data)?, split, eval)
}

/// Precision a checkpoint was stored in.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    Ok(read_header(path)?.precision)
}

/// Replays the run recorded in `manifest` into `out` with the recorded
/// thread count and precision. Inputs must still hash as recorded.
pub fn rerun(manifest: &Path, out: &Path) -> Result<RunOutcome> {
    let m = RunManifest::load(manifest)?;
    let cmd = Command::from_toml(&m.config)?;
    for (path, hash) in &m.inputs {
        let now = hash_tree(Path::new(path))?;
        if now.len() != 1 || &now[0].1 != hash {
            return Err(Error::Config(format!(
                "input {path} changed since the recorded run"
            )));
        }
    }
    let ctx = RunContext {
        argv: m.command.clone(),
        threads: m.threads,
        precision: m.precision,
    };
    run_command(&cmd, &ctx, out)
}

/// Output files whose hash differs from (or is missing in) `recorded`.
pub fn output_mismatches(recorded: &RunManifest, replayed: &RunManifest) -> Vec<String> {
    let mut bad: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|(k, v)| replayed.outputs.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(
        replayed
            .outputs
            .keys()
            .filter(|k| !recorded.outputs.contains_key(*k))
            .cloned(),
    );
    bad
}
