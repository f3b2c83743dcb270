//! Experiment harnesses: fusion ablation, partition-factor sweep, embedding
//! transfer, time-injection comparison and embedding dumps.
//!
//! Every harness reads an [`ExperimentSpec`], trains its arms with the same
//! seeds and configuration, and writes schema-stable CSV files whose rows are
//! sorted by key, so a re-run reproduces them byte for byte.

mod ablation;
mod dump;
mod ksweep;
mod timefusion;
mod transfer;

pub use ablation::{run_ablation, AblationResult};
pub use dump::dump_embeddings;
pub use ksweep::{check_k_values, k_config, run_ksweep, KsweepResult};
pub use timefusion::{run_timefusion, TimeFusionResult, TraceCheck};
pub use transfer::{
    export_embeddings, import_embeddings, run_transfer, BundleRow, EmbeddingBundle, TransferArm,
    TransferOutcome, TransferResult, TransferRow,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{
    generate_synthetic, tokenize, Split, SummarizationConfig, SynthSpec, TokenSequence,
    TokenizeConfig, TokenizedDataset,
};
use crate::embedding::{FusionKind, TimeInjection};
use crate::error::{Error, Result};
use crate::metrics::{EvalConfig, EvalReport, EvalSample};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::real::Real;
use crate::rng::Streams;
use crate::training::{train, FreezeSchedule, TrainConfig, TrainOptions, TrainTrace};

/// Where an experiment's data comes from: a tokenized directory or a
/// synthetic cohort generated and tokenized on the fly. A synthetic cohort
/// is binned with its own window and bin width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
    #[serde(default)]
    pub synth_seed: u64,
    #[serde(default)]
    pub tokenize: TokenizeConfig,
}

impl DataRef {
    pub fn synthetic(spec: SynthSpec, seed: u64) -> Self {
        DataRef {
            synthetic: Some(spec),
            synth_seed: seed,
            ..Default::default()
        }
    }

    pub fn load(&self) -> Result<TokenizedDataset> {
        match (&self.dir, &self.synthetic) {
            (Some(dir), None) => TokenizedDataset::load(dir),
            (None, Some(spec)) => {
                let cohort = generate_synthetic(spec, self.synth_seed)?;
                let cfg = TokenizeConfig {
                    summarization: SummarizationConfig {
                        window_length: spec.window_length,
                        bin_width: spec.bin_width,
                        horizon: spec.horizon,
                    },
                    ..self.tokenize
                };
                tokenize(&cohort.events, &cohort.labels, &cfg)
            }
            _ => Err(Error::Config(
                "a data reference needs exactly one of `dir` or `synthetic`".into(),
            )),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let Some(d) = &self.dir {
            if d.is_relative() {
                self.dir = Some(base.join(d));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Ablation,
    Ksweep,
    Transfer,
    Timefusion,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Ksweep => "ksweep",
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Timefusion => "timefusion",
        }
    }
}

/// Factor levels varied by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub fusion_kinds: Vec<FusionKind>,
    /// Empty means every divisor of `d`.
    pub k_values: Vec<usize>,
    pub injections: Vec<TimeInjection>,
    /// Number of time points in the time-fusion traces.
    pub trace_points: usize,
    pub trace_t_max: f64,
    pub trace_dims: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            fusion_kinds: vec![FusionKind::Mufuse, FusionKind::Additive, FusionKind::Concat],
            k_values: Vec::new(),
            injections: vec![TimeInjection::Add, TimeInjection::Multiply],
            trace_points: 241,
            trace_t_max: 48.0,
            trace_dims: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSpec {
    /// `[source, target]` pairs of dataset names.
    pub directions: Vec<[String; 2]>,
    pub freeze_epochs: usize,
    /// Source feature name → target feature name, for features whose names
    /// differ between schemas. Unlisted names match themselves.
    pub name_map: BTreeMap<String, String>,
    /// Adds an arm whose source model is trained on a target-sized
    /// subsample of the source training split.
    pub source_subsample: bool,
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec {
            directions: Vec::new(),
            freeze_epochs: 5,
            name_map: BTreeMap::new(),
            source_subsample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataRef>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub datasets: BTreeMap<String, DataRef>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub transfer: TransferSpec,
}

impl ExperimentSpec {
    /// Parses a spec file; relative data directories resolve against the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
        if let Some(d) = spec.data.as_mut() {
            d.resolve(&base);
        }
        for d in spec.datasets.values_mut() {
            d.resolve(&base);
        }
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<spec>"),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        self.train.validate()?;
        self.model.validate()?;
        if self.kind == ExperimentKind::Ksweep {
            ksweep::check_k_values(self.model.fusion.d, &self.grid.k_values)?;
        }
        let needs_data = self.kind != ExperimentKind::Transfer;
        if needs_data && self.data.is_none() {
            return Err(Error::Config(format!(
                "{} experiments need a [data] section",
                self.kind.as_str()
            )));
        }
        Ok(())
    }

    fn data(&self) -> Result<&DataRef> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::Config("missing [data] section".into()))
    }
}

/// Fingerprints that must agree across arms of one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fingerprints {
    /// Initial values of the tensors every arm shares.
    pub shared_init: String,
    pub shuffle: String,
    pub dropout: String,
}

impl Fingerprints {
    fn new<T: Real>(init: &ModelParams<T>, seed: u64) -> Self {
        let s = Streams::new(seed);
        Fingerprints {
            shared_init: init.shared_fingerprint()[..16].to_owned(),
            shuffle: s.fingerprint("shuffle"),
            dropout: s.fingerprint("dropout"),
        }
    }
}

/// One trained arm.
pub struct ArmRun<T> {
    pub checkpoint: Checkpoint<T>,
    pub trace: TrainTrace,
    pub fingerprints: Fingerprints,
}

/// Hooks into one training run.
#[derive(Default)]
pub struct ArmHooks<'a, T> {
    pub init: Option<ModelParams<T>>,
    pub freeze: FreezeSchedule,
    pub on_epoch: Option<crate::training::EpochHook<'a, T>>,
}

/// Trains one model on the train split with early stopping on the
/// validation split. `seed` drives initialization, shuffling and dropout;
/// this is also what the `train` command runs.
pub fn train_arm<T: Real>(
    ds: &TokenizedDataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    hooks: ArmHooks<'_, T>,
) -> Result<ArmRun<T>> {
    let categories = ds.schema.category_counts();
    let params = match hooks.init {
        Some(p) => p,
        None => ModelParams::init(model_cfg, &categories, seed)?,
    };
    let fingerprints = Fingerprints::new(&params, seed);
    let model = Model::new(*model_cfg, params)?;
    let tr = ds.split(Split::Train);
    let va = ds.split(Split::Val);
    let trr: Vec<&TokenSequence> = tr.iter().collect();
    let var: Vec<&TokenSequence> = va.iter().collect();
    let cfg = TrainConfig {
        seed,
        precision: T::PRECISION,
        ..*train_cfg
    };
    let opts = TrainOptions {
        freeze: hooks.freeze,
        on_epoch: hooks.on_epoch,
    };
    let out = train(model, &trr, &var, &cfg, opts)?;
    Ok(ArmRun {
        checkpoint: Checkpoint::new(out.model, &ds.schema),
        trace: out.trace,
        fingerprints,
    })
}

/// Per-entity scores on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub entity_id: String,
    pub label: u8,
    pub event_time: Option<f64>,
    pub score: f64,
}

pub fn score_split<T: Real>(
    ckpt: &Checkpoint<T>,
    ds: &TokenizedDataset,
    split: Split,
) -> Result<Vec<Scored>> {
    ckpt.check_schema(&ds.schema)?;
    let seqs = ds.split(split);
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    let scores = ckpt.model.predict_scores(&refs)?;
    Ok(seqs
        .iter()
        .zip(scores)
        .map(|(s, p)| Scored {
            entity_id: s.entity_id.clone(),
            label: s.label,
            event_time: s.event_time,
            score: p.as_f64(),
        })
        .collect())
}

/// Evaluation report over scored rows; event times enter only when every
/// row has one.
pub fn report_from_scores(rows: &[Scored], cfg: &EvalConfig) -> Result<EvalReport> {
    let times: Option<Vec<f64>> = rows.iter().map(|r| r.event_time).collect();
    let sample = EvalSample::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.label).collect(),
        times,
    )?;
    EvalReport::compute(&sample, cfg)
}

pub fn evaluate_split<T: Real>(
    ckpt: &Checkpoint<T>,
    ds: &TokenizedDataset,
    split: Split,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    report_from_scores(&score_split(ckpt, ds, split)?, cfg)
}

/// Result of one arm as it appears in a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmOutcome {
    pub seed: u64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
    pub report: Option<EvalReport>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub fingerprints: Fingerprints,
    /// Hash of the returned parameters; empty when training failed.
    pub final_params: String,
}

impl ArmOutcome {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    fn from_run<T: Real>(
        run: Result<ArmRun<T>>,
        ds: &TokenizedDataset,
        eval: &EvalConfig,
        seed: u64,
        fallback: Fingerprints,
    ) -> (Self, Option<ArmRun<T>>) {
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                log::warn!("arm failed: {e}");
                return (
                    ArmOutcome {
                        seed,
                        status: format!("failed: {e}"),
                        report: None,
                        best_epoch: 0,
                        epochs_run: 0,
                        fingerprints: fallback,
                        final_params: String::new(),
                    },
                    None,
                );
            }
        };
        let (status, report) = match run.trace.failure() {
            Some(e) => (format!("failed: {e}"), None),
            None => match evaluate_split(&run.checkpoint, ds, Split::Test, eval) {
                Ok(r) => ("ok".to_owned(), Some(r)),
                Err(e) => (format!("failed: {e}"), None),
            },
        };
        (
            ArmOutcome {
                seed,
                status,
                report,
                best_epoch: run.trace.best_epoch,
                epochs_run: run.trace.epochs.len(),
                fingerprints: run.fingerprints.clone(),
                final_params: run.checkpoint.model.params.fingerprint(),
            },
            Some(run),
        )
    }
}

pub(crate) const METRIC_COLUMNS: [&str; 12] = [
    "auprc",
    "auprc_low",
    "auprc_high",
    "auroc",
    "auroc_low",
    "auroc_high",
    "accuracy",
    "accuracy_low",
    "accuracy_high",
    "c_index",
    "c_index_low",
    "c_index_high",
];

pub(crate) fn metric_cells(report: Option<&EvalReport>) -> Vec<String> {
    let mut out = Vec::with_capacity(12);
    match report {
        Some(r) => {
            for (_, m) in r.metrics() {
                match m {
                    Some(m) => out.extend([m.point, m.ci_low, m.ci_high].map(|v| v.to_string())),
                    None => out.extend(std::iter::repeat_n(String::new(), 3)),
                }
            }
        }
        None => out.extend(std::iter::repeat_n(String::new(), 12)),
    }
    out
}

pub(crate) fn outcome_cells(o: &ArmOutcome) -> Vec<String> {
    let mut row = vec![o.seed.to_string(), o.status.clone()];
    row.extend(metric_cells(o.report.as_ref()));
    row.extend([
        o.best_epoch.to_string(),
        o.epochs_run.to_string(),
        o.fingerprints.shared_init.clone(),
        o.fingerprints.shuffle.clone(),
        o.fingerprints.dropout.clone(),
    ]);
    row
}

pub(crate) fn outcome_header(keys: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = keys.iter().map(|s| s.to_string()).collect();
    h.extend(["seed", "status"].map(String::from));
    h.extend(METRIC_COLUMNS.map(String::from));
    h.extend(
        [
            "best_epoch",
            "epochs_run",
            "init_fingerprint",
            "shuffle_fingerprint",
            "dropout_fingerprint",
        ]
        .map(String::from),
    );
    h
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output options shared by the harnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutputOptions {
    /// Write measured wall time into traces (breaks byte-identical reruns).
    pub wall_time: bool,
}

fn write_trace(dir: &Path, name: &str, trace: &TrainTrace, opts: OutputOptions) -> Result<()> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    trace.write_csv(&traces.join(format!("{name}.csv")), opts.wall_time)
}

/// Any harness result.
pub enum ExperimentResult {
    Ablation(AblationResult),
    Ksweep(KsweepResult),
    Transfer(TransferResult),
    Timefusion(TimeFusionResult),
}

/// Runs whichever harness `spec.kind` names, writing into `out`.
pub fn run_experiment<T: Real>(
    spec: &ExperimentSpec,
    out: &Path,
    opts: OutputOptions,
) -> Result<ExperimentResult> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(match spec.kind {
        ExperimentKind::Ablation => ExperimentResult::Ablation(run_ablation::<T>(spec, out, opts)?),
        ExperimentKind::Ksweep => ExperimentResult::Ksweep(run_ksweep::<T>(spec, out, opts)?),
        ExperimentKind::Transfer => ExperimentResult::Transfer(run_transfer::<T>(spec, out, opts)?),
        ExperimentKind::Timefusion => {
            ExperimentResult::Timefusion(run_timefusion::<T>(spec, out, opts)?)
        }
    })
}
