//! Cross-dataset transfer of learned feature-identity embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    outcome_cells, outcome_header, train_arm, write_csv, write_trace, ArmHooks, ArmOutcome,
    ExperimentSpec, Fingerprints, OutputOptions,
};
use crate::checkpoint::Checkpoint;
use crate::data::{FeatureSchema, Split, TokenizedDataset};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;
use crate::training::{EpochRecord, FreezeSchedule, FrozenRows};

/// Per-feature learned vectors, keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleRow {
    pub embedding: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBundle {
    pub d: usize,
    pub source_schema: String,
    pub features: BTreeMap<String, BundleRow>,
}

impl EmbeddingBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn export_embeddings<T: Real>(ckpt: &Checkpoint<T>) -> EmbeddingBundle {
    let e = &ckpt.model.params.embedding;
    let row = |m: &crate::tensor::Mat<T>, f: usize| m.row(f).iter().map(|v| v.as_f64()).collect();
    EmbeddingBundle {
        d: ckpt.model.config.fusion.d,
        source_schema: ckpt.schema_hash.clone(),
        features: ckpt
            .feature_names
            .iter()
            .enumerate()
            .map(|(f, name)| {
                (
                    name.clone(),
                    BundleRow {
                        embedding: row(&e.feature_table, f),
                        gamma: row(&e.gamma, f),
                        beta: row(&e.beta, f),
                    },
                )
            })
            .collect(),
    }
}

/// One overwritten feature-table row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferRow {
    pub source_feature: String,
    pub target_feature: String,
    pub target_row: usize,
}

/// Overwrites the feature-table rows of `params` whose feature (under
/// `name_map`, identity for unlisted names) appears in `bundle`. Only
/// feature-identity rows move; every other tensor keeps its values.
pub fn import_embeddings<T: Real>(
    params: &mut ModelParams<T>,
    target: &FeatureSchema,
    bundle: &EmbeddingBundle,
    name_map: &BTreeMap<String, String>,
) -> Result<Vec<TransferRow>> {
    let d = params.embedding.feature_table.cols();
    if bundle.d != d {
        return Err(Error::Transfer(format!(
            "bundle embeddings have width {} but the target model uses d = {d}",
            bundle.d
        )));
    }
    let mut rows = Vec::new();
    for (src, row) in &bundle.features {
        let tgt = name_map.get(src).unwrap_or(src);
        if let Some(f) = target.index_of(tgt) {
            if row.embedding.len() != d {
                return Err(Error::Transfer(format!(
                    "bundle row {src} has the wrong width"
                )));
            }
            for (dst, &v) in params
                .embedding
                .feature_table
                .row_mut(f)
                .iter_mut()
                .zip(&row.embedding)
            {
                *dst = T::lit(v);
            }
            rows.push(TransferRow {
                source_feature: src.clone(),
                target_feature: tgt.clone(),
                target_row: f,
            });
        }
    }
    if rows.is_empty() {
        let src: Vec<&str> = bundle.features.keys().map(String::as_str).collect();
        return Err(Error::Transfer(format!(
            "no features shared between source {src:?} and target {:?}",
            target.names()
        )));
    }
    rows.sort_by_key(|r| r.target_row);
    for r in &rows {
        log::info!(
            "transfer {} -> {} (row {})",
            r.source_feature,
            r.target_feature,
            r.target_row
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TransferArm {
    Scratch,
    Transferred,
    /// Source trained on a target-sized subsample of its training split.
    TransferredSubsample,
}

impl TransferArm {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferArm::Scratch => "scratch",
            TransferArm::Transferred => "transferred",
            TransferArm::TransferredSubsample => "transferred_subsample",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub source: String,
    pub target: String,
    pub arm: TransferArm,
    pub outcome: ArmOutcome,
    /// Rows overwritten by the import (empty for the scratch arm).
    pub rows: Vec<TransferRow>,
    /// Whether transferred rows stayed bit-identical through every frozen
    /// epoch while the rest of the table moved.
    pub freeze_held: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferResult {
    pub arms: Vec<TransferOutcome>,
}

impl TransferResult {
    pub fn mean_auprc(&self, source: &str, target: &str, arm: TransferArm) -> Option<f64> {
        let v: Vec<f64> = self
            .arms
            .iter()
            .filter(|a| a.source == source && a.target == target && a.arm == arm)
            .filter_map(|a| a.outcome.report.as_ref().map(|r| r.auprc.point))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Job<'a> {
    source: &'a str,
    target: &'a str,
    arm: TransferArm,
    seed: u64,
}

/// For each `[source, target]` direction and seed, trains a source model,
/// exports its feature embeddings, and compares a target model initialized
/// from them (transferred rows frozen for the first epochs) against one
/// trained from scratch with the same seed.
pub fn run_transfer<T: Real>(
    spec: &ExperimentSpec,
    out: &Path,
    opts: OutputOptions,
) -> Result<TransferResult> {
    let tr = &spec.transfer;
    if tr.directions.is_empty() {
        return Err(Error::Config("transfer.directions is empty".into()));
    }
    for [s, t] in &tr.directions {
        for name in [s, t] {
            if !spec.datasets.contains_key(name) {
                return Err(Error::Config(format!(
                    "transfer direction names unknown dataset `{name}`"
                )));
            }
        }
        if s == t {
            return Err(Error::Config(format!(
                "transfer direction {s} -> {t} is a self-loop"
            )));
        }
    }
    let datasets: BTreeMap<&str, TokenizedDataset> = spec
        .datasets
        .iter()
        .map(|(n, r)| r.load().map(|ds| (n.as_str(), ds)))
        .collect::<Result<_>>()?;

    let mut arms = vec![TransferArm::Scratch, TransferArm::Transferred];
    if tr.source_subsample {
        arms.push(TransferArm::TransferredSubsample);
    }
    let jobs: Vec<Job> = tr
        .directions
        .iter()
        .flat_map(|[s, t]| {
            let arms = &arms;
            spec.seeds.iter().flat_map(move |&seed| {
                arms.iter().map(move |&arm| Job {
                    source: s,
                    target: t,
                    arm,
                    seed,
                })
            })
        })
        .collect();

    let mut results: Vec<(TransferOutcome, Option<crate::training::TrainTrace>)> = jobs
        .par_iter()
        .map(|job| run_job::<T>(spec, &datasets, job))
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| {
        let k = |o: &TransferOutcome| (o.source.clone(), o.target.clone(), o.arm, o.outcome.seed);
        k(&a.0).cmp(&k(&b.0))
    });

    let mut rows = Vec::new();
    let mut row_rows = Vec::new();
    for (o, trace) in &results {
        if let Some(t) = trace {
            let name = format!(
                "{}_to_{}_{}_seed{}",
                o.source,
                o.target,
                o.arm.as_str(),
                o.outcome.seed
            );
            write_trace(out, &name, t, opts)?;
        }
        let mut row = vec![
            o.source.clone(),
            o.target.clone(),
            o.arm.as_str().to_owned(),
            o.rows.len().to_string(),
            o.freeze_held.map(|b| b.to_string()).unwrap_or_default(),
        ];
        row.extend(outcome_cells(&o.outcome));
        rows.push(row);
        if o.arm == TransferArm::Transferred {
            for r in &o.rows {
                row_rows.push(vec![
                    o.source.clone(),
                    o.target.clone(),
                    o.outcome.seed.to_string(),
                    r.source_feature.clone(),
                    r.target_feature.clone(),
                    r.target_row.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &out.join("results.csv"),
        &outcome_header(&["source", "target", "arm", "n_transferred", "freeze_held"]),
        &rows,
    )?;
    write_csv(
        &out.join("transfer_rows.csv"),
        &[
            "source",
            "target",
            "seed",
            "source_feature",
            "target_feature",
            "target_row",
        ]
        .map(String::from),
        &row_rows,
    )?;
    Ok(TransferResult {
        arms: results.into_iter().map(|(o, _)| o).collect(),
    })
}

fn run_job<T: Real>(
    spec: &ExperimentSpec,
    datasets: &BTreeMap<&str, TokenizedDataset>,
    job: &Job,
) -> Result<(TransferOutcome, Option<crate::training::TrainTrace>)> {
    let target = &datasets[job.target];
    let categories = target.schema.category_counts();
    let mut init = ModelParams::<T>::init(&spec.model, &categories, job.seed)?;
    let fallback = Fingerprints::new(&init, job.seed);
    let finish = |run, rows, freeze_held| {
        let (outcome, run) =
            ArmOutcome::from_run::<T>(run, target, &spec.eval, job.seed, fallback.clone());
        (
            TransferOutcome {
                source: job.source.to_owned(),
                target: job.target.to_owned(),
                arm: job.arm,
                outcome,
                rows,
                freeze_held,
            },
            run.map(|r| r.trace),
        )
    };

    if job.arm == TransferArm::Scratch {
        let run = train_arm::<T>(
            target,
            &spec.model,
            &spec.train,
            job.seed,
            ArmHooks::default(),
        );
        return Ok(finish(run, Vec::new(), None));
    }

    let source_full = &datasets[job.source];
    let subsampled;
    let source = if job.arm == TransferArm::TransferredSubsample {
        subsampled = source_full.subsample_train(target.count(Split::Train), job.seed);
        &subsampled
    } else {
        source_full
    };
    let src_run = train_arm::<T>(
        source,
        &spec.model,
        &spec.train,
        job.seed,
        ArmHooks::default(),
    );
    let src_ckpt = match src_run {
        Ok(r) if r.trace.failure().is_none() => r.checkpoint,
        Ok(r) => {
            return Ok(finish(
                Err(r.trace.failure().expect("failed")),
                Vec::new(),
                None,
            ))
        }
        Err(e) => return Ok(finish(Err(e), Vec::new(), None)),
    };
    let bundle = export_embeddings(&src_ckpt);
    let rows = import_embeddings(&mut init, &target.schema, &bundle, &spec.transfer.name_map)?;
    let frozen: Vec<usize> = rows.iter().map(|r| r.target_row).collect();
    let start = init.embedding.feature_table.clone();
    let freeze_epochs = spec.transfer.freeze_epochs;
    let mut held = true;
    let mut check = |rec: &EpochRecord, p: &ModelParams<T>| {
        if rec.epoch > freeze_epochs {
            return;
        }
        let table = &p.embedding.feature_table;
        let mut others_moved = false;
        for f in 0..table.rows() {
            let same = table.row(f) == start.row(f);
            if frozen.contains(&f) {
                held &= same;
            } else {
                others_moved |= !same;
            }
        }
        if frozen.len() < table.rows() && !others_moved {
            log::warn!("no unfrozen feature row moved during epoch {}", rec.epoch);
            held = false;
        }
    };
    let hooks = ArmHooks {
        init: Some(init),
        freeze: FreezeSchedule {
            rows: FrozenRows {
                feature_rows: frozen.clone(),
            },
            epochs: freeze_epochs,
        },
        on_epoch: Some(&mut check),
    };
    let run = train_arm::<T>(target, &spec.model, &spec.train, job.seed, hooks);
    let uses_freeze = freeze_epochs > 0;
    Ok(finish(run, rows, uses_freeze.then_some(held)))
}
