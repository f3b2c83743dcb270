use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::{
    outcome_cells, outcome_header, train_arm, write_csv, write_trace, ArmHooks, ArmOutcome,
    ExperimentSpec, Fingerprints, OutputOptions,
};
use crate::embedding::FusionKind;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    /// One entry per (fusion kind, seed), sorted by kind then seed.
    pub arms: Vec<(FusionKind, ArmOutcome)>,
}

impl AblationResult {
    /// Mean test AUPRC over the successful seeds of `kind`.
    pub fn mean_auprc(&self, kind: FusionKind) -> Option<f64> {
        let v: Vec<f64> = self
            .arms
            .iter()
            .filter(|(k, o)| *k == kind && o.ok())
            .filter_map(|(_, o)| o.report.as_ref().map(|r| r.auprc.point))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// True when, for every seed, all arms started from the same shared
    /// tensors and used the same shuffle and dropout streams.
    pub fn fingerprints_match(&self) -> bool {
        let mut by_seed: BTreeMap<u64, &Fingerprints> = BTreeMap::new();
        self.arms.iter().all(|(_, o)| {
            let first = *by_seed.entry(o.seed).or_insert(&o.fingerprints);
            *first == o.fingerprints
        })
    }
}

/// Trains every fusion kind of the grid under every seed, with everything
/// else held fixed, and evaluates on the test split.
pub fn run_ablation<T: Real>(
    spec: &ExperimentSpec,
    out: &Path,
    opts: OutputOptions,
) -> Result<AblationResult> {
    let kinds = &spec.grid.fusion_kinds;
    if kinds.is_empty() {
        return Err(Error::Config("grid.fusion_kinds is empty".into()));
    }
    let configs: Vec<(FusionKind, ModelConfig)> = kinds
        .iter()
        .map(|&k| {
            let cfg = ModelConfig {
                fusion: spec.model.fusion.with_kind(k),
                ..spec.model
            };
            cfg.validate().map(|_| (k, cfg))
        })
        .collect::<Result<_>>()?;
    let ds = spec.data()?.load()?;
    let categories = ds.schema.category_counts();

    let jobs: Vec<(FusionKind, ModelConfig, u64)> = configs
        .iter()
        .flat_map(|&(k, c)| spec.seeds.iter().map(move |&s| (k, c, s)))
        .collect();
    let mut runs: Vec<_> = jobs
        .par_iter()
        .map(|&(kind, cfg, seed)| {
            let fallback = ModelParams::<T>::init(&cfg, &categories, seed)
                .map(|p| Fingerprints::new(&p, seed))?;
            let run = train_arm::<T>(&ds, &cfg, &spec.train, seed, ArmHooks::default());
            let (outcome, run) = ArmOutcome::from_run(run, &ds, &spec.eval, seed, fallback);
            Ok((kind, outcome, run.map(|r| r.trace)))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| (a.0.as_str(), a.1.seed).cmp(&(b.0.as_str(), b.1.seed)));

    let mut rows = Vec::with_capacity(runs.len());
    for (kind, outcome, trace) in &runs {
        if let Some(t) = trace {
            write_trace(
                out,
                &format!("{}_seed{}", kind.as_str(), outcome.seed),
                t,
                opts,
            )?;
        }
        let mut row = vec![kind.as_str().to_owned()];
        row.extend(outcome_cells(outcome));
        rows.push(row);
    }
    write_csv(
        &out.join("results.csv"),
        &outcome_header(&["fusion"]),
        &rows,
    )?;

    let result = AblationResult {
        arms: runs.into_iter().map(|(k, o, _)| (k, o)).collect(),
    };
    write_summary(out, &result)?;
    Ok(result)
}

fn write_summary(out: &Path, result: &AblationResult) -> Result<()> {
    let mut kinds: Vec<FusionKind> = result.arms.iter().map(|(k, _)| *k).collect();
    kinds.sort_by_key(|k| k.as_str());
    kinds.dedup();
    let header: Vec<String> = [
        "fusion",
        "n_ok",
        "n_failed",
        "auprc_mean",
        "auprc_sd",
        "auroc_mean",
        "auroc_sd",
        "accuracy_mean",
        "accuracy_sd",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = kinds
        .iter()
        .map(|&kind| {
            let reports: Vec<_> = result
                .arms
                .iter()
                .filter(|(k, o)| *k == kind && o.ok())
                .filter_map(|(_, o)| o.report.as_ref())
                .collect();
            let total = result.arms.iter().filter(|(k, _)| *k == kind).count();
            let mut row = vec![
                kind.as_str().to_owned(),
                reports.len().to_string(),
                (total - reports.len()).to_string(),
            ];
            for pick in [
                |r: &crate::metrics::EvalReport| r.auprc.point,
                |r: &crate::metrics::EvalReport| r.auroc.point,
                |r: &crate::metrics::EvalReport| r.accuracy.point,
            ] {
                let v: Vec<f64> = reports.iter().map(|r| pick(r)).collect();
                let (m, sd) = mean_sd(&v);
                row.push(m.map(|x| x.to_string()).unwrap_or_default());
                row.push(sd.map(|x| x.to_string()).unwrap_or_default());
            }
            row
        })
        .collect();
    write_csv(&out.join("summary.csv"), &header, &rows)
}

/// Mean and sample standard deviation.
pub(crate) fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd =
        (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}
