use std::path::Path;

use rayon::prelude::*;

use super::{
    outcome_cells, outcome_header, train_arm, write_csv, write_trace, ArmHooks, ArmOutcome,
    ExperimentSpec, Fingerprints, OutputOptions,
};
use crate::embedding::{divisors, FusionConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct KsweepResult {
    pub d: usize,
    /// One entry per (k, seed), sorted by k then seed.
    pub arms: Vec<(usize, ArmOutcome)>,
}

impl KsweepResult {
    pub fn k_values(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.arms.iter().map(|(k, _)| *k).collect();
        ks.dedup();
        ks
    }
}

/// The MuFuse configuration for partition factor `k`.
pub fn k_config(base: &FusionConfig, k: usize) -> FusionConfig {
    FusionConfig {
        projector_hidden: base.projector_hidden,
        d_c: base.d_c,
        ..FusionConfig::mufuse(base.d, k)
    }
}

/// The sorted, deduplicated k values to run (every divisor of `d` when
/// `requested` is empty); errors if any requested value does not divide `d`.
pub fn check_k_values(d: usize, requested: &[usize]) -> Result<Vec<usize>> {
    let valid = divisors(d);
    let mut ks = if requested.is_empty() {
        valid.clone()
    } else {
        requested.to_vec()
    };
    ks.sort_unstable();
    ks.dedup();
    let bad: Vec<usize> = ks.iter().copied().filter(|k| !valid.contains(k)).collect();
    if !bad.is_empty() {
        return Err(Error::Config(format!(
            "k values {bad:?} do not divide d = {d}; valid values are {valid:?}"
        )));
    }
    Ok(ks)
}

/// Trains MuFuse at every requested `k` (default: every divisor of `d`).
/// `k = d` is the scalar-gate configuration.
pub fn run_ksweep<T: Real>(
    spec: &ExperimentSpec,
    out: &Path,
    opts: OutputOptions,
) -> Result<KsweepResult> {
    let d = spec.model.fusion.d;
    let ks = check_k_values(d, &spec.grid.k_values)?;
    let configs: Vec<(usize, ModelConfig)> = ks
        .iter()
        .map(|&k| ModelConfig {
            fusion: k_config(&spec.model.fusion, k),
            ..spec.model
        })
        .map(|c| c.validate().map(|_| (c.fusion.k, c)))
        .collect::<Result<_>>()?;

    let ds = spec.data()?.load()?;
    let categories = ds.schema.category_counts();
    let jobs: Vec<(usize, ModelConfig, u64)> = configs
        .iter()
        .flat_map(|&(k, c)| spec.seeds.iter().map(move |&s| (k, c, s)))
        .collect();
    let mut runs: Vec<_> = jobs
        .par_iter()
        .map(|&(k, cfg, seed)| {
            let fallback = ModelParams::<T>::init(&cfg, &categories, seed)
                .map(|p| Fingerprints::new(&p, seed))?;
            let run = train_arm::<T>(&ds, &cfg, &spec.train, seed, ArmHooks::default());
            let (outcome, run) = ArmOutcome::from_run(run, &ds, &spec.eval, seed, fallback);
            Ok((k, outcome, run.map(|r| r.trace)))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.0, r.1.seed));

    let mut rows = Vec::with_capacity(runs.len());
    for (k, outcome, trace) in &runs {
        if let Some(t) = trace {
            write_trace(out, &format!("k{k}_seed{}", outcome.seed), t, opts)?;
        }
        let mut row = vec![k.to_string(), (d / k).to_string(), (*k == d).to_string()];
        row.extend(outcome_cells(outcome));
        rows.push(row);
    }
    write_csv(
        &out.join("results.csv"),
        &outcome_header(&["k", "d_prime", "scane_equivalent"]),
        &rows,
    )?;
    Ok(KsweepResult {
        d,
        arms: runs.into_iter().map(|(k, o, _)| (k, o)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests_support::tiny_spec;
    use crate::experiments::ExperimentKind;

    #[test]
    fn non_divisors_fail_before_training() {
        let mut spec = tiny_spec(ExperimentKind::Ksweep);
        spec.grid.k_values = vec![2, 3];
        spec.data = None;
        let dir = tempfile::tempdir().unwrap();
        let err = run_ksweep::<f32>(&spec, dir.path(), OutputOptions::default()).unwrap_err();
        assert!(err.to_string().contains("[3]"), "{err}");
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn sweep_covers_every_divisor_once_per_seed() {
        let mut spec = tiny_spec(ExperimentKind::Ksweep);
        spec.seeds = vec![3];
        spec.train.max_epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let res = run_ksweep::<f32>(&spec, dir.path(), OutputOptions::default()).unwrap();
        assert_eq!(res.k_values(), vec![1, 2, 4, 8]);
        let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("8,1,true,3,ok"), "{last}");
    }

    #[test]
    fn k_equal_to_d_is_the_scalar_gate() {
        let c = k_config(&FusionConfig::mufuse(12, 4), 12);
        assert_eq!(c, FusionConfig::scane(12).normalized());
    }
}
