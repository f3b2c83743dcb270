use std::path::Path;

use rayon::prelude::*;

use super::{
    outcome_cells, outcome_header, train_arm, write_csv, write_trace, ArmHooks, ArmOutcome,
    ExperimentSpec, Fingerprints, OutputOptions,
};
use crate::data::{Split, Token};
use crate::embedding::{embed_content, inject_time, time_encoding, TimeInjection};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::real::{sigmoid, Real};

/// Closed-form check of one trace: how far the fused signal strays from
/// `c + p(t)` (add) or `c ⊙ σ(p(t))` (multiply), and how far its per-dim
/// swing over the grid strays from the swing those formulas predict.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceCheck {
    pub injection: TimeInjection,
    pub seed: u64,
    /// Largest `|fused − expected| / max(|c|, |p|, tiny)`.
    pub max_residual: f64,
    /// Largest `|observed swing − predicted swing| / max(|c|, 1)`.
    pub max_amplitude_error: f64,
    /// Residual bound in units of machine epsilon.
    pub tolerance: f64,
}

impl TraceCheck {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance && self.max_amplitude_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeFusionResult {
    pub arms: Vec<(TimeInjection, ArmOutcome)>,
    pub checks: Vec<TraceCheck>,
}

struct TracePoint<T> {
    t: f64,
    p: Vec<T>,
    fused: Vec<T>,
}

fn name(i: TimeInjection) -> &'static str {
    match i {
        TimeInjection::Add => "add",
        TimeInjection::Multiply => "multiply",
    }
}

/// Trains one model per time-injection mode and seed, then traces how the
/// content of a fixed token combines with the time encoding over a dense
/// time grid.
pub fn run_timefusion<T: Real>(
    spec: &ExperimentSpec,
    out: &Path,
    opts: OutputOptions,
) -> Result<TimeFusionResult> {
    let g = &spec.grid;
    if g.injections.is_empty()
        || g.trace_points < 2
        || !g.trace_t_max.is_finite()
        || g.trace_t_max <= 0.0
    {
        return Err(Error::Config(
            "timefusion needs injections, trace_points ≥ 2 and trace_t_max finite and > 0".into(),
        ));
    }
    let mut injections = g.injections.clone();
    injections.sort_by_key(|i| name(*i));
    injections.dedup();
    let ds = spec.data()?.load()?;
    let probe: Token = ds
        .split(Split::Test)
        .into_iter()
        .chain(ds.split(Split::Train))
        .find_map(|s| s.tokens.first().cloned())
        .ok_or_else(|| Error::Contract("dataset has no tokens to trace".into()))?;
    let categories = ds.schema.category_counts();

    let jobs: Vec<(TimeInjection, u64)> = injections
        .iter()
        .flat_map(|&i| spec.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let runs: Vec<_> = jobs
        .par_iter()
        .map(|&(inj, seed)| {
            let mut cfg: ModelConfig = spec.model;
            cfg.time.injection = inj;
            let fallback = ModelParams::<T>::init(&cfg, &categories, seed)
                .map(|p| Fingerprints::new(&p, seed))?;
            let run = train_arm::<T>(&ds, &cfg, &spec.train, seed, ArmHooks::default());
            let (outcome, run) = ArmOutcome::from_run(run, &ds, &spec.eval, seed, fallback);
            Ok((inj, outcome, run))
        })
        .collect::<Result<Vec<_>>>()?;

    let dims = g.trace_dims.min(spec.model.fusion.d);
    let grid: Vec<f64> = (0..g.trace_points)
        .map(|i| g.trace_t_max * i as f64 / (g.trace_points - 1) as f64)
        .collect();
    let mut rows = Vec::new();
    let mut trace_rows = Vec::new();
    let mut checks = Vec::new();
    for (inj, outcome, run) in &runs {
        let seed = outcome.seed;
        if let Some(run) = run {
            write_trace(out, &format!("{}_seed{seed}", name(*inj)), &run.trace, opts)?;
            let model = &run.checkpoint.model;
            let (content, points) = trace_token(model, &probe, &grid)?;
            checks.push(check_trace(*inj, seed, &content, &points));
            for pt in &points {
                for (j, c) in content.iter().enumerate().take(dims) {
                    trace_rows.push(vec![
                        name(*inj).to_owned(),
                        seed.to_string(),
                        pt.t.to_string(),
                        j.to_string(),
                        c.to_string(),
                        pt.p[j].to_string(),
                        pt.fused[j].to_string(),
                    ]);
                }
            }
        }
        let mut row = vec![name(*inj).to_owned()];
        row.extend(outcome_cells(outcome));
        rows.push(row);
    }
    write_csv(
        &out.join("results.csv"),
        &outcome_header(&["injection"]),
        &rows,
    )?;
    write_csv(
        &out.join("traces.csv"),
        &[
            "injection",
            "seed",
            "t",
            "dim",
            "content",
            "sinusoid",
            "fused",
        ]
        .map(String::from),
        &trace_rows,
    )?;
    write_csv(
        &out.join("checks.csv"),
        &[
            "injection",
            "seed",
            "max_residual",
            "max_amplitude_error",
            "tolerance",
            "passed",
        ]
        .map(String::from),
        &checks
            .iter()
            .map(|c| {
                vec![
                    name(c.injection).to_owned(),
                    c.seed.to_string(),
                    c.max_residual.to_string(),
                    c.max_amplitude_error.to_string(),
                    c.tolerance.to_string(),
                    c.passed().to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    Ok(TimeFusionResult {
        arms: runs.into_iter().map(|(i, o, _)| (i, o)).collect(),
        checks,
    })
}

fn trace_token<T: Real>(
    model: &Model<T>,
    token: &Token,
    grid: &[f64],
) -> Result<(Vec<T>, Vec<TracePoint<T>>)> {
    let content = embed_content(token, &model.params.embedding, &model.config.fusion)?;
    let points = grid
        .iter()
        .map(|&t| {
            let p = time_encoding::<T>(t, model.wavelengths());
            let fused = inject_time(&content, &p, model.config.time.injection)?;
            Ok(TracePoint { t, p, fused })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((content, points))
}

fn check_trace<T: Real>(
    inj: TimeInjection,
    seed: u64,
    content: &[T],
    points: &[TracePoint<T>],
) -> TraceCheck {
    let eps = T::epsilon().as_f64();
    let mut max_residual: f64 = 0.0;
    let mut max_amp: f64 = 0.0;
    for (j, &cj) in content.iter().enumerate() {
        let c = cj.as_f64();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut glo, mut ghi) = (f64::INFINITY, f64::NEG_INFINITY);
        for pt in points {
            let p = pt.p[j].as_f64();
            let f = pt.fused[j].as_f64();
            let (expected, gate) = match inj {
                TimeInjection::Add => (c + p, p),
                TimeInjection::Multiply => {
                    let s = sigmoid(pt.p[j]).as_f64();
                    (c * s, s)
                }
            };
            let scale = c.abs().max(p.abs()).max(f64::MIN_POSITIVE);
            max_residual = max_residual.max((f - expected).abs() / scale);
            lo = lo.min(f);
            hi = hi.max(f);
            glo = glo.min(gate);
            ghi = ghi.max(gate);
        }
        let predicted = match inj {
            TimeInjection::Add => ghi - glo,
            TimeInjection::Multiply => c.abs() * (ghi - glo),
        };
        max_amp = max_amp.max(((hi - lo) - predicted).abs() / c.abs().max(1.0));
    }
    TraceCheck {
        injection: inj,
        seed,
        max_residual: max_residual / eps,
        max_amplitude_error: max_amp / eps,
        tolerance: 4.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::tests_support::tiny_spec;
    use crate::experiments::ExperimentKind;

    #[test]
    fn traces_match_closed_forms_in_both_precisions() {
        let mut spec = tiny_spec(ExperimentKind::Timefusion);
        spec.seeds = vec![4];
        spec.train.max_epochs = 1;
        let dir = tempfile::tempdir().unwrap();
        let res = run_timefusion::<f32>(&spec, dir.path(), OutputOptions::default()).unwrap();
        assert_eq!(res.checks.len(), 2);
        assert!(
            res.checks.iter().all(TraceCheck::passed),
            "{:?}",
            res.checks
        );
        let text = std::fs::read_to_string(dir.path().join("traces.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 9 * 5);
        let dir = tempfile::tempdir().unwrap();
        let res = run_timefusion::<f64>(&spec, dir.path(), OutputOptions::default()).unwrap();
        assert!(
            res.checks.iter().all(TraceCheck::passed),
            "{:?}",
            res.checks
        );
    }

    #[test]
    fn multiply_swing_is_bounded_by_content() {
        let content = [2.0f64, -0.5];
        let grid: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let wl = [3.0];
        let points: Vec<TracePoint<f64>> = grid
            .iter()
            .map(|&t| {
                let p = time_encoding::<f64>(t, &wl);
                let fused = inject_time(&content, &p, TimeInjection::Multiply).unwrap();
                TracePoint { t, p, fused }
            })
            .collect();
        let c = check_trace(TimeInjection::Multiply, 0, &content, &points);
        assert!(c.passed(), "{c:?}");
        let swing: f64 = points.iter().map(|p| p.fused[0]).fold(f64::MIN, f64::max)
            - points.iter().map(|p| p.fused[0]).fold(f64::MAX, f64::min);
        assert!(swing <= 2.0 * (sigmoid(1.0) - sigmoid(-1.0)) + 1e-12);
    }
}
