//! Acceptance checks. Prints one `PASS` or `FAIL` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use medfuse_core::commands::{output_mismatches, rerun, run_command, Command, RunContext};
use medfuse_core::data::{LabelRule, Split, SynthSpec, TokenizeConfig};
use medfuse_core::embedding::{
    divisors, fuse_additive, fuse_mufuse, fuse_mufuse_repeat, hadamard, hadamard_reparam,
    FusionConfig, FusionKind, TimeConfig, TimeInjection,
};
use medfuse_core::encoder::EncoderConfig;
use medfuse_core::experiments::{
    k_config, run_ablation, run_ksweep, run_timefusion, run_transfer, train_arm, ArmHooks, DataRef,
    ExperimentKind, ExperimentSpec, Grid, OutputOptions, TransferArm, TransferSpec,
};
use medfuse_core::metrics::{
    accuracy_at, auprc, auroc, bootstrap_ci, c_index, EvalConfig, EvalSample, Metric,
};
use medfuse_core::model::ModelConfig;
use medfuse_core::real::sigmoid;
use medfuse_core::training::{grad_check, TrainConfig};
use medfuse_core::Precision;

// Pinned tolerances and thresholds.
const IDENTITY_TOL: f64 = 1e-12;
const IDENTITY_PAIRS: usize = 10_000;
const GRAD_TOL: f64 = 1e-4;
const COLLAPSE_TOL: f64 = 1e-15;
const COLLAPSE_CASES: usize = 1_000;
const METRIC_TOL: f64 = 1e-12;
const METRIC_TRIALS: usize = 1_000;
const USHAPE_ENTITIES: usize = 5_000;
const USHAPE_AUROC: f64 = 0.9;
const USHAPE_MAX_EPOCHS: usize = 50;
const ABLATION_MARGIN: f64 = 0.02;
/// Add-trace residual bound, in machine epsilons of max(|c|, |p|).
const TRACE_EPS: f64 = 4.0;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        fusion: FusionConfig {
            projector_hidden: 16,
            d_c: 8,
            ..FusionConfig::mufuse(16, 2)
        },
        encoder: EncoderConfig {
            d_model: 16,
            ff_dim: 32,
            num_layers: 1,
            num_heads: 2,
            dropout: 0.1,
            max_seq_len: 512,
        },
        time: TimeConfig::default(),
    }
}

fn toy_model(kind: FusionKind) -> ModelConfig {
    let base = FusionConfig {
        projector_hidden: 4,
        d_c: 4,
        ..FusionConfig::mufuse(8, 2)
    };
    ModelConfig {
        fusion: base.with_kind(kind),
        encoder: EncoderConfig {
            d_model: 8,
            ff_dim: 8,
            num_layers: 1,
            num_heads: 2,
            dropout: 0.0,
            max_seq_len: 64,
        },
        time: TimeConfig::default(),
    }
}

fn train_cfg(lr: f64, max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        max_epochs,
        early_stop_patience: patience,
        precision: Precision::F32,
        ..Default::default()
    }
}

fn cohort(n: usize, bin_width: f64) -> SynthSpec {
    SynthSpec {
        n_entities: n,
        bin_width,
        ..Default::default()
    }
}

fn spec(kind: ExperimentKind, seeds: Vec<u64>, data: SynthSpec, synth_seed: u64) -> ExperimentSpec {
    ExperimentSpec {
        kind,
        seeds,
        model: small_model(),
        train: train_cfg(3e-3, 10, 4),
        eval: EvalConfig {
            n_bootstrap: 200,
            ..Default::default()
        },
        data: Some(DataRef::synthetic(data, synth_seed)),
        datasets: Default::default(),
        grid: Grid::default(),
        transfer: TransferSpec::default(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..IDENTITY_PAIRS {
        let d = rng.random_range(1..=64);
        let e_f: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let direct = hadamard(&e_f, &g);
        let split = hadamard_reparam(&e_f, &g);
        for (a, b) in direct.iter().zip(&split) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(
        worst <= IDENTITY_TOL,
        format!("identity residual {worst:e}"),
    )?;

    let mut blocks = 0;
    for d in [8usize, 12, 144] {
        for k in divisors(d) {
            for _ in 0..20 {
                let e_f: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let e_v: Vec<f64> = (0..d / k).map(|_| rng.random_range(-4.0..4.0)).collect();
                let a = fuse_mufuse(&e_f, &e_v).map_err(e)?;
                let b = fuse_mufuse_repeat(&e_f, &e_v).map_err(e)?;
                ensure(
                    a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
                    format!("block and repeat forms differ at d={d} k={k}"),
                )?;
                blocks += 1;
            }
        }
        for _ in 0..100 {
            let e_f: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: f64 = rng.random_range(-4.0..4.0);
            let fused = fuse_mufuse(&e_f, &[v]).map_err(e)?;
            let gate = sigmoid(v);
            ensure(
                fused.iter().zip(&e_f).all(|(x, f)| *x == gate * f),
                "d' = 1 differs from the scalar-gate product",
            )?;
        }
    }
    Ok(format!(
        "max identity residual {worst:.1e} over {IDENTITY_PAIRS} pairs; {blocks} block/repeat cases bit-identical; scalar gate exact"
    ))
}

fn criterion_2() -> Outcome {
    let mut parts = Vec::new();
    for kind in [
        FusionKind::Mufuse,
        FusionKind::Scane,
        FusionKind::Additive,
        FusionKind::Concat,
    ] {
        let r = grad_check(&toy_model(kind), GRAD_TOL, 7).map_err(e)?;
        ensure(
            r.passed(),
            format!("{} fails on {:?}", kind.as_str(), r.failing()),
        )?;
        parts.push(format!("{} {:.1e}", kind.as_str(), r.max_rel_error()));
    }
    let mut two_layers = toy_model(FusionKind::Mufuse);
    two_layers.encoder.num_layers = 2;
    two_layers.time.injection = TimeInjection::Multiply;
    let r = grad_check(&two_layers, GRAD_TOL, 8).map_err(e)?;
    ensure(
        r.passed(),
        format!("2-layer multiply model fails on {:?}", r.failing()),
    )?;
    parts.push(format!("2-layer/multiply {:.1e}", r.max_rel_error()));
    Ok(format!("max relative error: {}", parts.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut min_additive_gap = f64::INFINITY;
    for _ in 0..COLLAPSE_CASES {
        let d = *[8usize, 12, 16, 144].get(rng.random_range(0..4)).unwrap();
        let ks: Vec<usize> = divisors(d).into_iter().filter(|&k| k < d).collect();
        let k = ks[rng.random_range(0..ks.len())];
        let dp = d / k;
        let i = rng.random_range(0..dp);
        let mut e_f: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        e_f[i * k..(i + 1) * k].iter_mut().for_each(|x| *x = 0.0);
        let v1: Vec<f64> = (0..dp).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut v2 = v1.clone();
        v2[i] += rng.random_range(0.5..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let a = fuse_mufuse(&e_f, &v1).map_err(e)?;
        let b = fuse_mufuse(&e_f, &v2).map_err(e)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
        // Additive arm: value embeddings are d-wide; differ only in block i.
        let w1: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut w2 = w1.clone();
        let shift = rng.random_range(0.5..4.0);
        w2[i * k..(i + 1) * k].iter_mut().for_each(|x| *x += shift);
        let a = fuse_additive(&e_f, &w1).map_err(e)?;
        let b = fuse_additive(&e_f, &w2).map_err(e)?;
        let gap = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        min_additive_gap = min_additive_gap.min(gap);
    }
    ensure(
        worst <= COLLAPSE_TOL,
        format!("gated outputs differ by {worst:e}"),
    )?;
    ensure(min_additive_gap > 0.0, "additive outputs collapsed")?;
    Ok(format!(
        "{COLLAPSE_CASES} cases: gated difference {worst:.1e}; additive difference ≥ {min_additive_gap:.3}"
    ))
}

fn brute_auroc(s: &[f64], y: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn brute_auprc(s: &[f64], y: &[u8]) -> f64 {
    let pos = y.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for t in thresholds {
        let tp = s.iter().zip(y).filter(|(&v, &l)| v >= t && l == 1).count() as f64;
        let predicted = s.iter().filter(|&&v| v >= t).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    area
}

fn brute_c_index(s: &[f64], t: &[f64], ev: &[u8]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            let (early, late) = if t[i] < t[j] {
                (i, j)
            } else if t[j] < t[i] {
                (j, i)
            } else {
                continue;
            };
            if ev[early] != 1 {
                continue;
            }
            den += 1.0;
            num += if s[early] > s[late] {
                1.0
            } else if s[early] == s[late] {
                0.5
            } else {
                0.0
            };
        }
    }
    (den > 0.0).then(|| num / den)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = [0usize; 3];
    let mut worst: f64 = 0.0;
    for _ in 0..METRIC_TRIALS {
        let n = rng.random_range(2..=20);
        let grid = rng.random_range(2..=8) as f64;
        let s: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0) * grid).floor() / grid)
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_bool(0.4) as u8).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let has_both = y.contains(&0) && y.contains(&1);
        if has_both {
            worst = worst.max((auroc(&s, &y).map_err(e)? - brute_auroc(&s, &y)).abs());
            worst = worst.max((auprc(&s, &y).map_err(e)? - brute_auprc(&s, &y)).abs());
            checked[0] += 1;
            checked[1] += 1;
        } else {
            ensure(auroc(&s, &y).is_err(), "AUROC defined on a single class")?;
        }
        match (c_index(&s, &t, &y), brute_c_index(&s, &t, &y)) {
            (Ok(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                checked[2] += 1;
            }
            (Err(_), None) => {}
            (a, b) => return Err(format!("c-index definedness differs: {a:?} vs {b:?}")),
        }
    }
    ensure(worst <= METRIC_TOL, format!("metric residual {worst:e}"))?;

    let acc = accuracy_at(&[0.5, 0.49999, 0.7, 0.2], &[1, 0, 0, 0], 0.5).map_err(e)?;
    ensure(acc == 0.75, format!("boundary rule: accuracy {acc}"))?;

    let sample = EvalSample::new(
        (0..60).map(|i| ((i * 37) % 60) as f64 / 60.0).collect(),
        (0..60).map(|i| (i % 3 == 0) as u8).collect(),
        None,
    )
    .map_err(e)?;
    let f = |s: &EvalSample| Metric::Auprc.compute(s, 0.5);
    let a = bootstrap_ci(f, &sample, 300, 0.95, 9).map_err(e)?;
    let b = bootstrap_ci(f, &sample, 300, 0.95, 9).map_err(e)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(e)?;
    let c = pool
        .install(|| bootstrap_ci(f, &sample, 300, 0.95, 9))
        .map_err(e)?;
    ensure(
        a == b && a == c,
        "bootstrap differs between runs or thread counts",
    )?;
    Ok(format!(
        "{METRIC_TRIALS} trials (AUROC {}, AUPRC {}, c-index {} defined), max residual {worst:.1e}; score = threshold counts positive; bootstrap reproducible",
        checked[0], checked[1], checked[2]
    ))
}

fn criterion_5() -> Outcome {
    let data = DataRef::synthetic(cohort(USHAPE_ENTITIES, 2.0), 5);
    let ds = data.load().map_err(e)?;
    let missing = ds.missing_rate();
    ensure(
        ds.schema.len() == 10,
        format!("{} features", ds.schema.len()),
    )?;
    ensure(
        (0.6..0.8).contains(&missing),
        format!("missing rate {missing:.3}"),
    )?;
    let mut train = train_cfg(3e-3, USHAPE_MAX_EPOCHS, USHAPE_MAX_EPOCHS);
    train.target_val_auroc = Some(USHAPE_AUROC);
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let run =
            train_arm::<f32>(&ds, &small_model(), &train, seed, ArmHooks::default()).map_err(e)?;
        let hit = run
            .trace
            .epochs
            .iter()
            .find(|r| r.val_auroc >= USHAPE_AUROC)
            .map(|r| (r.epoch, r.val_auroc));
        match hit {
            Some((epoch, a)) if epoch <= USHAPE_MAX_EPOCHS => {
                parts.push(format!("seed {seed}: {a:.3} at epoch {epoch}"))
            }
            _ => {
                let best = run
                    .trace
                    .epochs
                    .iter()
                    .map(|r| r.val_auroc)
                    .fold(0.0, f64::max);
                return Err(format!("seed {seed} peaked at validation AUROC {best:.3}"));
            }
        }
    }
    Ok(format!("missing rate {missing:.3}; {}", parts.join("; ")))
}

fn criterion_6(out: &Path) -> Outcome {
    let mut s = spec(
        ExperimentKind::Ablation,
        vec![1, 2, 3],
        cohort(3000, 4.0),
        11,
    );
    s.train = train_cfg(1e-2, 40, 8);
    let res = run_ablation::<f32>(&s, out, OutputOptions::default()).map_err(e)?;
    ensure(res.arms.len() == 9, format!("{} arms", res.arms.len()))?;
    ensure(res.arms.iter().all(|(_, o)| o.ok()), "an arm failed")?;
    ensure(
        res.fingerprints_match(),
        "RNG fingerprints differ across arms",
    )?;
    let rows = std::fs::read_to_string(out.join("results.csv")).map_err(e)?;
    ensure(rows.lines().count() == 10, "results.csv lacks rows")?;
    let m = res
        .mean_auprc(FusionKind::Mufuse)
        .ok_or("no mufuse result")?;
    let a = res
        .mean_auprc(FusionKind::Additive)
        .ok_or("no additive result")?;
    let c = res
        .mean_auprc(FusionKind::Concat)
        .ok_or("no concat result")?;
    ensure(
        m >= a - ABLATION_MARGIN,
        format!("mufuse {m:.4} below additive {a:.4} by more than {ABLATION_MARGIN}"),
    )?;
    Ok(format!(
        "3x3 grid, fingerprints match; mean test AUPRC mufuse {m:.4}, additive {a:.4}, concat {c:.4}"
    ))
}

fn criterion_7(out: &Path) -> Outcome {
    let mut s = spec(ExperimentKind::Ksweep, vec![1], cohort(300, 8.0), 5);
    s.model.fusion = FusionConfig::mufuse(144, 4);
    s.model.encoder = EncoderConfig {
        d_model: 144,
        ff_dim: 144,
        num_layers: 1,
        num_heads: 4,
        dropout: 0.1,
        max_seq_len: 512,
    };
    s.train = train_cfg(1e-3, 1, 1);
    s.eval.n_bootstrap = 100;

    let mut bad = s.clone();
    bad.grid.k_values = vec![4, 5];
    let rejected = matches!(
        ExperimentSpec::from_toml(&bad.to_toml()),
        Err(medfuse_core::Error::Config(m)) if m.contains("[5]")
    );
    ensure(rejected, "k = 5 not rejected when the spec is read")?;

    let res = run_ksweep::<f32>(&s, out, OutputOptions::default()).map_err(e)?;
    ensure(
        res.k_values() == divisors(144),
        format!("k values {:?}", res.k_values()),
    )?;
    ensure(res.k_values().len() == 15, "expected 15 divisors")?;
    let scane = FusionConfig {
        projector_hidden: s.model.fusion.projector_hidden,
        d_c: s.model.fusion.d_c,
        ..FusionConfig::scane(144)
    }
    .normalized();
    ensure(
        k_config(&s.model.fusion, 144) == scane,
        "k = 144 is not the scalar gate",
    )?;
    let mut rdr = csv::Reader::from_path(out.join("results.csv")).map_err(e)?;
    let header = rdr.headers().map_err(e)?.clone();
    for col in [
        "k",
        "d_prime",
        "scane_equivalent",
        "auprc",
        "auprc_low",
        "auprc_high",
        "auroc",
    ] {
        ensure(
            header.iter().any(|h| h == col),
            format!("results.csv lacks {col}"),
        )?;
    }
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(e)?;
    ensure(rows.len() == 15, "results.csv row count")?;
    let last = rows.last().unwrap();
    ensure(
        &last[0] == "144" && &last[1] == "1" && &last[2] == "true",
        "k = 144 row",
    )?;
    let ok = res.arms.iter().filter(|(_, o)| o.ok()).count();
    Ok(format!(
        "15/15 divisors run ({ok} ok), k = 5 rejected before compute, k = 144 normalizes to scane"
    ))
}

fn criterion_8(out: &Path) -> Outcome {
    let risk = LabelRule::UShaped {
        feature: Some("feat_04".into()),
        inner: 0.8,
        outer: 1.2,
        p_min: 0.02,
        p_max: 0.98,
    };
    let large = SynthSpec {
        entity_prefix: "L".into(),
        label: risk.clone(),
        ..cohort(2000, 4.0)
    };
    let small = SynthSpec {
        feature_offset: 4,
        entity_prefix: "S".into(),
        label: risk,
        ..cohort(400, 4.0)
    };
    let mut s = spec(ExperimentKind::Transfer, vec![1], large.clone(), 0);
    s.data = None;
    s.datasets
        .insert("large".into(), DataRef::synthetic(large, 21));
    s.datasets
        .insert("small".into(), DataRef::synthetic(small, 22));
    s.transfer = TransferSpec {
        directions: vec![["large".into(), "small".into()]],
        freeze_epochs: 3,
        ..Default::default()
    };
    s.train = train_cfg(3e-3, 8, 4);
    let res = run_transfer::<f32>(&s, out, OutputOptions::default()).map_err(e)?;

    let src = s.datasets["large"].load().map_err(e)?;
    let tgt = s.datasets["small"].load().map_err(e)?;
    let a: BTreeSet<String> = src.schema.names().into_iter().collect();
    let b: BTreeSet<String> = tgt.schema.names().into_iter().collect();
    let shared = a.intersection(&b).count();

    let moved = res
        .arms
        .iter()
        .find(|x| x.arm == TransferArm::Transferred)
        .ok_or("no transferred arm")?;
    ensure(
        moved.outcome.ok(),
        format!("transferred arm: {}", moved.outcome.status),
    )?;
    ensure(
        moved.rows.len() == shared,
        format!(
            "{} rows overwritten, {shared} shared features",
            moved.rows.len()
        ),
    )?;
    ensure(
        moved.freeze_held == Some(true),
        "transferred rows moved during the freeze",
    )?;

    let scratch = res
        .arms
        .iter()
        .find(|x| x.arm == TransferArm::Scratch)
        .ok_or("no scratch arm")?;
    let alone = train_arm::<f32>(&tgt, &s.model, &s.train, 1, ArmHooks::default()).map_err(e)?;
    ensure(
        scratch.outcome.final_params == alone.checkpoint.model.params.fingerprint(),
        "scratch arm differs from standalone training",
    )?;
    let sa = scratch
        .outcome
        .report
        .as_ref()
        .map(|r| r.auprc.point)
        .unwrap_or(f64::NAN);
    let ta = moved
        .outcome
        .report
        .as_ref()
        .map(|r| r.auprc.point)
        .unwrap_or(f64::NAN);
    Ok(format!(
        "{shared} shared rows overwritten and frozen for 3 epochs; scratch arm bit-identical to standalone; test AUPRC scratch {sa:.4}, transferred {ta:.4}"
    ))
}

fn criterion_9(out: &Path) -> Outcome {
    let mut s = spec(ExperimentKind::Timefusion, vec![1], cohort(600, 4.0), 31);
    s.train = train_cfg(3e-3, 3, 3);
    s.train.precision = Precision::F64;
    let res = run_timefusion::<f64>(&s, out, OutputOptions::default()).map_err(e)?;
    ensure(
        res.checks.len() == 2,
        "expected one check per injection mode",
    )?;
    for c in &res.checks {
        ensure(c.passed(), format!("{c:?}"))?;
    }

    let mut rdr = csv::Reader::from_path(out.join("traces.csv")).map_err(e)?;
    let mut add_worst: f64 = 0.0;
    // per dim: (|content|, min fused, max fused, min σ(p), max σ(p))
    let mut mult: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(e)?;
        let num = |i: usize| row[i].parse::<f64>().unwrap();
        let (dim, c, p, f) = (row[3].parse::<usize>().unwrap(), num(4), num(5), num(6));
        if &row[0] == "add" {
            let scale = c.abs().max(p.abs());
            add_worst = add_worst.max(((f - c) - p).abs() / (scale * f64::EPSILON));
        } else {
            if mult.len() <= dim {
                mult.resize(dim + 1, (0.0, f64::MAX, f64::MIN, f64::MAX, f64::MIN));
            }
            let g = sigmoid(p);
            let m = &mut mult[dim];
            *m = (c.abs(), m.1.min(f), m.2.max(f), m.3.min(g), m.4.max(g));
        }
    }
    ensure(
        add_worst <= TRACE_EPS,
        format!("add trace minus content strays {add_worst:.1} eps"),
    )?;
    let mut amp_worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for &(c, lo, hi, glo, ghi) in &mult {
        amp_worst = amp_worst.max(((hi - lo) - c * (ghi - glo)).abs());
        ratios.push((c, hi - lo));
    }
    ensure(
        amp_worst <= 1e-12,
        format!("multiplicative swing off by {amp_worst:e}"),
    )?;
    let swings: BTreeSet<u64> = ratios.iter().map(|(_, s)| (s * 1e9) as u64).collect();
    ensure(
        swings.len() > 1,
        "multiplicative swing does not depend on content",
    )?;
    Ok(format!(
        "add: fused − content = sinusoid within {add_worst:.1} eps; multiply: swing = |c|·Δσ to {amp_worst:.1e}, swings {:?}",
        ratios.iter().map(|(_, s)| format!("{s:.3}")).collect::<Vec<_>>()
    ))
}

fn criterion_10(root: &Path) -> Outcome {
    let ctx = |p: Precision| RunContext {
        argv: vec!["acceptance".into()],
        threads: 1,
        precision: p,
    };
    let tiny = |kind: FusionKind| {
        let mut m = toy_model(kind);
        m.encoder.dropout = 0.1;
        m.encoder.max_seq_len = 512;
        m
    };
    let synth = SynthSpec {
        n_entities: 150,
        n_numeric: 4,
        bin_width: 8.0,
        ..Default::default()
    };
    let raw = root.join("synth");
    let tok = root.join("tokenize");
    let model = root.join("train");
    let mut commands: Vec<(&str, Command, Precision)> = vec![
        (
            "synth",
            Command::Synth {
                seed: 3,
                spec: synth.clone(),
            },
            Precision::F64,
        ),
        (
            "tokenize",
            Command::Tokenize {
                events: raw.join("events.csv"),
                labels: raw.join("labels.csv"),
                config: TokenizeConfig {
                    summarization: medfuse_core::data::SummarizationConfig {
                        window_length: 48.0,
                        bin_width: 8.0,
                        horizon: 48.0,
                    },
                    ..Default::default()
                },
            },
            Precision::F64,
        ),
        (
            "train",
            Command::Train {
                data: tok.clone(),
                model: tiny(FusionKind::Mufuse),
                train: train_cfg(1e-3, 2, 2),
            },
            Precision::F32,
        ),
        (
            "evaluate",
            Command::Evaluate {
                checkpoint: model.join("model.ckpt"),
                data: tok.clone(),
                split: Split::Test,
                eval: EvalConfig {
                    n_bootstrap: 50,
                    ..Default::default()
                },
            },
            Precision::F32,
        ),
        (
            "gradcheck",
            Command::Gradcheck {
                seed: 1,
                tolerance: GRAD_TOL,
                model: toy_model(FusionKind::Concat),
            },
            Precision::F64,
        ),
        (
            "dump-embeddings",
            Command::DumpEmbeddings {
                checkpoint: model.join("model.ckpt"),
                data: tok.clone(),
                split: Split::Test,
                limit: Some(5),
            },
            Precision::F32,
        ),
    ];
    for kind in [
        ExperimentKind::Ablation,
        ExperimentKind::Ksweep,
        ExperimentKind::Transfer,
        ExperimentKind::Timefusion,
    ] {
        let mut s = spec(kind, vec![1, 2], synth.clone(), 4);
        s.model = tiny(FusionKind::Mufuse);
        s.train = train_cfg(1e-3, 2, 2);
        s.eval.n_bootstrap = 30;
        s.grid.trace_points = 17;
        if kind == ExperimentKind::Transfer {
            let other = SynthSpec {
                feature_offset: 2,
                entity_prefix: "b".into(),
                ..synth.clone()
            };
            s.data = None;
            s.datasets
                .insert("a".into(), DataRef::synthetic(synth.clone(), 4));
            s.datasets.insert("b".into(), DataRef::synthetic(other, 5));
            s.transfer.directions = vec![["a".into(), "b".into()]];
            s.transfer.freeze_epochs = 1;
            s.transfer.source_subsample = true;
        }
        commands.push((
            kind.as_str(),
            Command::Experiment { spec: Box::new(s) },
            Precision::F32,
        ));
    }

    let mut names = Vec::new();
    for (name, cmd, precision) in &commands {
        let first = run_command(cmd, &ctx(*precision), &root.join(name))
            .map_err(|x| format!("{name}: {x}"))?;
        let again = rerun(&root.join(name), &root.join(format!("{name}-rerun")))
            .map_err(|x| format!("{name} rerun: {x}"))?;
        let bad = output_mismatches(&first.manifest, &again.manifest);
        ensure(
            bad.is_empty(),
            format!("{name}: outputs differ on rerun: {bad:?}"),
        )?;
        ensure(
            !first.manifest.outputs.is_empty(),
            format!("{name}: no outputs recorded"),
        )?;
        names.push(format!("{name} ({})", first.manifest.outputs.len()));
    }
    Ok(format!(
        "byte-identical reruns from manifest: {}",
        names.join(", ")
    ))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .expect("pool");
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let work = tempfile::tempdir().expect("tempdir");
    let dir = |n: &str| work.path().join(n);

    let criteria: Vec<(usize, &str, Check)> = vec![
        (1, "algebraic identities", Box::new(criterion_1)),
        (2, "gradient checks", Box::new(criterion_2)),
        (3, "masking collapse", Box::new(criterion_3)),
        (4, "metric oracles", Box::new(criterion_4)),
        (5, "U-shaped synthetic task", Box::new(criterion_5)),
        (
            6,
            "ablation harness",
            Box::new(move || criterion_6(&dir("ablation"))),
        ),
        (
            7,
            "k-sweep harness",
            Box::new(move || criterion_7(&dir("ksweep"))),
        ),
        (
            8,
            "transfer harness",
            Box::new(move || criterion_8(&dir("transfer"))),
        ),
        (
            9,
            "time-fusion harness",
            Box::new(move || criterion_9(&dir("timefusion"))),
        ),
        (
            10,
            "determinism from manifest",
            Box::new(move || criterion_10(&dir("runs"))),
        ),
    ];
    let mut failed = 0;
    for (n, name, f) in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
