//! Ranking metrics for imbalanced binary outcomes and percentile bootstrap
//! intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Streams;

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    Ok(())
}

fn both_classes(labels: &[u8], metric: &str) -> Result<(usize, usize)> {
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{metric} needs both classes, got {p} positive and {n} negative"
        )));
    }
    Ok((p, n))
}

/// Area under the precision–recall step curve. Tied scores enter the curve
/// together as one operating point.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, _) = both_classes(labels, "AUPRC")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Mann–Whitney estimate of P(score⁺ > score⁻) with ties counted ½.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (pos, neg) = both_classes(labels, "AUROC")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // For each tie group: positives beat every negative strictly below it
    // and split the negatives inside it.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        wins += gp as f64 * (neg_below as f64 + 0.5 * gn as f64);
        neg_below += gn;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Fraction of rows where `score ≥ threshold` agrees with the label.
pub fn accuracy_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty sample".into()));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Harrell's concordance index. A pair is comparable when the earlier time
/// carries an observed event; the earlier subject should score higher.
pub fn c_index(scores: &[f64], times: &[f64], events: &[u8]) -> Result<f64> {
    check_inputs(scores, events)?;
    if times.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} times",
            scores.len(),
            times.len()
        )));
    }
    let mut comparable = 0usize;
    let mut concordant = 0.0;
    for i in 0..scores.len() {
        if events[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if times[i] < times[j] {
                comparable += 1;
                if scores[i] > scores[j] {
                    concordant += 1.0;
                } else if scores[i] == scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric(
            "no comparable pairs for the c-index".into(),
        ));
    }
    Ok(concordant / comparable as f64)
}

/// Rows of an evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub times: Option<Vec<f64>>,
}

impl EvalSample {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, times: Option<Vec<f64>>) -> Result<Self> {
        check_inputs(&scores, &labels)?;
        if let Some(t) = &times {
            if t.len() != scores.len() {
                return Err(Error::Shape("one time per score required".into()));
            }
        }
        Ok(EvalSample {
            scores,
            labels,
            times,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn select(&self, idx: &[usize]) -> EvalSample {
        EvalSample {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            times: self
                .times
                .as_ref()
                .map(|t| idx.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Same rows in a canonical order, so resampling does not depend on how
    /// the caller ordered them.
    fn canonical(&self) -> EvalSample {
        let t = |i: usize| self.times.as_ref().map_or(0.0, |t| t[i]);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[a]
                .total_cmp(&self.scores[b])
                .then(self.labels[a].cmp(&self.labels[b]))
                .then(t(a).total_cmp(&t(b)))
        });
        self.select(&idx)
    }
}

/// Metrics with a bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auprc,
    Auroc,
    Accuracy,
    CIndex,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auprc => "auprc",
            Metric::Auroc => "auroc",
            Metric::Accuracy => "accuracy",
            Metric::CIndex => "c_index",
        }
    }

    pub fn compute(self, s: &EvalSample, threshold: f64) -> Result<f64> {
        match self {
            Metric::Auprc => auprc(&s.scores, &s.labels),
            Metric::Auroc => auroc(&s.scores, &s.labels),
            Metric::Accuracy => accuracy_at(&s.scores, &s.labels, threshold),
            Metric::CIndex => match &s.times {
                Some(t) => c_index(&s.scores, t, &s.labels),
                None => Err(Error::UndefinedMetric("c-index needs event times".into())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples discarded because the metric was undefined on them.
    pub redraws: usize,
}

const MAX_ATTEMPTS_PER_REPLICATE: usize = 1000;

/// Percentile interval over `n` row-resamples. Replicate `b` draws from its
/// own stream, so the result is independent of thread count.
pub fn bootstrap_ci<F>(
    metric: F,
    sample: &EvalSample,
    n: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&EvalSample) -> Result<f64> + Sync,
{
    if n == 0 || !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::Config(format!(
            "bootstrap needs n ≥ 1 and a level in (0,1), got n={n} level={level}"
        )));
    }
    metric(sample)?;
    let base = sample.canonical();
    let rows = base.len();
    let streams = Streams::new(seed);
    let draws: Vec<(Option<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let mut rng = streams.indexed("bootstrap", &[b as u64]);
            let mut undefined = 0;
            while undefined < MAX_ATTEMPTS_PER_REPLICATE {
                let idx: Vec<usize> = (0..rows).map(|_| rng.random_range(0..rows)).collect();
                match metric(&base.select(&idx)) {
                    Ok(v) => return (Some(v), undefined),
                    Err(_) => undefined += 1,
                }
            }
            (None, undefined)
        })
        .collect();
    let redraws: usize = draws.iter().map(|d| d.1).sum();
    if draws.iter().any(|d| d.0.is_none()) || redraws as f64 > (redraws + n) as f64 * 0.5 {
        return Err(Error::UndefinedMetric(format!(
            "{redraws} of {} bootstrap resamples were undefined; the sample is too imbalanced",
            redraws + n
        )));
    }
    let mut values: Vec<f64> = draws.into_iter().filter_map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        low: quantile(&values, tail),
        high: quantile(&values, 1.0 - tail),
        redraws,
    })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricCi {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auprc: MetricCi,
    pub auroc: MetricCi,
    pub accuracy: MetricCi,
    /// Absent when the sample has no event times or no comparable pairs.
    pub c_index: Option<MetricCi>,
    pub n_bootstrap: usize,
    pub threshold: f64,
    pub n: usize,
    pub n_positive: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_bootstrap: usize,
    pub level: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_bootstrap: 1000,
            level: 0.95,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl EvalReport {
    /// Point estimates plus bootstrap intervals. Each reported interval is
    /// widened, if needed, to contain its point estimate.
    pub fn compute(sample: &EvalSample, cfg: &EvalConfig) -> Result<Self> {
        let mut redraws = 0;
        let mut with_ci = |m: Metric| -> Result<MetricCi> {
            let point = m.compute(sample, cfg.threshold)?;
            let ci = bootstrap_ci(
                |s| m.compute(s, cfg.threshold),
                sample,
                cfg.n_bootstrap,
                cfg.level,
                cfg.seed,
            )?;
            redraws += ci.redraws;
            Ok(MetricCi {
                point,
                ci_low: ci.low.min(point),
                ci_high: ci.high.max(point),
            })
        };
        let auprc = with_ci(Metric::Auprc)?;
        let auroc = with_ci(Metric::Auroc)?;
        let accuracy = with_ci(Metric::Accuracy)?;
        let c_index = match with_ci(Metric::CIndex) {
            Ok(c) => Some(c),
            Err(Error::UndefinedMetric(msg)) => {
                log::info!("c-index skipped: {msg}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            auprc,
            auroc,
            accuracy,
            c_index,
            n_bootstrap: cfg.n_bootstrap,
            threshold: cfg.threshold,
            n: sample.len(),
            n_positive: class_counts(&sample.labels).0,
            redraws,
        })
    }

    /// `(metric, value)` rows in a fixed order.
    pub fn metrics(&self) -> Vec<(&'static str, Option<MetricCi>)> {
        vec![
            ("auprc", Some(self.auprc)),
            ("auroc", Some(self.auroc)),
            ("accuracy", Some(self.accuracy)),
            ("c_index", self.c_index),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Precision–recall area by re-deriving the confusion matrix at every
    /// distinct threshold.
    fn auprc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut th: Vec<f64> = scores.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut prev_r = 0.0;
        let mut area = 0.0;
        for t in th {
            let (mut tp, mut pp) = (0.0, 0.0);
            for (s, l) in scores.iter().zip(labels) {
                if *s >= t {
                    pp += 1.0;
                    if *l == 1 {
                        tp += 1.0;
                    }
                }
            }
            let r = tp / pos;
            area += (r - prev_r) * (tp / pp);
            prev_r = r;
        }
        area
    }

    fn auroc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn cindex_brute(scores: &[f64], times: &[f64], events: &[u8]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if i != j && events[i] == 1 && times[i] < times[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Scores on a coarse grid so ties are common.
    fn instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>, Vec<f64>) {
        let scores = (0..n)
            .map(|_| rng.random_range(0..6) as f64 / 5.0)
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
        let times = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        (scores, labels, times)
    }

    #[test]
    fn brute_force_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.random_range(2..=20);
            let (s, l, t) = instance(&mut rng, n);
            if let (Ok(a), Ok(b)) = (auprc(&s, &l), auroc(&s, &l)) {
                assert!((a - auprc_brute(&s, &l)).abs() <= 1e-12);
                assert!((b - auroc_brute(&s, &l)).abs() <= 1e-12);
            }
            match cindex_brute(&s, &t, &l) {
                Some(c) => assert!((c_index(&s, &t, &l).unwrap() - c).abs() <= 1e-12),
                None => assert!(c_index(&s, &t, &l).is_err()),
            }
        }
    }

    #[test]
    fn small_examples() {
        assert_eq!(
            auprc(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap(),
            auprc_brute(&[0.9, 0.8, 0.1], &[1, 0, 1])
        );
        assert!(
            (auprc(&[0.9, 0.8, 0.1], &[1, 0, 1]).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15
        );
        assert_eq!(auprc(&[0.9, 0.2, 0.8, 0.1], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(auprc(&[0.3, 0.9], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.2, 0.8, 0.1], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(accuracy_at(&[0.6, 0.4], &[1, 0], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy_at(&[0.5], &[1], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy_at(&[0.5], &[0], 0.5).unwrap(), 0.0);
        assert_eq!(c_index(&[0.9, 0.1], &[1.0, 5.0], &[1, 0]).unwrap(), 1.0);
        assert_eq!(
            c_index(&[0.3; 4], &[1.0, 2.0, 3.0, 4.0], &[1, 1, 0, 0]).unwrap(),
            0.5
        );
    }

    #[test]
    fn undefined_inputs() {
        assert!(matches!(
            auprc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            auroc(&[0.1, 0.2], &[0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            c_index(&[0.1, 0.2], &[1.0, 2.0], &[0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(auroc(&[0.1], &[0, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn random_scores_give_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let p = 0.2;
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < p)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        assert!((auprc(&scores, &labels).unwrap() - p).abs() < 0.05);
        assert!((auroc(&scores, &labels).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn constant_metric_has_zero_width_interval() {
        let s = EvalSample::new(vec![0.9, 0.1, 0.8, 0.3], vec![1, 0, 1, 0], None).unwrap();
        let ci =
            bootstrap_ci(|x| accuracy_at(&x.scores, &x.labels, 0.5), &s, 200, 0.95, 3).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_is_seeded_and_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (s, l, _) = instance(&mut rng, 40);
        let a = EvalSample::new(s.clone(), l.clone(), None).unwrap();
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        let b = a.select(&idx);
        let f = |x: &EvalSample| auroc(&x.scores, &x.labels);
        let ca = bootstrap_ci(f, &a, 300, 0.95, 1).unwrap();
        assert_eq!(ca, bootstrap_ci(f, &a, 300, 0.95, 1).unwrap());
        assert_eq!(ca, bootstrap_ci(f, &b, 300, 0.95, 1).unwrap());
        assert_ne!(ca, bootstrap_ci(f, &a, 300, 0.95, 2).unwrap());
    }

    #[test]
    fn bootstrap_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s, l, _) = instance(&mut rng, 50);
        let a = EvalSample::new(s, l, None).unwrap();
        let f = |x: &EvalSample| auprc(&x.scores, &x.labels);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let c1 = one.install(|| bootstrap_ci(f, &a, 200, 0.95, 4).unwrap());
        let c4 = four.install(|| bootstrap_ci(f, &a, 200, 0.95, 4).unwrap());
        assert_eq!(c1, c4);
    }

    #[test]
    fn rare_positive_counts_redraws_and_aborts_when_hopeless() {
        let mut labels = vec![0u8; 30];
        labels[0] = 1;
        let scores: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let s = EvalSample::new(scores, labels, None).unwrap();
        let f = |x: &EvalSample| auroc(&x.scores, &x.labels);
        // one positive in 30: about 36% of resamples miss it
        let ci = bootstrap_ci(f, &s, 500, 0.95, 0).unwrap();
        assert!(ci.redraws > 0);
        // a metric defined only when every row is drawn is almost never defined
        let s = EvalSample::new(
            (0..10).map(f64::from).collect(),
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            None,
        )
        .unwrap();
        let picky = |x: &EvalSample| {
            let mut v = x.scores.clone();
            v.dedup();
            if v.len() == 10 {
                Ok(1.0)
            } else {
                Err(Error::UndefinedMetric("missing rows".into()))
            }
        };
        assert!(matches!(
            bootstrap_ci(picky, &s, 20, 0.95, 0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn percentile_interval_contains_point_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 200;
        let mut inside = 0;
        for t in 0..trials {
            let n = 80;
            let labels: Vec<u8> = (0..n)
                .map(|_| u8::from(rng.random::<f64>() < 0.3))
                .collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|&l| rng.random::<f64>() + 0.5 * l as f64)
                .collect();
            let s = EvalSample::new(scores, labels, None).unwrap();
            let f = |x: &EvalSample| auroc(&x.scores, &x.labels);
            let point = f(&s).unwrap();
            let ci = bootstrap_ci(f, &s, 200, 0.95, t).unwrap();
            if ci.low <= point && point <= ci.high {
                inside += 1;
            }
        }
        assert!(inside as f64 >= 0.99 * trials as f64, "{inside}/{trials}");
    }

    #[test]
    fn report_intervals_bracket_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, l, t) = instance(&mut rng, 60);
        let sample = EvalSample::new(s, l, Some(t)).unwrap();
        let cfg = EvalConfig {
            n_bootstrap: 100,
            ..Default::default()
        };
        let r = EvalReport::compute(&sample, &cfg).unwrap();
        for (_, m) in r.metrics() {
            let m = m.unwrap();
            assert!(
                0.0 <= m.ci_low && m.ci_low <= m.point && m.point <= m.ci_high && m.ci_high <= 1.0
            );
        }
        let no_times = EvalSample::new(sample.scores.clone(), sample.labels.clone(), None).unwrap();
        assert!(EvalReport::compute(&no_times, &cfg)
            .unwrap()
            .c_index
            .is_none());
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            raw in proptest::collection::vec((0u8..8, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            let warped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() - 3.0).collect();
            if let Ok(a) = auroc(&scores, &labels) {
                prop_assert_eq!(a, auroc(&warped, &labels).unwrap());
                prop_assert_eq!(auprc(&scores, &labels).unwrap(), auprc(&warped, &labels).unwrap());
            }
        }

        #[test]
        fn label_flip_duality(
            raw in proptest::collection::vec((0u8..8, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
            let labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
            if let Ok(a) = auroc(&scores, &labels) {
                prop_assert!((a + auroc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
