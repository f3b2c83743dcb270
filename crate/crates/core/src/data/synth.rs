//! Synthetic cohorts with controllable missingness and label rules.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabelRow, Observation, RawEvent};
use crate::error::{Error, Result};
use crate::rng::Streams;

/// Maps the latent level `z` of the risk feature to a label-1 probability.
///
/// Both rules ramp linearly from `p_min` at `|z| ≤ inner` (or `z ≤ inner`)
/// to `p_max` at `|z| ≥ outer` (or `z ≥ outer`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    /// High risk when the feature is extreme in either direction.
    UShaped {
        #[serde(default)]
        feature: Option<String>,
        inner: f64,
        outer: f64,
        p_min: f64,
        p_max: f64,
    },
    /// High risk when the feature is high.
    Monotone {
        #[serde(default)]
        feature: Option<String>,
        inner: f64,
        outer: f64,
        p_min: f64,
        p_max: f64,
    },
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule::UShaped {
            feature: None,
            inner: 0.8,
            outer: 1.2,
            p_min: 0.02,
            p_max: 0.98,
        }
    }
}

impl LabelRule {
    pub fn probability(&self, z: f64) -> f64 {
        let (x, inner, outer, p_min, p_max) = match *self {
            LabelRule::UShaped {
                inner,
                outer,
                p_min,
                p_max,
                ..
            } => (z.abs(), inner, outer, p_min, p_max),
            LabelRule::Monotone {
                inner,
                outer,
                p_min,
                p_max,
                ..
            } => (z, inner, outer, p_min, p_max),
        };
        let ramp = if outer > inner {
            ((x - inner) / (outer - inner)).clamp(0.0, 1.0)
        } else if x >= inner {
            1.0
        } else {
            0.0
        };
        p_min + (p_max - p_min) * ramp
    }

    fn feature(&self) -> Option<&str> {
        match self {
            LabelRule::UShaped { feature, .. } | LabelRule::Monotone { feature, .. } => {
                feature.as_deref()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let (p_min, p_max) = match *self {
            LabelRule::UShaped { p_min, p_max, .. } | LabelRule::Monotone { p_min, p_max, .. } => {
                (p_min, p_max)
            }
        };
        if !(0.0..=1.0).contains(&p_min) || !(0.0..=1.0).contains(&p_max) {
            return Err(Error::Config(
                "label probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_numeric: usize,
    pub n_categorical: usize,
    pub n_classes: u32,
    /// Probability that a (feature, bin) pair is observed at all.
    pub observation_rate: f64,
    /// Raw records per observed bin are uniform in `1..=max_records_per_bin`.
    pub max_records_per_bin: usize,
    pub window_length: f64,
    pub bin_width: f64,
    pub horizon: f64,
    /// Within-entity measurement noise, in units of the feature's spread.
    pub noise: f64,
    pub feature_prefix: String,
    /// Numbering of numeric feature names starts here.
    pub feature_offset: usize,
    pub entity_prefix: String,
    pub label: LabelRule,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_entities: 1000,
            n_numeric: 9,
            n_categorical: 1,
            n_classes: 4,
            observation_rate: 0.3,
            max_records_per_bin: 3,
            window_length: 48.0,
            bin_width: 2.0,
            horizon: 48.0,
            noise: 0.2,
            feature_prefix: "feat".into(),
            feature_offset: 0,
            entity_prefix: "e".into(),
            label: LabelRule::default(),
        }
    }
}

impl SynthSpec {
    pub fn numeric_names(&self) -> Vec<String> {
        (0..self.n_numeric)
            .map(|i| format!("{}_{:02}", self.feature_prefix, i + self.feature_offset))
            .collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        (0..self.n_categorical)
            .map(|i| format!("cat_{i:02}"))
            .collect()
    }

    pub fn risk_feature(&self) -> Result<String> {
        let names = self.numeric_names();
        match self.label.feature() {
            Some(name) if names.iter().any(|n| n == name) => Ok(name.to_owned()),
            Some(name) => Err(Error::Config(format!(
                "risk feature `{name}` is not a numeric feature of this cohort"
            ))),
            None => names
                .first()
                .cloned()
                .ok_or_else(|| Error::Config("label rule needs a numeric feature".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.observation_rate > 0.0 && self.observation_rate <= 1.0) {
            return Err(Error::Config(format!(
                "observation_rate {} outside (0, 1]",
                self.observation_rate
            )));
        }
        if self.max_records_per_bin == 0 {
            return Err(Error::Config("max_records_per_bin must be ≥ 1".into()));
        }
        if self.n_categorical > 0 && self.n_classes == 0 {
            return Err(Error::Config("n_classes must be ≥ 1".into()));
        }
        let sc = super::SummarizationConfig {
            window_length: self.window_length,
            bin_width: self.bin_width,
            horizon: self.horizon,
        };
        sc.validate()?;
        self.label.validate()?;
        self.risk_feature()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub events: Vec<RawEvent>,
    pub labels: Vec<LabelRow>,
}

/// Generates a reproducible cohort. Entity `i` draws from its own stream, so
/// the first `n` entities are the same for any `n_entities ≥ n`; feature
/// location/scale draw from a stream keyed by feature name, so cohorts
/// sharing a name share that feature's distribution.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SyntheticCohort> {
    spec.validate()?;
    let streams = Streams::new(seed);
    let numeric = spec.numeric_names();
    let categorical = spec.categorical_names();
    let risk = spec.risk_feature()?;
    let n_bins = (spec.window_length / spec.bin_width).round() as usize;

    let scales: Vec<(f64, f64)> = numeric
        .iter()
        .map(|name| {
            let mut rng = Streams::new(0).stream(&format!("feature-scale/{name}"));
            let mu = 10.0 + 90.0 * rng.random::<f64>();
            let sd = 1.0 + 9.0 * rng.random::<f64>();
            (mu, sd)
        })
        .collect();

    let mut events = Vec::new();
    let mut labels = Vec::with_capacity(spec.n_entities);
    for i in 0..spec.n_entities {
        let entity_id = format!("{}{:06}", spec.entity_prefix, i);
        let mut rng = streams.indexed("entity", &[i as u64]);
        let latent: Vec<f64> = numeric
            .iter()
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();

        for bin in 0..n_bins {
            for (f, name) in numeric.iter().enumerate() {
                if !rng.random_bool(spec.observation_rate) {
                    continue;
                }
                let n_rec = rng.random_range(1..=spec.max_records_per_bin);
                for _ in 0..n_rec {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let (mu, sd) = scales[f];
                    events.push(RawEvent {
                        entity_id: entity_id.clone(),
                        feature_name: name.clone(),
                        obs: Observation::Numeric(mu + sd * (latent[f] + spec.noise * eps)),
                        timestamp: in_bin(&mut rng, bin, spec),
                    });
                }
            }
            for name in &categorical {
                if !rng.random_bool(spec.observation_rate) {
                    continue;
                }
                let n_rec = rng.random_range(1..=spec.max_records_per_bin);
                for _ in 0..n_rec {
                    events.push(RawEvent {
                        entity_id: entity_id.clone(),
                        feature_name: name.clone(),
                        obs: Observation::Categorical(rng.random_range(0..spec.n_classes)),
                        timestamp: in_bin(&mut rng, bin, spec),
                    });
                }
            }
        }

        let z = latent[numeric.iter().position(|n| *n == risk).expect("validated")];
        let p = spec.label.probability(z);
        let label = u8::from(rng.random_bool(p));
        let event_time = if label == 1 {
            // more extreme latent level → earlier event
            let u: f64 = rng.random();
            spec.window_length + spec.horizon * u.powf(1.0 + z.abs())
        } else {
            spec.window_length + spec.horizon
        };
        labels.push(LabelRow {
            entity_id,
            label,
            event_time: Some(event_time),
        });
    }
    Ok(SyntheticCohort { events, labels })
}

fn in_bin(rng: &mut impl Rng, bin: usize, spec: &SynthSpec) -> f64 {
    let t = (bin as f64 + rng.random::<f64>()) * spec.bin_width;
    if t < spec.window_length {
        t
    } else {
        bin as f64 * spec.bin_width
    }
}
