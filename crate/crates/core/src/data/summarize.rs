use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EventRecord, FeatureKind, FeatureSchema, Observation, Token, TokenSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummarizationConfig {
    /// Total observation span `L`.
    pub window_length: f64,
    pub bin_width: f64,
    /// Label horizon `τ`; only carried for labeling semantics.
    #[serde(default)]
    pub horizon: f64,
}

impl Default for SummarizationConfig {
    /// ICU setting: 48 h window, 2 h bins.
    fn default() -> Self {
        SummarizationConfig {
            window_length: 48.0,
            bin_width: 2.0,
            horizon: 0.0,
        }
    }
}

impl SummarizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_length > 0.0 && self.bin_width > 0.0) {
            return Err(Error::Config(
                "window_length and bin_width must be positive".into(),
            ));
        }
        let ratio = self.window_length / self.bin_width;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "bin_width {} does not divide window_length {}",
                self.bin_width, self.window_length
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.window_length / self.bin_width).round() as usize
    }

    pub fn bin_of(&self, t: f64) -> usize {
        ((t / self.bin_width).floor() as usize).min(self.n_bins() - 1)
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width
    }
}

/// Median; for an even count the mean of the two central values.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Most frequent class; ties go to the smallest class index.
pub fn mode(classes: &[u32]) -> u32 {
    assert!(!classes.is_empty(), "mode of empty slice");
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &c in classes {
        *counts.entry(c).or_default() += 1;
    }
    // BTreeMap iterates ascending, so the first maximum wins ties.
    let mut best = (0u32, 0usize);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Summarizes one entity's raw records into bin-level tokens.
///
/// One token per observed (feature, bin) pair; numeric bins take the median
/// (then z-normalized), categorical bins the modal class. Unobserved pairs
/// produce nothing. Returned with `label = 0`; callers attach outcomes.
pub fn summarize(
    entity_id: &str,
    records: &[EventRecord],
    cfg: &SummarizationConfig,
    schema: &FeatureSchema,
) -> Result<TokenSequence> {
    cfg.validate()?;
    // keyed by (bin, feature) so iteration order is the output order
    let mut groups: BTreeMap<(usize, usize), Vec<Observation>> = BTreeMap::new();
    for r in records {
        if r.entity_id != entity_id {
            return Err(Error::Contract(format!(
                "record for entity `{}` passed while summarizing `{entity_id}`",
                r.entity_id
            )));
        }
        if !(r.timestamp >= 0.0 && r.timestamp < cfg.window_length) {
            return Err(Error::WindowViolation {
                entity: entity_id.to_owned(),
                timestamp: r.timestamp,
                window: cfg.window_length,
            });
        }
        let spec = schema.get(r.feature_id).map_err(|_| {
            Error::Schema(format!(
                "unknown feature id {} (schema has {})",
                r.feature_id,
                schema.len()
            ))
        })?;
        match (spec.kind, r.obs) {
            (FeatureKind::Numeric, Observation::Numeric(v)) if v.is_finite() => {}
            (FeatureKind::Categorical, Observation::Categorical(c))
                if (c as usize) < spec.categories => {}
            _ => {
                return Err(Error::Schema(format!(
                    "observation {:?} invalid for feature `{}` ({})",
                    r.obs,
                    spec.name,
                    spec.kind.as_str()
                )))
            }
        }
        groups
            .entry((cfg.bin_of(r.timestamp), r.feature_id))
            .or_default()
            .push(r.obs);
    }

    let mut tokens = Vec::with_capacity(groups.len());
    for ((bin, feature_id), obs) in groups {
        let summarized = match obs[0] {
            Observation::Numeric(_) => {
                let mut vs: Vec<f64> = obs
                    .iter()
                    .map(|o| match o {
                        Observation::Numeric(v) => *v,
                        Observation::Categorical(_) => unreachable!(),
                    })
                    .collect();
                Observation::Numeric(schema.normalize(feature_id, median(&mut vs))?)
            }
            Observation::Categorical(_) => {
                let cs: Vec<u32> = obs
                    .iter()
                    .map(|o| match o {
                        Observation::Categorical(c) => *c,
                        Observation::Numeric(_) => unreachable!(),
                    })
                    .collect();
                Observation::Categorical(mode(&cs))
            }
        };
        tokens.push(Token {
            feature_id,
            obs: summarized,
            time: cfg.bin_center(bin),
        });
    }
    Ok(TokenSequence {
        entity_id: entity_id.to_owned(),
        tokens,
        label: 0,
        event_time: None,
    })
}
