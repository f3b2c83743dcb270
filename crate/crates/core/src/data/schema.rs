use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FeatureKind, Observation, RawEvent};
use crate::error::{Error, Result};

/// Per-feature normalization and vocabulary metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Class count `C_f` (categorical features only).
    #[serde(default)]
    pub categories: usize,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub std: f64,
    /// Numeric feature whose training values have zero spread.
    #[serde(default)]
    pub constant: bool,
    /// False when the feature never occurs in the training split.
    #[serde(default = "yes")]
    pub observed: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// A feature known to exist, independent of the split it was seen in.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecl {
    pub name: String,
    pub kind: FeatureKind,
    pub categories: usize,
}

impl FeatureDecl {
    /// Collects the distinct features of an event list, sorted by name.
    pub fn from_events(events: &[RawEvent]) -> Result<Vec<FeatureDecl>> {
        let mut by_name: BTreeMap<&str, FeatureDecl> = BTreeMap::new();
        for ev in events {
            let kind = ev.obs.kind();
            let cats = match ev.obs {
                Observation::Categorical(c) => c as usize + 1,
                Observation::Numeric(_) => 0,
            };
            let decl = by_name
                .entry(ev.feature_name.as_str())
                .or_insert_with(|| FeatureDecl {
                    name: ev.feature_name.clone(),
                    kind,
                    categories: 0,
                });
            if decl.kind != kind {
                return Err(Error::Schema(format!(
                    "feature `{}` appears as both {} and {}",
                    ev.feature_name,
                    decl.kind.as_str(),
                    kind.as_str()
                )));
            }
            decl.categories = decl.categories.max(cats);
        }
        Ok(by_name.into_values().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureSchema {
    #[serde(rename = "feature", default)]
    pub features: Vec<FeatureSpec>,
}

/// Fits normalization statistics on the training split only.
///
/// `declared` lists every feature the schema must contain (typically the
/// union over all splits); statistics come exclusively from `train`.
/// Features sorted by name define the feature index.
pub fn fit_schema(train: &[RawEvent], declared: &[FeatureDecl]) -> Result<FeatureSchema> {
    if train.is_empty() {
        return Err(Error::Schema("empty training split".into()));
    }
    let mut decls: BTreeMap<String, FeatureDecl> = BTreeMap::new();
    for d in declared
        .iter()
        .cloned()
        .chain(FeatureDecl::from_events(train)?)
    {
        match decls.get_mut(&d.name) {
            Some(prev) if prev.kind != d.kind => {
                return Err(Error::Schema(format!(
                    "feature `{}` declared with conflicting kinds",
                    d.name
                )))
            }
            Some(prev) => prev.categories = prev.categories.max(d.categories),
            None => {
                decls.insert(d.name.clone(), d);
            }
        }
    }

    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for ev in train {
        *seen.entry(ev.feature_name.as_str()).or_default() += 1;
        if let Observation::Numeric(v) = ev.obs {
            if !v.is_finite() {
                return Err(Error::Schema(format!(
                    "non-finite value for `{}` (entity {})",
                    ev.feature_name, ev.entity_id
                )));
            }
            values.entry(ev.feature_name.as_str()).or_default().push(v);
        }
    }

    let mut features = Vec::with_capacity(decls.len());
    for d in decls.into_values() {
        let observed = seen.contains_key(d.name.as_str());
        let mut spec = FeatureSpec {
            name: d.name.clone(),
            kind: d.kind,
            categories: d.categories,
            mean: 0.0,
            std: 1.0,
            constant: false,
            observed,
        };
        if d.kind == FeatureKind::Numeric {
            match values.get(d.name.as_str()) {
                Some(vs) => {
                    let (mean, std) = population_stats(vs);
                    spec.mean = mean;
                    spec.std = std;
                    spec.constant = std <= 1e-12 * mean.abs().max(1.0);
                }
                None => {
                    spec.constant = true;
                }
            }
        }
        if !observed {
            log::warn!("feature `{}` never observed in training split", d.name);
        }
        features.push(spec);
    }
    Ok(FeatureSchema { features })
}

fn population_stats(vs: &[f64]) -> (f64, f64) {
    let n = vs.len() as f64;
    let mean = vs.iter().sum::<f64>() / n;
    let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl FeatureSchema {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn get(&self, feature_id: usize) -> Result<&FeatureSpec> {
        self.features.get(feature_id).ok_or(Error::Index {
            what: "feature",
            index: feature_id,
            size: self.features.len(),
        })
    }

    /// z-score with training statistics; constant features map to 0.
    pub fn normalize(&self, feature_id: usize, v: f64) -> Result<f64> {
        let f = self.get(feature_id)?;
        Ok(if f.constant {
            0.0
        } else {
            (v - f.mean) / f.std
        })
    }

    pub fn denormalize(&self, feature_id: usize, z: f64) -> Result<f64> {
        let f = self.get(feature_id)?;
        Ok(if f.constant {
            f.mean
        } else {
            z * f.std + f.mean
        })
    }

    /// Class counts per feature (0 for numeric features).
    pub fn category_counts(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::Categorical => f.categories,
                FeatureKind::Numeric => 0,
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Content hash of the serialized schema.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(entity: &str, name: &str, v: f64) -> RawEvent {
        RawEvent {
            entity_id: entity.into(),
            feature_name: name.into(),
            obs: Observation::Numeric(v),
            timestamp: 0.0,
        }
    }

    #[test]
    fn constant_feature_is_flagged_and_normalizes_to_zero() {
        let train: Vec<_> = (0..3).map(|_| num("a", "hr", 1.0)).collect();
        let s = fit_schema(&train, &[]).unwrap();
        let f = &s.features[0];
        assert_eq!(f.mean, 1.0);
        assert_eq!(f.std, 0.0);
        assert!(f.constant);
        assert_eq!(s.normalize(0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn population_std_of_two_points() {
        let train = vec![num("a", "x", 0.0), num("b", "x", 2.0)];
        let s = fit_schema(&train, &[]).unwrap();
        assert_eq!(s.features[0].mean, 1.0);
        assert_eq!(s.features[0].std, 1.0);
        assert!(!s.features[0].constant);
    }

    #[test]
    fn stats_match_brute_force() {
        let vals = [3.5, -1.25, 7.0, 0.5, 2.0];
        let train: Vec<_> = vals.iter().map(|&v| num("a", "x", v)).collect();
        let s = fit_schema(&train, &[]).unwrap();
        let n = vals.len() as f64;
        let mean: f64 = vals.iter().sum::<f64>() / n;
        let mut var = 0.0;
        for v in vals {
            var += (v - mean).powi(2);
        }
        assert!((s.features[0].mean - mean).abs() < 1e-15);
        assert!((s.features[0].std - (var / n).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn applying_schema_to_test_uses_train_stats() {
        let train = vec![num("a", "x", 0.0), num("b", "x", 2.0)];
        let s = fit_schema(&train, &[]).unwrap();
        // a test value far outside the training range is normalized with the
        // training mean/std, never refit
        assert_eq!(s.normalize(0, 101.0).unwrap(), 100.0);
    }

    #[test]
    fn unobserved_declared_feature_is_flagged() {
        let train = vec![num("a", "x", 1.0), num("b", "x", 2.0)];
        let decl = FeatureDecl {
            name: "y".into(),
            kind: FeatureKind::Numeric,
            categories: 0,
        };
        let s = fit_schema(&train, &[decl]).unwrap();
        let y = &s.features[s.index_of("y").unwrap()];
        assert!(!y.observed);
        assert!(y.constant);
    }

    #[test]
    fn kind_conflict_is_rejected() {
        let mut cat = num("a", "x", 0.0);
        cat.obs = Observation::Categorical(1);
        assert!(fit_schema(&[num("a", "x", 1.0), cat], &[]).is_err());
    }

    #[test]
    fn empty_training_split_is_rejected() {
        assert!(fit_schema(&[], &[]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut train = vec![num("a", "x", 0.0), num("b", "x", 2.0)];
        train.push(RawEvent {
            entity_id: "a".into(),
            feature_name: "gcs".into(),
            obs: Observation::Categorical(4),
            timestamp: 0.0,
        });
        let s = fit_schema(&train, &[]).unwrap();
        let back = FeatureSchema::from_toml(&s.to_toml()).unwrap();
        assert_eq!(s, back);
        assert_eq!(back.category_counts(), vec![5, 0]);
    }

    proptest::proptest! {
        #[test]
        fn normalization_round_trip(v in -1e6f64..1e6, a in -100f64..100.0, b in 0.1f64..100.0) {
            let train = vec![num("p", "x", a), num("q", "x", a + b)];
            let s = fit_schema(&train, &[]).unwrap();
            let back = s.denormalize(0, s.normalize(0, v).unwrap()).unwrap();
            let scale = v.abs() + a.abs() + b.abs();
            proptest::prop_assert!((back - v).abs() <= 8.0 * f64::EPSILON * scale);
        }
    }
}
