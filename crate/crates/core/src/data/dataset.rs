use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_schema, summarize, EventRecord, FeatureDecl, FeatureKind, FeatureSchema, LabelRow,
    Observation, RawEvent, SummarizationConfig, Token, TokenSequence,
};
use crate::error::{Error, Result};
use crate::rng::Streams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.7,
            val: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TokenizeConfig {
    #[serde(default)]
    pub summarization: SummarizationConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedDataset {
    pub schema: FeatureSchema,
    pub summarization: SummarizationConfig,
    pub entries: Vec<(Split, TokenSequence)>,
}

/// Splits entities, fits the schema on the training split and summarizes
/// every entity. Entities without any observation are dropped (the encoder
/// needs at least one token).
pub fn tokenize(
    events: &[RawEvent],
    labels: &[LabelRow],
    cfg: &TokenizeConfig,
) -> Result<TokenizedDataset> {
    cfg.summarization.validate()?;
    let s = cfg.split;
    if !(s.train > 0.0 && s.val >= 0.0 && s.train + s.val <= 1.0) {
        return Err(Error::Config(format!(
            "invalid split fractions train={} val={}",
            s.train, s.val
        )));
    }

    let mut ids: Vec<&str> = labels.iter().map(|l| l.entity_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate entity in label file".into()));
    }
    ids.shuffle(&mut Streams::new(s.seed).stream("split"));
    let n = ids.len();
    let n_train = (s.train * n as f64).round() as usize;
    let n_val = ((s.val * n as f64).round() as usize).min(n - n_train);
    let split_of: HashMap<&str, Split> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let sp = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (*id, sp)
        })
        .collect();

    let mut by_entity: BTreeMap<&str, Vec<&RawEvent>> = BTreeMap::new();
    for e in events {
        if !split_of.contains_key(e.entity_id.as_str()) {
            return Err(Error::Schema(format!(
                "no label for entity `{}`",
                e.entity_id
            )));
        }
        by_entity.entry(e.entity_id.as_str()).or_default().push(e);
    }

    let train_events: Vec<RawEvent> = events
        .iter()
        .filter(|e| split_of[e.entity_id.as_str()] == Split::Train)
        .cloned()
        .collect();
    let declared = FeatureDecl::from_events(events)?;
    let schema = fit_schema(&train_events, &declared)?;
    let index: HashMap<&str, usize> = schema
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i))
        .collect();

    let mut sorted_labels: Vec<&LabelRow> = labels.iter().collect();
    sorted_labels.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    let entries: Vec<Option<(Split, TokenSequence)>> = sorted_labels
        .par_iter()
        .map(|l| -> Result<Option<(Split, TokenSequence)>> {
            let raw = by_entity
                .get(l.entity_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let records: Vec<EventRecord> = raw
                .iter()
                .map(|e| EventRecord {
                    entity_id: e.entity_id.clone(),
                    feature_id: index[e.feature_name.as_str()],
                    obs: e.obs,
                    timestamp: e.timestamp,
                })
                .collect();
            let mut seq = summarize(&l.entity_id, &records, &cfg.summarization, &schema)?;
            if seq.is_empty() {
                log::warn!("entity `{}` has no observations; dropped", l.entity_id);
                return Ok(None);
            }
            seq.label = l.label;
            seq.event_time = l.event_time;
            Ok(Some((split_of[l.entity_id.as_str()], seq)))
        })
        .collect::<Result<_>>()?;

    Ok(TokenizedDataset {
        schema,
        summarization: cfg.summarization,
        entries: entries.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EntityRow {
    entity_id: String,
    split: Split,
    label: u8,
    event_time: Option<f64>,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenRow {
    entity_id: String,
    feature_id: usize,
    feature_name: String,
    kind: FeatureKind,
    value: Option<f64>,
    category: Option<u32>,
    time: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    summarization: SummarizationConfig,
}

impl TokenizedDataset {
    pub fn split(&self, split: Split) -> Vec<TokenSequence> {
        self.entries
            .iter()
            .filter(|(s, _)| *s == split)
            .map(|(_, seq)| seq.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|(s, _)| *s == split).count()
    }

    /// Fraction of (entity, feature, bin) cells without a token.
    pub fn missing_rate(&self) -> f64 {
        let cells = self.entries.len() * self.schema.len() * self.summarization.n_bins();
        let tokens: usize = self.entries.iter().map(|(_, s)| s.len()).sum();
        1.0 - tokens as f64 / cells as f64
    }

    /// Keeps only the first `n` training entities of a seeded permutation;
    /// validation and test splits are untouched.
    pub fn subsample_train(&self, n: usize, seed: u64) -> TokenizedDataset {
        let mut train_idx: Vec<usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, (s, _))| *s == Split::Train)
            .map(|(i, _)| i)
            .collect();
        train_idx.shuffle(&mut Streams::new(seed).stream("subsample"));
        train_idx.truncate(n);
        train_idx.sort_unstable();
        let keep: std::collections::HashSet<usize> = train_idx.into_iter().collect();
        TokenizedDataset {
            schema: self.schema.clone(),
            summarization: self.summarization,
            entries: self
                .entries
                .iter()
                .enumerate()
                .filter(|(i, (s, _))| *s != Split::Train || keep.contains(i))
                .map(|(_, e)| e.clone())
                .collect(),
        }
    }

    /// Writes `schema.toml`, `dataset.toml`, `entities.csv` and `tokens.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.schema.save(&dir.join("schema.toml"))?;
        let meta = toml::to_string(&DatasetMeta {
            summarization: self.summarization,
        })
        .expect("meta serializes");
        let p = dir.join("dataset.toml");
        std::fs::write(&p, meta).map_err(|e| Error::io(&p, e))?;

        let mut ents = csv::Writer::from_path(dir.join("entities.csv"))?;
        let mut toks = csv::Writer::from_path(dir.join("tokens.csv"))?;
        for (split, seq) in &self.entries {
            ents.serialize(EntityRow {
                entity_id: seq.entity_id.clone(),
                split: *split,
                label: seq.label,
                event_time: seq.event_time,
                length: seq.len(),
            })?;
            for t in &seq.tokens {
                let (value, category) = match t.obs {
                    Observation::Numeric(v) => (Some(v), None),
                    Observation::Categorical(c) => (None, Some(c)),
                };
                toks.serialize(TokenRow {
                    entity_id: seq.entity_id.clone(),
                    feature_id: t.feature_id,
                    feature_name: self.schema.features[t.feature_id].name.clone(),
                    kind: t.obs.kind(),
                    value,
                    category,
                    time: t.time,
                })?;
            }
        }
        ents.flush().map_err(|e| Error::io(dir, e))?;
        toks.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let schema = FeatureSchema::load(&dir.join("schema.toml"))?;
        let p = dir.join("dataset.toml");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: DatasetMeta = toml::from_str(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            message: e.to_string(),
        })?;

        let mut tokens: HashMap<String, Vec<Token>> = HashMap::new();
        let tp = dir.join("tokens.csv");
        for (i, row) in csv::Reader::from_path(&tp)?
            .deserialize::<TokenRow>()
            .enumerate()
        {
            let row = row.map_err(|e| Error::Parse {
                path: tp.clone(),
                message: format!("line {}: {e}", i + 2),
            })?;
            let obs = match (row.kind, row.value, row.category) {
                (FeatureKind::Numeric, Some(v), _) => Observation::Numeric(v),
                (FeatureKind::Categorical, _, Some(c)) => Observation::Categorical(c),
                _ => {
                    return Err(Error::Parse {
                        path: tp.clone(),
                        message: format!("line {}: token without content", i + 2),
                    })
                }
            };
            schema.get(row.feature_id)?;
            tokens.entry(row.entity_id).or_default().push(Token {
                feature_id: row.feature_id,
                obs,
                time: row.time,
            });
        }

        let ep = dir.join("entities.csv");
        let mut entries = Vec::new();
        for (i, row) in csv::Reader::from_path(&ep)?
            .deserialize::<EntityRow>()
            .enumerate()
        {
            let row = row.map_err(|e| Error::Parse {
                path: ep.clone(),
                message: format!("line {}: {e}", i + 2),
            })?;
            let toks = tokens.remove(&row.entity_id).unwrap_or_default();
            if toks.len() != row.length {
                return Err(Error::Parse {
                    path: ep.clone(),
                    message: format!(
                        "entity `{}` declares {} tokens, found {}",
                        row.entity_id,
                        row.length,
                        toks.len()
                    ),
                });
            }
            entries.push((
                row.split,
                TokenSequence {
                    entity_id: row.entity_id,
                    tokens: toks,
                    label: row.label,
                    event_time: row.event_time,
                },
            ));
        }
        Ok(TokenizedDataset {
            schema,
            summarization: meta.summarization,
            entries,
        })
    }
}
