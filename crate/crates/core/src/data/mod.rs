//! Event ingestion, windowed summarization and imputation-free tokenization.

mod dataset;
mod io;
mod schema;
mod summarize;
mod synth;

use serde::{Deserialize, Serialize};

pub use dataset::{tokenize, Split, SplitConfig, TokenizeConfig, TokenizedDataset};
pub use io::{read_events, read_labels, write_events, write_labels};
pub use schema::{fit_schema, FeatureDecl, FeatureSchema, FeatureSpec};
pub use summarize::{median, mode, summarize, SummarizationConfig};
pub use synth::{generate_synthetic, LabelRule, SynthSpec, SyntheticCohort};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Categorical => "categorical",
        }
    }
}

/// The observed content of one event: a real value or a class index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Numeric(f64),
    Categorical(u32),
}

impl Observation {
    pub fn kind(&self) -> FeatureKind {
        match self {
            Observation::Numeric(_) => FeatureKind::Numeric,
            Observation::Categorical(_) => FeatureKind::Categorical,
        }
    }
}

/// A raw event keyed by feature name, as it appears in an event file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub entity_id: String,
    pub feature_name: String,
    pub obs: Observation,
    pub timestamp: f64,
}

/// A raw event resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub entity_id: String,
    pub feature_id: usize,
    pub obs: Observation,
    /// Elapsed time since the entity's window origin.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub entity_id: String,
    pub label: u8,
    pub event_time: Option<f64>,
}

/// One observed (feature, bin) pair. Numeric values are z-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Token {
    pub feature_id: usize,
    pub obs: Observation,
    /// Bin-center elapsed time.
    pub time: f64,
}

/// Model input for one entity. Token presence is the observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub entity_id: String,
    pub tokens: Vec<Token>,
    pub label: u8,
    pub event_time: Option<f64>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
