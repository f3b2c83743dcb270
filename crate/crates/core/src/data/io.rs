//! Delimited-text event and label files.
//!
//! Events: `entity_id,feature_name,kind,value,category,timestamp` with a
//! header row; `value` is empty for categorical rows and `category` empty for
//! numeric rows. Labels: `entity_id,label[,event_time]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, LabelRow, Observation, RawEvent};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    entity_id: String,
    feature_name: String,
    kind: FeatureKind,
    value: Option<f64>,
    category: Option<u32>,
    timestamp: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelFileRow {
    entity_id: String,
    label: u8,
    #[serde(default)]
    event_time: Option<f64>,
}

pub fn read_events(path: &Path) -> Result<Vec<RawEvent>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<EventRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let obs = match (row.kind, row.value, row.category) {
            (FeatureKind::Numeric, Some(v), None) => Observation::Numeric(v),
            (FeatureKind::Categorical, None, Some(c)) => Observation::Categorical(c),
            _ => {
                return Err(parse_err(
                    path,
                    line,
                    format!(
                        "{} row must populate exactly {}",
                        row.kind.as_str(),
                        match row.kind {
                            FeatureKind::Numeric => "value",
                            FeatureKind::Categorical => "category",
                        }
                    ),
                ))
            }
        };
        out.push(RawEvent {
            entity_id: row.entity_id,
            feature_name: row.feature_name,
            obs,
            timestamp: row.timestamp,
        });
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[RawEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        let (value, category) = match e.obs {
            Observation::Numeric(v) => (Some(v), None),
            Observation::Categorical(c) => (None, Some(c)),
        };
        w.serialize(EventRow {
            entity_id: e.entity_id.clone(),
            feature_name: e.feature_name.clone(),
            kind: e.obs.kind(),
            value,
            category,
            timestamp: e.timestamp,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<LabelFileRow>().enumerate() {
        let row = row.map_err(|e| parse_err(path, i + 2, e.to_string()))?;
        if row.label > 1 {
            return Err(parse_err(
                path,
                i + 2,
                format!("label {} not in {{0,1}}", row.label),
            ));
        }
        out.push(LabelRow {
            entity_id: row.entity_id,
            label: row.label,
            event_time: row.event_time,
        });
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[LabelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(LabelFileRow {
            entity_id: l.entity_id.clone(),
            label: l.label,
            event_time: l.event_time,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_owned(),
        message: format!("line {line}: {message}"),
    }
}
