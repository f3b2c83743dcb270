//! Single-file model container.
//!
//! The file is a TOML header (configuration, precision, feature names and the
//! schema hash), a separator line, then one block per tensor:
//!
//! ```text
//! tensor <name> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! ```
//!
//! Values use the shortest decimal form that parses back to the same float,
//! so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureSchema;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::params::Parameters;
use crate::real::{Precision, Real};
use crate::tensor::Mat;

const FORMAT: &str = "medfuse-checkpoint";
const SEPARATOR: &str = "=== tensors ===";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    pub schema_hash: String,
    pub feature_names: Vec<String>,
    /// Class count per feature, 0 for numeric ones.
    pub categories: Vec<usize>,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub schema_hash: String,
    pub feature_names: Vec<String>,
    pub categories: Vec<usize>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: Model<T>, schema: &FeatureSchema) -> Self {
        Checkpoint {
            model,
            schema_hash: schema.hash(),
            feature_names: schema.names(),
            categories: schema.category_counts(),
        }
    }

    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            format: FORMAT.into(),
            version: 1,
            precision: T::PRECISION,
            schema_hash: self.schema_hash.clone(),
            feature_names: self.feature_names.clone(),
            categories: self.categories.clone(),
            model: self.model.config,
        }
    }

    /// Errors unless the checkpoint was trained against `schema`.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.hash() != self.schema_hash {
            return Err(Error::Schema(format!(
                "checkpoint was trained against schema {} but the data uses {}",
                short(&self.schema_hash),
                short(&schema.hash())
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let header = toml::to_string(&self.header()).expect("header serializes");
        let mut out = String::with_capacity(header.len() + 16 * self.model.params.n_scalars());
        out.push_str(&header);
        out.push_str(SEPARATOR);
        out.push('\n');
        for (name, t) in self.model.params.tensors() {
            writeln!(out, "tensor {name} {} {}", t.rows(), t.cols()).expect("string write");
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse = |line: usize, message: String| Error::Parse {
            path: "<checkpoint>".into(),
            message: format!("line {line}: {message}"),
        };
        let (header_text, body) = text
            .split_once(&format!("{SEPARATOR}\n"))
            .ok_or_else(|| parse(1, "missing tensor section".into()))?;
        let header: CheckpointHeader =
            toml::from_str(header_text).map_err(|e| parse(1, e.to_string()))?;
        if header.format != FORMAT || header.version != 1 {
            return Err(parse(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        if header.feature_names.len() != header.categories.len() {
            return Err(parse(
                1,
                "feature_names and categories differ in length".into(),
            ));
        }
        let same_precision = header.precision == T::PRECISION;
        if !same_precision {
            log::warn!(
                "checkpoint stored in {}-bit precision, loading as {}-bit",
                header.precision.bits(),
                T::PRECISION.bits()
            );
        }
        let value = |s: &str| -> Option<T> {
            if same_precision {
                T::parse_str(s)
            } else {
                s.parse::<f64>().ok().map(T::lit)
            }
        };

        let first_body_line = header_text.lines().count() + 2;
        let mut stored: BTreeMap<String, Mat<T>> = BTreeMap::new();
        let mut lines = body
            .lines()
            .enumerate()
            .map(|(i, l)| (i + first_body_line, l));
        while let Some((ln, line)) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (name, rows, cols) = match parts.as_slice() {
                ["tensor", name, r, c] => (
                    name.to_string(),
                    r.parse::<usize>().map_err(|e| parse(ln, e.to_string()))?,
                    c.parse::<usize>().map_err(|e| parse(ln, e.to_string()))?,
                ),
                _ => return Err(parse(ln, format!("expected a tensor header, got `{line}`"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| parse(ln, format!("{name}: truncated tensor")))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(value(tok).ok_or_else(|| parse(ln, format!("bad number `{tok}`")))?);
                }
                if data.len() - before != cols {
                    return Err(parse(ln, format!("{name}: expected {cols} values per row")));
                }
            }
            stored.insert(name, Mat::from_vec(rows, cols, data)?);
        }

        let mut params = ModelParams::<T>::init(&header.model, &header.categories, 0)?;
        let mut missing = Vec::new();
        for (name, t) in params.tensors_mut() {
            match stored.remove(&name) {
                Some(s) if s.shape() == t.shape() => *t = s,
                Some(s) => {
                    return Err(Error::Shape(format!(
                        "{name}: stored {:?}, configuration implies {:?}",
                        s.shape(),
                        t.shape()
                    )))
                }
                None => missing.push(name),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Schema(format!(
                "checkpoint lacks tensors {missing:?}"
            )));
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Schema(format!(
                "unexpected tensor {extra} in checkpoint"
            )));
        }
        Ok(Checkpoint {
            model: Model::new(header.model, params)?,
            schema_hash: header.schema_hash,
            feature_names: header.feature_names,
            categories: header.categories,
        })
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Reads only the header, e.g. to pick the precision before a full load.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.split(SEPARATOR).next().unwrap_or_default();
    toml::from_str(header).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
