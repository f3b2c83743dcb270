//! Reproducibility manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Precision;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Full argument vector, program name first.
    pub command: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub precision: Precision,
    /// Resolved configuration the command ran with, as TOML.
    pub config: String,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: Vec<String>, seed: u64, threads: usize, precision: Precision) -> Self {
        RunManifest {
            tool: "medfuse".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            seed,
            threads,
            precision,
            config: String::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn with_config<C: Serialize>(mut self, config: &C) -> Result<Self> {
        self.config = toml::to_string(config)
            .map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))?;
        self.config.truncate(self.config.trim_end().len());
        self.config.push('\n');
        Ok(self)
    }

    /// Hashes a file or, recursively, every file of a directory.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        for (rel, hash) in hash_tree(path)? {
            let key = if rel.as_os_str().is_empty() {
                path.display().to_string()
            } else {
                path.join(rel).display().to_string()
            };
            self.inputs.insert(key, hash);
        }
        Ok(())
    }

    /// Records hashes of everything currently in `dir` except the manifest.
    pub fn record_outputs(&mut self, dir: &Path) -> Result<()> {
        self.outputs = hash_tree(dir)?
            .into_iter()
            .filter(|(rel, _)| rel != Path::new(MANIFEST_FILE))
            .map(|(rel, h)| (rel.to_string_lossy().replace('\\', "/"), h))
            .collect();
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path,
            message: e.to_string(),
        })
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// `(relative path, sha256)` for a file (empty relative path) or for every
/// file below a directory, sorted by path.
pub fn hash_tree(root: &Path) -> Result<Vec<(PathBuf, String)>> {
    if root.is_file() {
        return Ok(vec![(PathBuf::new(), hash_file(root)?)]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("below root").to_path_buf();
                out.push((rel, hash_file(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}
