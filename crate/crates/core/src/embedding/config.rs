use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Sigmoid-gated, block-broadcast Hadamard product.
    Mufuse,
    /// `e_f + e_v`.
    Additive,
    /// Learned projection of `[e_f ; e_v]`.
    Concat,
    /// Single scalar gate per token; MuFuse with `d' = 1`.
    Scane,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Mufuse => "mufuse",
            FusionKind::Additive => "additive",
            FusionKind::Concat => "concat",
            FusionKind::Scane => "scane",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mufuse" => Ok(FusionKind::Mufuse),
            "additive" => Ok(FusionKind::Additive),
            "concat" => Ok(FusionKind::Concat),
            "scane" => Ok(FusionKind::Scane),
            other => Err(Error::Config(format!("unknown fusion kind `{other}`"))),
        }
    }
}

/// Dimensions of the token-embedding path.
///
/// `d` is the token width, `d_prime` the value-embedding width and `k` the
/// number of feature-embedding entries each gate governs (`d = d' · k` for
/// MuFuse).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionConfig {
    pub kind: FusionKind,
    pub d: usize,
    pub d_prime: usize,
    pub k: usize,
    #[serde(default = "default_hidden")]
    pub projector_hidden: usize,
    #[serde(default = "default_d_c")]
    pub d_c: usize,
}

fn default_hidden() -> usize {
    16
}

fn default_d_c() -> usize {
    16
}

impl FusionConfig {
    pub fn mufuse(d: usize, k: usize) -> Self {
        FusionConfig {
            kind: FusionKind::Mufuse,
            d,
            d_prime: d.checked_div(k).unwrap_or(0),
            k,
            projector_hidden: default_hidden(),
            d_c: default_d_c(),
        }
    }

    pub fn scane(d: usize) -> Self {
        FusionConfig {
            kind: FusionKind::Scane,
            d,
            d_prime: 1,
            k: d,
            ..Self::mufuse(d, d)
        }
    }

    pub fn additive(d: usize) -> Self {
        FusionConfig {
            kind: FusionKind::Additive,
            d,
            d_prime: d,
            k: 1,
            ..Self::mufuse(d, 1)
        }
    }

    pub fn concat(d: usize, d_prime: usize) -> Self {
        FusionConfig {
            kind: FusionKind::Concat,
            d,
            d_prime,
            k: 1,
            ..Self::mufuse(d, 1)
        }
    }

    /// Builds the arm of `kind` that shares `d`, `k`-derived `d'` (where the
    /// kind allows it), hidden width and `d_c` with `self`.
    pub fn with_kind(&self, kind: FusionKind) -> Self {
        let base = match kind {
            FusionKind::Mufuse => Self::mufuse(self.d, self.k.max(1)),
            FusionKind::Scane => Self::scane(self.d),
            FusionKind::Additive => Self::additive(self.d),
            FusionKind::Concat => Self::concat(self.d, self.d_prime),
        };
        FusionConfig {
            projector_hidden: self.projector_hidden,
            d_c: self.d_c,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_prime == 0 || self.projector_hidden == 0 || self.d_c == 0 {
            return Err(Error::Config("fusion dimensions must be positive".into()));
        }
        match self.kind {
            FusionKind::Mufuse => {
                if self.k == 0 || self.d_prime * self.k != self.d {
                    return Err(Error::Config(format!(
                        "mufuse requires d = d' × k (d={}, d'={}, k={})",
                        self.d, self.d_prime, self.k
                    )));
                }
            }
            FusionKind::Scane => {
                if self.d_prime != 1 || self.k != self.d {
                    return Err(Error::Config("scane requires d' = 1 and k = d".into()));
                }
            }
            FusionKind::Additive => {
                if self.d_prime != self.d {
                    return Err(Error::Config("additive fusion requires d' = d".into()));
                }
            }
            FusionKind::Concat => {}
        }
        Ok(())
    }

    /// Canonical form: SCANE is rewritten as MuFuse with `d' = 1, k = d`.
    pub fn normalized(&self) -> Self {
        match self.kind {
            FusionKind::Scane => FusionConfig {
                kind: FusionKind::Mufuse,
                d_prime: 1,
                k: self.d,
                ..*self
            },
            _ => *self,
        }
    }

    /// True when the fused output is a gated product (MuFuse or SCANE).
    pub fn is_gated(&self) -> bool {
        matches!(self.kind, FusionKind::Mufuse | FusionKind::Scane)
    }
}

/// How the time encoding is combined with token content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TimeInjection {
    #[default]
    Add,
    /// `content ⊙ σ(p_t)`; experiment arm only.
    Multiply,
}

impl std::str::FromStr for TimeInjection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(TimeInjection::Add),
            "multiply" => Ok(TimeInjection::Multiply),
            other => Err(Error::Config(format!("unknown time injection `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeConfig {
    pub injection: TimeInjection,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            injection: TimeInjection::Add,
            min_wavelength: 1.0,
            max_wavelength: 10_000.0,
        }
    }
}

/// Every admissible partition factor for width `d`, ascending.
pub fn divisors(d: usize) -> Vec<usize> {
    (1..=d).filter(|k| d.is_multiple_of(*k)).collect()
}
