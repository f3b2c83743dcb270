use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Initializer, Parameters};
use crate::real::Real;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 144,
            ff_dim: 144,
            num_layers: 2,
            num_heads: 4,
            dropout: 0.1,
            max_seq_len: 4096,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Mat<T>,
    pub beta: Mat<T>,
}

impl<T: Real> LayerNormParams<T> {
    pub fn new(d: usize) -> Self {
        LayerNormParams {
            gamma: Mat::filled(1, d, T::one()),
            beta: Mat::zeros(1, d),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerNormParams {
            gamma: self.gamma.zeros_like(),
            beta: self.beta.zeros_like(),
        }
    }
}

impl<T: Real> Parameters<T> for LayerNormParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// One pre-norm encoder block. Linear weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub ln1: LayerNormParams<T>,
    pub wq: Mat<T>,
    pub bq: Mat<T>,
    pub wk: Mat<T>,
    pub bk: Mat<T>,
    pub wv: Mat<T>,
    pub bv: Mat<T>,
    pub wo: Mat<T>,
    pub bo: Mat<T>,
    pub ln2: LayerNormParams<T>,
    pub w_ff1: Mat<T>,
    pub b_ff1: Mat<T>,
    pub w_ff2: Mat<T>,
    pub b_ff2: Mat<T>,
}

impl<T: Real> EncoderLayerParams<T> {
    fn init(cfg: &EncoderConfig, idx: usize, init: &Initializer) -> Self {
        let (d, ff) = (cfg.d_model, cfg.ff_dim);
        let n = |s: &str| format!("encoder.layer{idx}.{s}");
        EncoderLayerParams {
            ln1: LayerNormParams::new(d),
            wq: init.fan_in(&n("wq"), d, d, d),
            bq: init.fan_in(&n("bq"), 1, d, d),
            wk: init.fan_in(&n("wk"), d, d, d),
            bk: init.fan_in(&n("bk"), 1, d, d),
            wv: init.fan_in(&n("wv"), d, d, d),
            bv: init.fan_in(&n("bv"), 1, d, d),
            wo: init.fan_in(&n("wo"), d, d, d),
            bo: init.fan_in(&n("bo"), 1, d, d),
            ln2: LayerNormParams::new(d),
            w_ff1: init.fan_in(&n("w_ff1"), ff, d, d),
            b_ff1: init.fan_in(&n("b_ff1"), 1, ff, d),
            w_ff2: init.fan_in(&n("w_ff2"), d, ff, ff),
            b_ff2: init.fan_in(&n("b_ff2"), 1, d, ff),
        }
    }

    fn zeros_like(&self) -> Self {
        EncoderLayerParams {
            ln1: self.ln1.zeros_like(),
            wq: self.wq.zeros_like(),
            bq: self.bq.zeros_like(),
            wk: self.wk.zeros_like(),
            bk: self.bk.zeros_like(),
            wv: self.wv.zeros_like(),
            bv: self.bv.zeros_like(),
            wo: self.wo.zeros_like(),
            bo: self.bo.zeros_like(),
            ln2: self.ln2.zeros_like(),
            w_ff1: self.w_ff1.zeros_like(),
            b_ff1: self.b_ff1.zeros_like(),
            w_ff2: self.w_ff2.zeros_like(),
            b_ff2: self.b_ff2.zeros_like(),
        }
    }
}

impl<T: Real> Parameters<T> for EncoderLayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        f(&join(prefix, "wq"), &self.wq);
        f(&join(prefix, "bq"), &self.bq);
        f(&join(prefix, "wk"), &self.wk);
        f(&join(prefix, "bk"), &self.bk);
        f(&join(prefix, "wv"), &self.wv);
        f(&join(prefix, "bv"), &self.bv);
        f(&join(prefix, "wo"), &self.wo);
        f(&join(prefix, "bo"), &self.bo);
        self.ln2.visit(&join(prefix, "ln2"), f);
        f(&join(prefix, "w_ff1"), &self.w_ff1);
        f(&join(prefix, "b_ff1"), &self.b_ff1);
        f(&join(prefix, "w_ff2"), &self.w_ff2);
        f(&join(prefix, "b_ff2"), &self.b_ff2);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        f(&join(prefix, "wq"), &mut self.wq);
        f(&join(prefix, "bq"), &mut self.bq);
        f(&join(prefix, "wk"), &mut self.wk);
        f(&join(prefix, "bk"), &mut self.bk);
        f(&join(prefix, "wv"), &mut self.wv);
        f(&join(prefix, "bv"), &mut self.bv);
        f(&join(prefix, "wo"), &mut self.wo);
        f(&join(prefix, "bo"), &mut self.bo);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        f(&join(prefix, "w_ff1"), &mut self.w_ff1);
        f(&join(prefix, "b_ff1"), &mut self.b_ff1);
        f(&join(prefix, "w_ff2"), &mut self.w_ff2);
        f(&join(prefix, "b_ff2"), &mut self.b_ff2);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<EncoderLayerParams<T>>,
    pub final_norm: LayerNormParams<T>,
}

impl<T: Real> EncoderParams<T> {
    pub fn init(cfg: &EncoderConfig, init: &Initializer) -> Self {
        EncoderParams {
            layers: (0..cfg.num_layers)
                .map(|i| EncoderLayerParams::init(cfg, i, init))
                .collect(),
            final_norm: LayerNormParams::new(cfg.d_model),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(EncoderLayerParams::zeros_like)
                .collect(),
            final_norm: self.final_norm.zeros_like(),
        }
    }
}

impl<T: Real> Parameters<T> for EncoderParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_norm.visit(&join(prefix, "final_norm"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        self.final_norm.visit_mut(&join(prefix, "final_norm"), f);
    }
}

/// Linear two-way classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub weight: Mat<T>,
    pub bias: Mat<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn init(d: usize, init: &Initializer) -> Self {
        HeadParams {
            weight: init.fan_in("head.weight", 2, d, d),
            bias: Mat::zeros(1, 2),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }
}

impl<T: Real> Parameters<T> for HeadParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
