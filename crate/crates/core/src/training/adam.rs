use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::params::Parameters;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Rows of `embedding.feature_table` that receive no update.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrozenRows {
    pub feature_rows: Vec<usize>,
}

impl FrozenRows {
    pub fn is_empty(&self) -> bool {
        self.feature_rows.is_empty()
    }
}

const FEATURE_TABLE: &str = "embedding.feature_table";

/// Adam with bias correction. Frozen rows keep both their value and their
/// moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: ModelParams<T>,
    v: ModelParams<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Clears moments and the step counter.
    pub fn reset(&mut self) {
        for (_, t) in self.m.tensors_mut() {
            t.fill(T::zero());
        }
        for (_, t) in self.v.tensors_mut() {
            t.fill(T::zero());
        }
        self.t = 0;
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &ModelParams<T>,
        lr: T,
        frozen: &FrozenRows,
    ) {
        self.t += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let eps = T::lit(self.cfg.eps);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((name, p), (_, g)), (_, m)), (_, v)) in tensors {
            let cols = p.cols();
            let frozen_here = name == FEATURE_TABLE && !frozen.is_empty();
            let p = p.as_mut_slice();
            let (g, m, v) = (g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                if frozen_here && frozen.feature_rows.contains(&(i / cols)) {
                    continue;
                }
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
