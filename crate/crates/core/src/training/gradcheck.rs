use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Observation, Token, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::params::Parameters;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.tensors
            .iter()
            .filter(|t| !t.passed)
            .map(|t| t.name.as_str())
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Mean-loss gradient over `seqs` with dropout off.
pub fn analytic_gradient(model: &Model<f64>, seqs: &[&TokenSequence]) -> Result<ModelParams<f64>> {
    let mut grads = model.params.zeros_like();
    let w = 1.0 / seqs.len() as f64;
    for s in seqs {
        model.accumulate_gradient::<ChaCha8Rng>(s, w, None, &mut grads)?;
    }
    Ok(grads)
}

/// Compares `analytic` against central differences of the mean loss, entry
/// by entry, for every tensor.
pub fn compare_gradients(
    model: &Model<f64>,
    seqs: &[&TokenSequence],
    analytic: &ModelParams<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if model.config.encoder.dropout != 0.0 {
        return Err(Error::Config("gradient checks need dropout 0".into()));
    }
    let names: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
    let grads = analytic.tensors();
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].1.len();
        let mut worst: f64 = 0.0;
        for i in 0..len {
            let original = probe.params.tensors()[ti].1.as_slice()[i];
            let mut eval = |x: f64| -> Result<f64> {
                probe.params.tensors_mut()[ti].1.as_mut_slice()[i] = x;
                probe.mean_loss(seqs)
            };
            let plus = eval(original + FD_STEP)?;
            let minus = eval(original - FD_STEP)?;
            eval(original)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads[ti].1.as_slice()[i], numeric));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            entries: len,
            max_rel_error: worst,
            max_abs_analytic: grads[ti].1.max_abs(),
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport { tolerance, tensors })
}

/// Builds a toy model from `config` and checks its gradients on random
/// sequences that touch numeric and categorical features.
pub fn grad_check(config: &ModelConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let config = config.without_dropout();
    let categories = [0, 0, 3, 0];
    let model = Model::<f64>::init(config, &categories, seed)?;
    let seqs = toy_sequences(&categories, 3, seed);
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    let analytic = analytic_gradient(&model, &refs)?;
    compare_gradients(&model, &refs, &analytic, tolerance)
}

/// Short random sequences over the given features. `categories[f] > 0`
/// marks a categorical feature with that many classes.
pub fn toy_sequences(categories: &[usize], n: usize, seed: u64) -> Vec<TokenSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(2..=5);
            let tokens = (0..len)
                .map(|_| {
                    let f = rng.random_range(0..categories.len());
                    let obs = if categories[f] > 0 {
                        Observation::Categorical(rng.random_range(0..categories[f] as u32))
                    } else {
                        Observation::Numeric(rng.random_range(-2.0..2.0))
                    };
                    Token {
                        feature_id: f,
                        obs,
                        time: rng.random_range(0..24) as f64 + 1.0,
                    }
                })
                .collect();
            TokenSequence {
                entity_id: format!("toy{i}"),
                tokens,
                label: (i % 2) as u8,
                event_time: None,
            }
        })
        .collect()
}
