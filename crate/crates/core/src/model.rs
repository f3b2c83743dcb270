//! The full classifier: token embeddings, encoder stack and head, with the
//! per-sequence forward and reverse passes used by training and evaluation.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TokenSequence;
use crate::embedding::{
    token_backward, token_forward, wavelengths, EmbeddingParams, FusionConfig, TimeConfig,
    TokenCache,
};
use crate::encoder::{
    encode_sequence, encode_sequence_backward, first_layer, head_logits, masked_mean, softmax2,
    EncoderConfig, EncoderParams, HeadParams,
};
use crate::error::{Error, Result};
use crate::params::{join, Initializer, Parameters};
use crate::real::Real;
use crate::tensor::Mat;

/// Probability floor applied before taking the log in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub fusion: FusionConfig,
    pub encoder: EncoderConfig,
    pub time: TimeConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            fusion: FusionConfig::mufuse(144, 4),
            encoder: EncoderConfig::default(),
            time: TimeConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.encoder.validate()?;
        if self.fusion.d != self.encoder.d_model {
            return Err(Error::Config(format!(
                "embedding width {} differs from encoder width {}",
                self.fusion.d, self.encoder.d_model
            )));
        }
        wavelengths(
            self.fusion.d,
            self.time.min_wavelength,
            self.time.max_wavelength,
        )?;
        Ok(())
    }

    /// Same model with dropout switched off.
    pub fn without_dropout(mut self) -> Self {
        self.encoder.dropout = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: EmbeddingParams<T>,
    pub encoder: EncoderParams<T>,
    pub head: HeadParams<T>,
}

/// Tensors whose shape depends on the value-embedding width, excluded from
/// the cross-arm initialization fingerprint.
const ARM_SPECIFIC: [&str; 5] = [
    "embedding.proj_w2",
    "embedding.proj_b2",
    "embedding.gamma",
    "embedding.beta",
    "embedding.concat_proj",
];

impl<T: Real> ModelParams<T> {
    /// `categories[f]` is the class count of categorical feature `f`, 0 for
    /// numeric ones.
    pub fn init(cfg: &ModelConfig, categories: &[usize], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let init = Initializer::new(seed);
        Ok(ModelParams {
            embedding: EmbeddingParams::init(&cfg.fusion, categories, &init),
            encoder: EncoderParams::init(&cfg.encoder, &init),
            head: HeadParams::init(cfg.encoder.d_model, &init),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            embedding: self.embedding.zeros_like(),
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// SHA-256 over every tensor name, shape and value.
    pub fn fingerprint(&self) -> String {
        self.fingerprint_filtered(|_| true)
    }

    /// Fingerprint over the tensors every fusion arm shares.
    pub fn shared_fingerprint(&self) -> String {
        self.fingerprint_filtered(|n| !ARM_SPECIFIC.contains(&n))
    }

    fn fingerprint_filtered(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors() {
            if keep(&name) {
                h.update(name.as_bytes());
                t.hash_into(&mut h);
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

impl<T: Real> Parameters<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// A configured model: parameters plus the fixed wavelength ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    wavelengths: Vec<f64>,
}

/// Result of one sample's forward and reverse pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome<T> {
    pub loss: T,
    pub probs: [T; 2],
    /// The true-class probability fell below [`PROB_FLOOR`].
    pub clamped: bool,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        if params.embedding.d() != config.fusion.d
            || params.embedding.d_prime() != config.fusion.d_prime
            || params.encoder.layers.len() != config.encoder.num_layers
        {
            return Err(Error::Shape(
                "parameters do not match the model configuration".into(),
            ));
        }
        let wavelengths = wavelengths(
            config.fusion.d,
            config.time.min_wavelength,
            config.time.max_wavelength,
        )?;
        Ok(Model {
            config,
            params,
            wavelengths,
        })
    }

    pub fn init(config: ModelConfig, categories: &[usize], seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, categories, seed)?;
        Model::new(config, params)
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    /// Token embeddings `e_{f,v,t}` of one sequence, one row per token.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Mat<T>> {
        self.embed_cached(seq).map(|(x, _)| x)
    }

    fn embed_cached(&self, seq: &TokenSequence) -> Result<(Mat<T>, Vec<TokenCache<T>>)> {
        if seq.is_empty() {
            return Err(Error::Contract(format!(
                "entity {} has no tokens",
                seq.entity_id
            )));
        }
        if seq.len() > self.config.encoder.max_seq_len {
            return Err(Error::Contract(format!(
                "entity {} has {} tokens, above the limit of {}",
                seq.entity_id,
                seq.len(),
                self.config.encoder.max_seq_len
            )));
        }
        let d = self.config.fusion.d;
        let mut x = Mat::zeros(seq.len(), d);
        let mut caches = Vec::with_capacity(seq.len());
        for (r, tok) in seq.tokens.iter().enumerate() {
            let (e, c) = token_forward(
                tok,
                &self.params.embedding,
                &self.config.fusion,
                &self.config.time,
                &self.wavelengths,
            )?;
            x.row_mut(r).copy_from_slice(&e);
            caches.push(c);
        }
        Ok((x, caches))
    }

    /// Class probabilities `[p(0), p(1)]` with dropout off.
    pub fn predict(&self, seq: &TokenSequence) -> Result<[T; 2]> {
        let x = self.embed(seq)?;
        let valid = vec![true; x.rows()];
        let (y, _) = encode_sequence::<T, rand_chacha::ChaCha8Rng>(
            &x,
            &valid,
            &self.params.encoder,
            &self.config.encoder,
            None,
        );
        let pooled = masked_mean(&y, &valid)?;
        Ok(softmax2(head_logits(&pooled, &self.params.head)))
    }

    /// Positive-class probability for every sequence, in input order.
    pub fn predict_scores(&self, seqs: &[&TokenSequence]) -> Result<Vec<T>> {
        seqs.par_iter()
            .map(|s| self.predict(s).map(|p| p[1]))
            .collect()
    }

    /// Token embeddings before the encoder and after its first layer.
    pub fn embeddings_with_first_layer(&self, seq: &TokenSequence) -> Result<(Mat<T>, Mat<T>)> {
        let x = self.embed(seq)?;
        let h = first_layer(&x, &self.params.encoder, &self.config.encoder)
            .unwrap_or_else(|| x.clone());
        Ok((x, h))
    }

    /// Forward and reverse pass for one labelled sequence. Gradients of
    /// `weight · loss` are added into `grads`; dropout is active when a
    /// generator is supplied.
    pub fn accumulate_gradient<R: Rng>(
        &self,
        seq: &TokenSequence,
        weight: T,
        rng: Option<&mut R>,
        grads: &mut ModelParams<T>,
    ) -> Result<SampleOutcome<T>> {
        let label = seq.label as usize;
        if label > 1 {
            return Err(Error::Contract(format!(
                "label {} is not binary",
                seq.label
            )));
        }
        let (x, caches) = self.embed_cached(seq)?;
        let valid = vec![true; x.rows()];
        let (y, enc_cache) =
            encode_sequence(&x, &valid, &self.params.encoder, &self.config.encoder, rng);
        let pooled = masked_mean(&y, &valid)?;
        let probs = softmax2(head_logits(&pooled, &self.params.head));
        let floor = T::lit(PROB_FLOOR);
        let clamped = probs[label] < floor;
        let loss = -probs[label].max(floor).ln();

        let mut dlogits = probs;
        dlogits[label] -= T::one();
        dlogits.iter_mut().for_each(|g| *g *= weight);

        let mut dpooled = vec![T::zero(); pooled.len()];
        for (c, &g) in dlogits.iter().enumerate() {
            grads.head.bias.as_mut_slice()[c] += g;
            let wrow = self.params.head.weight.row(c);
            let grow = grads.head.weight.row_mut(c);
            for i in 0..pooled.len() {
                grow[i] += g * pooled[i];
                dpooled[i] += g * wrow[i];
            }
        }
        let inv = T::one() / T::lit(x.rows() as f64);
        let mut dy = Mat::zeros(y.rows(), y.cols());
        for r in 0..y.rows() {
            for (d, p) in dy.row_mut(r).iter_mut().zip(&dpooled) {
                *d = *p * inv;
            }
        }
        let dx = encode_sequence_backward(
            &enc_cache,
            &dy,
            &valid,
            &self.params.encoder,
            &self.config.encoder,
            &mut grads.encoder,
        );
        for (r, cache) in caches.iter().enumerate() {
            token_backward(
                cache,
                dx.row(r),
                &self.params.embedding,
                &self.config.fusion,
                &mut grads.embedding,
            );
        }
        Ok(SampleOutcome {
            loss,
            probs,
            clamped,
        })
    }

    /// Mean cross-entropy over `seqs` with dropout off.
    pub fn mean_loss(&self, seqs: &[&TokenSequence]) -> Result<T> {
        let losses: Vec<T> = seqs
            .par_iter()
            .map(|s| {
                let p = self.predict(s)?;
                Ok(-p[s.label as usize].max(T::lit(PROB_FLOOR)).ln())
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().copied().sum::<T>() / T::lit(seqs.len().max(1) as f64))
    }
}
