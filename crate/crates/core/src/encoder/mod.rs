//! Masked pre-norm transformer encoder, masked mean pooling and the softmax
//! classification head.

mod layer;
mod params;

pub use layer::EncodeCache;
#[allow(unused_imports)]
pub(crate) use layer::{encode_sequence, encode_sequence_backward, first_layer};
pub use params::{EncoderConfig, EncoderLayerParams, EncoderParams, HeadParams, LayerNormParams};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{dot, Mat};

/// A zero-padded batch of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput<T> {
    /// One `S × d` matrix per row; padded positions are zero.
    pub token_embeddings: Vec<Mat<T>>,
    /// `true` for real tokens.
    pub pad_mask: Vec<Vec<bool>>,
    pub labels: Vec<u8>,
    pub lengths: Vec<usize>,
}

impl<T: Real> BatchInput<T> {
    /// Pads every sequence to the longest one.
    pub fn from_sequences(seqs: Vec<Mat<T>>, labels: Vec<u8>) -> Result<Self> {
        if seqs.len() != labels.len() {
            return Err(Error::Shape("one label per sequence required".into()));
        }
        let d = seqs.first().map(Mat::cols).unwrap_or(0);
        let s_max = seqs.iter().map(Mat::rows).max().unwrap_or(0);
        let mut token_embeddings = Vec::with_capacity(seqs.len());
        let mut pad_mask = Vec::with_capacity(seqs.len());
        let mut lengths = Vec::with_capacity(seqs.len());
        for x in seqs {
            if x.cols() != d {
                return Err(Error::Shape("sequences differ in width".into()));
            }
            let mut padded = Mat::zeros(s_max, d);
            for r in 0..x.rows() {
                padded.row_mut(r).copy_from_slice(x.row(r));
            }
            pad_mask.push((0..s_max).map(|r| r < x.rows()).collect());
            lengths.push(x.rows());
            token_embeddings.push(padded);
        }
        Ok(BatchInput {
            token_embeddings,
            pad_mask,
            labels,
            lengths,
        })
    }
}

/// Encodes each row of the batch. Attention logits toward padded keys are
/// `−∞`, so real positions never see padding.
pub fn encode<T: Real>(
    batch: &BatchInput<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
) -> Result<Vec<Mat<T>>> {
    batch
        .token_embeddings
        .iter()
        .zip(&batch.pad_mask)
        .map(|(x, mask)| {
            if x.cols() != cfg.d_model || mask.len() != x.rows() {
                return Err(Error::Shape(format!(
                    "batch row is {}x{} with {} mask entries, model width {}",
                    x.rows(),
                    x.cols(),
                    mask.len(),
                    cfg.d_model
                )));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::Contract("sequence without any real token".into()));
            }
            Ok(encode_sequence::<T, rand_chacha::ChaCha8Rng>(x, mask, params, cfg, None).0)
        })
        .collect()
}

/// Mean over real positions.
pub fn masked_mean<T: Real>(encoded: &Mat<T>, mask: &[bool]) -> Result<Vec<T>> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::Contract(
            "cannot pool a row without real tokens".into(),
        ));
    }
    let mut pooled = vec![T::zero(); encoded.cols()];
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (p, x) in pooled.iter_mut().zip(encoded.row(r)) {
            *p += *x;
        }
    }
    let inv = T::one() / T::lit(n as f64);
    pooled.iter_mut().for_each(|p| *p *= inv);
    Ok(pooled)
}

pub fn head_logits<T: Real>(pooled: &[T], head: &HeadParams<T>) -> [T; 2] {
    [
        dot(head.weight.row(0), pooled) + head.bias.as_slice()[0],
        dot(head.weight.row(1), pooled) + head.bias.as_slice()[1],
    ]
}

pub fn softmax2<T: Real>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Masked mean-pool, linear head, softmax. One probability pair per row.
pub fn pool_and_classify<T: Real>(
    encoded: &[Mat<T>],
    pad_mask: &[Vec<bool>],
    head: &HeadParams<T>,
) -> Result<Vec<[T; 2]>> {
    if encoded.len() != pad_mask.len() {
        return Err(Error::Shape("one mask per encoded row required".into()));
    }
    encoded
        .iter()
        .zip(pad_mask)
        .map(|(e, m)| Ok(softmax2(head_logits(&masked_mean(e, m)?, head))))
        .collect()
}
