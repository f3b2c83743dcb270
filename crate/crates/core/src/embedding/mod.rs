//! Token embeddings: feature identity lookup, value projector with
//! feature-conditioned affine, the fusion operators, categorical embedding
//! and sinusoidal time injection.

mod config;
mod ops;
mod params;
mod token;

pub use config::{divisors, FusionConfig, FusionKind, TimeConfig, TimeInjection};
pub use ops::{
    affine, fuse_additive, fuse_concat, fuse_mufuse, fuse_mufuse_repeat, hadamard,
    hadamard_reparam, inject_time, project_value, time_encoding, wavelengths,
};
pub use params::EmbeddingParams;
pub use token::{embed_content, token_backward, token_forward, TokenCache};

use crate::error::{Error, Result};
use crate::real::Real;

/// `e_f`: row `f` of the feature table.
pub fn embed_feature<T: Real>(f: usize, params: &EmbeddingParams<T>) -> Result<Vec<T>> {
    params.check_feature(f)?;
    Ok(params.feature_table.row(f).to_vec())
}

/// `e_{v|f} = γ_f ⊙ φ(v) + β_f`.
pub fn embed_value<T: Real>(v: T, f: usize, params: &EmbeddingParams<T>) -> Result<Vec<T>> {
    if !v.is_finite() {
        return Err(Error::Contract("value must be finite".into()));
    }
    params.check_feature(f)?;
    let (z, _) = project_value(
        v,
        &params.proj_w1,
        &params.proj_b1,
        &params.proj_w2,
        &params.proj_b2,
    );
    Ok(affine(&z, params.gamma.row(f), params.beta.row(f)))
}

/// `W_cat · [e_f ; e_c]`.
pub fn embed_categorical<T: Real>(
    f: usize,
    class: usize,
    params: &EmbeddingParams<T>,
) -> Result<Vec<T>> {
    let table = params.cat_table(f)?;
    if class >= table.rows() {
        return Err(Error::Index {
            what: "category",
            index: class,
            size: table.rows(),
        });
    }
    ops::project_concat(&params.w_cat, params.feature_table.row(f), table.row(class))
}
