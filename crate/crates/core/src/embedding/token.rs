//! Per-token forward pass with cached intermediates and its reverse pass.

use super::config::{FusionConfig, FusionKind, TimeConfig, TimeInjection};
use super::ops;
use super::params::EmbeddingParams;
use crate::data::{Observation, Token};
use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone)]
enum Content<T> {
    Numeric {
        v: T,
        hidden: Vec<T>,
        z: Vec<T>,
        e_v: Vec<T>,
        e_f: Vec<T>,
    },
    Categorical {
        class: usize,
        /// `[e_f ; e_c]`
        input: Vec<T>,
    },
}

#[derive(Debug, Clone)]
pub struct TokenCache<T> {
    feature: usize,
    content: Content<T>,
    /// `σ(p_t)` when time is injected multiplicatively.
    time_gate: Option<Vec<T>>,
}

/// Token embedding before time injection (`e_{f,v}` or `e_{f,c}`).
pub fn embed_content<T: Real>(
    token: &Token,
    params: &EmbeddingParams<T>,
    cfg: &FusionConfig,
) -> Result<Vec<T>> {
    content_forward(token, params, cfg).map(|(c, _)| c)
}

fn content_forward<T: Real>(
    token: &Token,
    params: &EmbeddingParams<T>,
    cfg: &FusionConfig,
) -> Result<(Vec<T>, Content<T>)> {
    let f = token.feature_id;
    params.check_feature(f)?;
    let e_f = params.feature_table.row(f).to_vec();
    match token.obs {
        Observation::Numeric(v) => {
            if !v.is_finite() {
                return Err(Error::Contract(format!("non-finite value for feature {f}")));
            }
            if params.cat_tables[f].is_some() {
                return Err(Error::Schema(format!(
                    "numeric token for categorical feature {f}"
                )));
            }
            let v = T::lit(v);
            let (z, hidden) = ops::project_value(
                v,
                &params.proj_w1,
                &params.proj_b1,
                &params.proj_w2,
                &params.proj_b2,
            );
            let e_v = ops::affine(&z, params.gamma.row(f), params.beta.row(f));
            let out = match cfg.kind {
                FusionKind::Mufuse | FusionKind::Scane => ops::fuse_mufuse(&e_f, &e_v)?,
                FusionKind::Additive => ops::fuse_additive(&e_f, &e_v)?,
                FusionKind::Concat => ops::fuse_concat(&e_f, &e_v, &params.concat_proj)?,
            };
            Ok((
                out,
                Content::Numeric {
                    v,
                    hidden,
                    z,
                    e_v,
                    e_f,
                },
            ))
        }
        Observation::Categorical(c) => {
            let table = params.cat_table(f)?;
            let class = c as usize;
            if class >= table.rows() {
                return Err(Error::Index {
                    what: "category",
                    index: class,
                    size: table.rows(),
                });
            }
            let out = ops::project_concat(&params.w_cat, &e_f, table.row(class))?;
            let mut input = e_f;
            input.extend_from_slice(table.row(class));
            Ok((out, Content::Categorical { class, input }))
        }
    }
}

/// Full token embedding `e_{f,v,t}` plus the cache needed by
/// [`token_backward`].
pub fn token_forward<T: Real>(
    token: &Token,
    params: &EmbeddingParams<T>,
    cfg: &FusionConfig,
    time: &TimeConfig,
    wavelengths: &[f64],
) -> Result<(Vec<T>, TokenCache<T>)> {
    let (content, cache) = content_forward(token, params, cfg)?;
    let p_t: Vec<T> = ops::time_encoding(token.time, wavelengths);
    let x = ops::inject_time(&content, &p_t, time.injection)?;
    let time_gate = match time.injection {
        TimeInjection::Add => None,
        TimeInjection::Multiply => Some(p_t.iter().map(|&p| sigmoid(p)).collect()),
    };
    Ok((
        x,
        TokenCache {
            feature: token.feature_id,
            content: cache,
            time_gate,
        },
    ))
}

/// Accumulates parameter gradients for one token given `∂L/∂e_{f,v,t}`.
pub fn token_backward<T: Real>(
    cache: &TokenCache<T>,
    dx: &[T],
    params: &EmbeddingParams<T>,
    cfg: &FusionConfig,
    grads: &mut EmbeddingParams<T>,
) {
    let f = cache.feature;
    let dc: Vec<T> = match &cache.time_gate {
        None => dx.to_vec(),
        Some(g) => dx.iter().zip(g).map(|(d, g)| *d * *g).collect(),
    };
    let d = dc.len();
    let mut de_f = vec![T::zero(); d];

    match &cache.content {
        Content::Numeric {
            v,
            hidden,
            z,
            e_v,
            e_f,
        } => {
            let dp = e_v.len();
            let mut de_v = vec![T::zero(); dp];
            match cfg.kind {
                FusionKind::Mufuse | FusionKind::Scane => {
                    let k = d / dp;
                    for j in 0..dp {
                        let g = sigmoid(e_v[j]);
                        let mut dg = T::zero();
                        for i in j * k..(j + 1) * k {
                            de_f[i] = dc[i] * g;
                            dg += dc[i] * e_f[i];
                        }
                        de_v[j] = dg * g * (T::one() - g);
                    }
                }
                FusionKind::Additive => {
                    de_f.copy_from_slice(&dc);
                    de_v.copy_from_slice(&dc);
                }
                FusionKind::Concat => {
                    let p = &params.concat_proj;
                    for (o, &g) in dc.iter().enumerate() {
                        if g == T::zero() {
                            continue;
                        }
                        let row = p.row(o);
                        let grow = grads.concat_proj.row_mut(o);
                        for i in 0..d {
                            grow[i] += g * e_f[i];
                            de_f[i] += g * row[i];
                        }
                        for j in 0..dp {
                            grow[d + j] += g * e_v[j];
                            de_v[j] += g * row[d + j];
                        }
                    }
                }
            }

            // affine
            let gamma = params.gamma.row(f);
            let mut dz = vec![T::zero(); dp];
            {
                let gg = grads.gamma.row_mut(f);
                for j in 0..dp {
                    gg[j] += de_v[j] * z[j];
                    dz[j] = de_v[j] * gamma[j];
                }
                let gb = grads.beta.row_mut(f);
                for j in 0..dp {
                    gb[j] += de_v[j];
                }
            }

            // projector
            let h = hidden.len();
            let mut dh = vec![T::zero(); h];
            for (o, &g) in dz.iter().enumerate().take(dp) {
                grads.proj_b2.as_mut_slice()[o] += g;
                let w = params.proj_w2.row(o);
                let gw = grads.proj_w2.row_mut(o);
                for j in 0..h {
                    gw[j] += g * hidden[j];
                    dh[j] += g * w[j];
                }
            }
            for j in 0..h {
                let dpre = dh[j] * (T::one() - hidden[j] * hidden[j]);
                grads.proj_w1[(j, 0)] += dpre * *v;
                grads.proj_b1.as_mut_slice()[j] += dpre;
            }
        }
        Content::Categorical { class, input } => {
            let w = &params.w_cat;
            let dc_len = input.len() - d;
            let mut de_c = vec![T::zero(); dc_len];
            for (o, &g) in dc.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                let row = w.row(o);
                let grow = grads.w_cat.row_mut(o);
                for i in 0..input.len() {
                    grow[i] += g * input[i];
                }
                for i in 0..d {
                    de_f[i] += g * row[i];
                }
                for j in 0..dc_len {
                    de_c[j] += g * row[d + j];
                }
            }
            let table = grads.cat_tables[f].as_mut().expect("categorical feature");
            let r = table.row_mut(*class);
            for j in 0..dc_len {
                r[j] += de_c[j];
            }
        }
    }

    let row = grads.feature_table.row_mut(f);
    for i in 0..d {
        row[i] += de_f[i];
    }
}
