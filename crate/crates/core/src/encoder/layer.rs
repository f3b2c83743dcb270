//! Forward and reverse passes of the pre-norm encoder stack over one
//! sequence.

use rand::Rng;

use super::params::{EncoderConfig, EncoderLayerParams, EncoderParams, LayerNormParams};
use crate::real::Real;
use crate::tensor::{dot, linear, linear_backward, Mat};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    xhat: Mat<T>,
    inv_std: Vec<T>,
}

pub(crate) fn layer_norm<T: Real>(x: &Mat<T>, p: &LayerNormParams<T>) -> (Mat<T>, LnCache<T>) {
    let (s, d) = x.shape();
    let mut y = Mat::zeros(s, d);
    let mut xhat = Mat::zeros(s, d);
    let mut inv_std = Vec::with_capacity(s);
    let n = T::lit(d as f64);
    for r in 0..s {
        let xr = x.row(r);
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + T::lit(LN_EPS)).sqrt();
        inv_std.push(is);
        let (g, b) = (p.gamma.as_slice(), p.beta.as_slice());
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[(r, i)] = h;
            y[(r, i)] = h * g[i] + b[i];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    dy: &Mat<T>,
    p: &LayerNormParams<T>,
    grads: &mut LayerNormParams<T>,
) -> Mat<T> {
    let (s, d) = dy.shape();
    let n = T::lit(d as f64);
    let mut dx = Mat::zeros(s, d);
    let g = p.gamma.as_slice();
    for r in 0..s {
        let xh = cache.xhat.row(r);
        let dyr = dy.row(r);
        let mut dxhat = vec![T::zero(); d];
        let (mut sum, mut sum_x) = (T::zero(), T::zero());
        for i in 0..d {
            grads.gamma.as_mut_slice()[i] += dyr[i] * xh[i];
            grads.beta.as_mut_slice()[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            sum += dxhat[i];
            sum_x += dxhat[i] * xh[i];
        }
        let is = cache.inv_std[r];
        let dxr = dx.row_mut(r);
        for i in 0..d {
            dxr[i] = is * (dxhat[i] - sum / n - xh[i] * sum_x / n);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

fn dropout_mask<T: Real, R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Mat<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    Mat::from_vec(rows, cols, data).expect("shape")
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    /// Attention probabilities per head, `S × S`.
    probs: Vec<Mat<T>>,
    o: Mat<T>,
    drop1: Option<Mat<T>>,
    ln2: LnCache<T>,
    b: Mat<T>,
    f1: Mat<T>,
    g: Mat<T>,
    drop2: Option<Mat<T>>,
}

#[derive(Debug, Clone)]
pub struct EncodeCache<T> {
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
}

fn attention<T: Real>(
    q: &Mat<T>,
    k: &Mat<T>,
    v: &Mat<T>,
    valid: &[bool],
    heads: usize,
) -> (Mat<T>, Vec<Mat<T>>) {
    let (s, d) = q.shape();
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut o = Mat::zeros(s, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Mat::zeros(s, s);
        for i in 0..s {
            let qi = &q.row(i)[cols.clone()];
            let mut max = T::neg_infinity();
            for j in 0..s {
                if valid[j] {
                    let sc = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    p[(i, j)] = sc;
                    max = max.max(sc);
                }
            }
            let mut sum = T::zero();
            for j in 0..s {
                if valid[j] {
                    let e = (p[(i, j)] - max).exp();
                    p[(i, j)] = e;
                    sum += e;
                }
            }
            let orow = &mut o.row_mut(i)[cols.clone()];
            for j in 0..s {
                if valid[j] {
                    let w = p[(i, j)] / sum;
                    p[(i, j)] = w;
                    let vj = &v.row(j)[cols.clone()];
                    for c in 0..dh {
                        orow[c] += w * vj[c];
                    }
                }
            }
        }
        probs.push(p);
    }
    (o, probs)
}

fn attention_backward<T: Real>(
    cache: &LayerCache<T>,
    d_o: &Mat<T>,
    valid: &[bool],
    heads: usize,
) -> (Mat<T>, Mat<T>, Mat<T>) {
    let (s, d) = d_o.shape();
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dq = Mat::zeros(s, d);
    let mut dk = Mat::zeros(s, d);
    let mut dv = Mat::zeros(s, d);
    let mut dp = vec![T::zero(); s];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let p = &cache.probs[h];
        for i in 0..s {
            let doi = &d_o.row(i)[cols.clone()];
            let mut weighted = T::zero();
            for j in 0..s {
                if !valid[j] {
                    continue;
                }
                let pij = p[(i, j)];
                dp[j] = dot(doi, &cache.v.row(j)[cols.clone()]);
                weighted += pij * dp[j];
                let dvj = &mut dv.row_mut(j)[cols.clone()];
                for c in 0..dh {
                    dvj[c] += pij * doi[c];
                }
            }
            for j in 0..s {
                if !valid[j] {
                    continue;
                }
                let ds = p[(i, j)] * (dp[j] - weighted) * scale;
                if ds == T::zero() {
                    continue;
                }
                let kj = &cache.k.row(j)[cols.clone()];
                let dqi = &mut dq.row_mut(i)[cols.clone()];
                for c in 0..dh {
                    dqi[c] += ds * kj[c];
                }
                let qi = &cache.q.row(i)[cols.clone()];
                let dkj = &mut dk.row_mut(j)[cols.clone()];
                for c in 0..dh {
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn layer_forward<T: Real, R: Rng>(
    x: &Mat<T>,
    valid: &[bool],
    p: &EncoderLayerParams<T>,
    cfg: &EncoderConfig,
    rng: Option<&mut R>,
) -> (Mat<T>, LayerCache<T>) {
    let (s, d) = x.shape();
    let (a, ln1) = layer_norm(x, &p.ln1);
    let q = linear(&a, &p.wq, &p.bq);
    let k = linear(&a, &p.wk, &p.bk);
    let v = linear(&a, &p.wv, &p.bv);
    let (o, probs) = attention(&q, &k, &v, valid, cfg.num_heads);
    let mut att = linear(&o, &p.wo, &p.bo);

    let (drop1, drop2) = match rng {
        Some(rng) if cfg.dropout > 0.0 => (
            Some(dropout_mask(s, d, cfg.dropout, rng)),
            Some(dropout_mask(s, d, cfg.dropout, rng)),
        ),
        _ => (None, None),
    };
    if let Some(m) = &drop1 {
        for (x, m) in att.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *x *= *m;
        }
    }
    let mut x1 = x.clone();
    x1.add_assign(&att);

    let (b, ln2) = layer_norm(&x1, &p.ln2);
    let f1 = linear(&b, &p.w_ff1, &p.b_ff1);
    let mut g = f1.clone();
    g.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
    let mut f2 = linear(&g, &p.w_ff2, &p.b_ff2);
    if let Some(m) = &drop2 {
        for (x, m) in f2.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *x *= *m;
        }
    }
    let mut out = x1;
    out.add_assign(&f2);
    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            drop1,
            ln2,
            b,
            f1,
            g,
            drop2,
        },
    )
}

fn layer_backward<T: Real>(
    cache: &LayerCache<T>,
    dout: &Mat<T>,
    valid: &[bool],
    p: &EncoderLayerParams<T>,
    cfg: &EncoderConfig,
    grads: &mut EncoderLayerParams<T>,
) -> Mat<T> {
    // feed-forward branch
    let mut df2 = dout.clone();
    if let Some(m) = &cache.drop2 {
        for (x, m) in df2.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *x *= *m;
        }
    }
    let mut dg = linear_backward(&cache.g, &p.w_ff2, &df2, &mut grads.w_ff2, &mut grads.b_ff2);
    for (d, x) in dg.as_mut_slice().iter_mut().zip(cache.f1.as_slice()) {
        *d *= gelu_grad(*x);
    }
    let db = linear_backward(&cache.b, &p.w_ff1, &dg, &mut grads.w_ff1, &mut grads.b_ff1);
    let mut dx1 = layer_norm_backward(&cache.ln2, &db, &p.ln2, &mut grads.ln2);
    dx1.add_assign(dout);

    // attention branch
    let mut datt = dx1.clone();
    if let Some(m) = &cache.drop1 {
        for (x, m) in datt.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *x *= *m;
        }
    }
    let d_o = linear_backward(&cache.o, &p.wo, &datt, &mut grads.wo, &mut grads.bo);
    let (dq, dk, dv) = attention_backward(cache, &d_o, valid, cfg.num_heads);
    let mut da = linear_backward(&cache.a, &p.wq, &dq, &mut grads.wq, &mut grads.bq);
    da.add_assign(&linear_backward(
        &cache.a,
        &p.wk,
        &dk,
        &mut grads.wk,
        &mut grads.bk,
    ));
    da.add_assign(&linear_backward(
        &cache.a,
        &p.wv,
        &dv,
        &mut grads.wv,
        &mut grads.bv,
    ));
    let mut dx = layer_norm_backward(&cache.ln1, &da, &p.ln1, &mut grads.ln1);
    dx.add_assign(&dx1);
    dx
}

/// Runs every layer plus the final norm. `valid[j] = false` marks padding;
/// no query ever attends to a padded key.
pub(crate) fn encode_sequence<T: Real, R: Rng>(
    x: &Mat<T>,
    valid: &[bool],
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    mut rng: Option<&mut R>,
) -> (Mat<T>, EncodeCache<T>) {
    let mut h = x.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let (out, c) = layer_forward(&h, valid, p, cfg, rng.as_deref_mut());
        layers.push(c);
        h = out;
    }
    let (y, final_ln) = layer_norm(&h, &params.final_norm);
    (y, EncodeCache { layers, final_ln })
}

pub(crate) fn encode_sequence_backward<T: Real>(
    cache: &EncodeCache<T>,
    dy: &Mat<T>,
    valid: &[bool],
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
    grads: &mut EncoderParams<T>,
) -> Mat<T> {
    let mut dh = layer_norm_backward(
        &cache.final_ln,
        dy,
        &params.final_norm,
        &mut grads.final_norm,
    );
    for (i, c) in cache.layers.iter().enumerate().rev() {
        dh = layer_backward(c, &dh, valid, &params.layers[i], cfg, &mut grads.layers[i]);
    }
    dh
}

/// Output of the first encoder layer only (no final norm).
pub(crate) fn first_layer<T: Real>(
    x: &Mat<T>,
    params: &EncoderParams<T>,
    cfg: &EncoderConfig,
) -> Option<Mat<T>> {
    let valid = vec![true; x.rows()];
    params
        .layers
        .first()
        .map(|p| layer_forward::<T, rand_chacha::ChaCha8Rng>(x, &valid, p, cfg, None).0)
}
