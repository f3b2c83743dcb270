//! Stateless embedding kernels on plain slices.

use super::config::TimeInjection;
use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};
use crate::tensor::{dot, Mat};

/// Shared value projector `φ: ℝ → ℝ^{d'}`: one tanh hidden layer, linear
/// output.
pub fn project_value<T: Real>(
    v: T,
    w1: &Mat<T>,
    b1: &Mat<T>,
    w2: &Mat<T>,
    b2: &Mat<T>,
) -> (Vec<T>, Vec<T>) {
    let hidden: Vec<T> = (0..w1.rows())
        .map(|j| (w1[(j, 0)] * v + b1.as_slice()[j]).tanh())
        .collect();
    let z = (0..w2.rows())
        .map(|o| dot(w2.row(o), &hidden) + b2.as_slice()[o])
        .collect();
    (z, hidden)
}

/// `γ ⊙ z + β`.
pub fn affine<T: Real>(z: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    z.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((z, g), b)| *g * *z + *b)
        .collect()
}

fn check_blocks(d: usize, d_prime: usize) -> Result<usize> {
    if d_prime == 0 || !d.is_multiple_of(d_prime) {
        return Err(Error::Shape(format!(
            "feature width {d} is not a multiple of value width {d_prime}"
        )));
    }
    Ok(d / d_prime)
}

/// MuFuse: gate `j = σ(e_v[j])` scales the `j`-th contiguous block of `k`
/// entries of `e_f`.
pub fn fuse_mufuse<T: Real>(e_f: &[T], e_v: &[T]) -> Result<Vec<T>> {
    let k = check_blocks(e_f.len(), e_v.len())?;
    let mut out = Vec::with_capacity(e_f.len());
    for (block, &v) in e_f.chunks(k).zip(e_v) {
        let g = sigmoid(v);
        out.extend(block.iter().map(|&x| g * x));
    }
    Ok(out)
}

/// Same product written as "repeat each gate `k` times, then Hadamard".
pub fn fuse_mufuse_repeat<T: Real>(e_f: &[T], e_v: &[T]) -> Result<Vec<T>> {
    let k = check_blocks(e_f.len(), e_v.len())?;
    let expanded: Vec<T> = e_v
        .iter()
        .flat_map(|&v| std::iter::repeat_n(sigmoid(v), k))
        .collect();
    Ok(hadamard(e_f, &expanded))
}

pub fn hadamard<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| *x * *y).collect()
}

/// `e_f + e_f ⊙ (g − 1)`: the product `e_f ⊙ g` written as identity plus an
/// interaction term.
pub fn hadamard_reparam<T: Real>(e_f: &[T], g: &[T]) -> Vec<T> {
    e_f.iter()
        .zip(g)
        .map(|(&f, &g)| f + f * (g - T::one()))
        .collect()
}

pub fn fuse_additive<T: Real>(e_f: &[T], e_v: &[T]) -> Result<Vec<T>> {
    if e_f.len() != e_v.len() {
        return Err(Error::Shape(format!(
            "additive fusion needs equal widths, got {} and {}",
            e_f.len(),
            e_v.len()
        )));
    }
    Ok(e_f.iter().zip(e_v).map(|(a, b)| *a + *b).collect())
}

/// `W · [a ; b]` with `W: out × (|a| + |b|)`.
pub fn project_concat<T: Real>(w: &Mat<T>, a: &[T], b: &[T]) -> Result<Vec<T>> {
    if w.cols() != a.len() + b.len() {
        return Err(Error::Shape(format!(
            "projection expects {} inputs, got {} + {}",
            w.cols(),
            a.len(),
            b.len()
        )));
    }
    let na = a.len();
    Ok((0..w.rows())
        .map(|o| {
            let r = w.row(o);
            dot(&r[..na], a) + dot(&r[na..], b)
        })
        .collect())
}

pub fn fuse_concat<T: Real>(e_f: &[T], e_v: &[T], proj: &Mat<T>) -> Result<Vec<T>> {
    project_concat(proj, e_f, e_v)
}

/// Geometric wavelengths `ω_i` from `min` to `max`, one per sin/cos pair.
pub fn wavelengths(d: usize, min: f64, max: f64) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time encoding width {d} must be even"
        )));
    }
    if !(min > 0.0 && max >= min) {
        return Err(Error::Config(
            "wavelengths must satisfy 0 < min ≤ max".into(),
        ));
    }
    let half = d / 2;
    Ok((0..half)
        .map(|i| {
            if half == 1 {
                min
            } else {
                min * (max / min).powf(i as f64 / (half - 1) as f64)
            }
        })
        .collect())
}

/// Interleaved `[sin(t/ω_0), cos(t/ω_0), sin(t/ω_1), …]`.
pub fn time_encoding<T: Real>(t: f64, wavelengths: &[f64]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * wavelengths.len());
    for &w in wavelengths {
        let a = t / w;
        out.push(T::lit(a.sin()));
        out.push(T::lit(a.cos()));
    }
    out
}

pub fn inject_time<T: Real>(content: &[T], p_t: &[T], mode: TimeInjection) -> Result<Vec<T>> {
    if content.len() != p_t.len() {
        return Err(Error::Shape(format!(
            "content width {} vs time width {}",
            content.len(),
            p_t.len()
        )));
    }
    Ok(match mode {
        TimeInjection::Add => content.iter().zip(p_t).map(|(c, p)| *c + *p).collect(),
        TimeInjection::Multiply => content
            .iter()
            .zip(p_t)
            .map(|(c, p)| *c * sigmoid(*p))
            .collect(),
    })
}
