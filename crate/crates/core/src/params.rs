//! Named-tensor traversal and seeded initialization shared by all parameter
//! groups.

use rand::Rng;

use crate::real::Real;
use crate::rng::Streams;
use crate::tensor::Mat;

/// A group of named tensors with a fixed traversal order.
pub trait Parameters<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>));

    /// Named tensors in traversal order.
    fn tensors(&self) -> Vec<(String, &Mat<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n.to_owned(), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |n, t| out.push((n.to_owned(), t)));
        out
    }

    fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor. Both sides must share a layout.
    fn add_from(&mut self, other: &Self) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn scale_all(&mut self, s: T) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Draws each tensor from a stream keyed by its name, so a tensor's initial
/// value depends only on the seed, its name and its shape.
#[derive(Debug, Clone, Copy)]
pub struct Initializer {
    streams: Streams,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            streams: Streams::new(seed),
        }
    }

    pub fn uniform<T: Real>(&self, name: &str, rows: usize, cols: usize, bound: f64) -> Mat<T> {
        let mut rng = self.streams.stream(&format!("init/{name}"));
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.random_range(-bound..=bound)))
            .collect();
        Mat::from_vec(rows, cols, data).expect("shape")
    }

    /// Fan-in scaled uniform, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn fan_in<T: Real>(&self, name: &str, rows: usize, cols: usize, fan_in: usize) -> Mat<T> {
        self.uniform(name, rows, cols, 1.0 / (fan_in as f64).sqrt())
    }
}
