//! Deterministic parallel Monte Carlo.
//!
//! Trials are split into fixed-size chunks. Each chunk is folded
//! sequentially and the chunk results are merged in chunk order, so sums are
//! bit-identical for any number of worker threads.

use rayon::prelude::*;

use crate::{Matrix, Vector};

const CHUNK: u64 = 1024;

pub trait Accumulator: Send {
    fn merge(&mut self, other: Self);
}

/// Runs `trials` trials, folding trial `t` into a chunk accumulator via `step`.
pub fn run<A, I, F>(trials: u64, init: I, step: F) -> A
where
    A: Accumulator,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
{
    let n_chunks = trials.div_ceil(CHUNK);
    let partials: Vec<A> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for t in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                step(&mut acc, t);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in partials {
        total.merge(p);
    }
    total
}

/// Runs `f` inside a dedicated pool with `workers` threads (`0` = rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Running sum and sum of squares of a scalar.
#[derive(Debug, Clone, Default)]
pub struct ScalarStats {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ScalarStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Sample variance (`n − 1` denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

impl Accumulator for ScalarStats {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

/// Sums of a vector sample and its outer product.
#[derive(Debug, Clone)]
pub struct VectorStats {
    pub n: u64,
    pub sum: Vector,
    pub outer: Matrix,
}

impl VectorStats {
    pub fn new(dim: usize) -> Self {
        VectorStats {
            n: 0,
            sum: Vector::zeros(dim),
            outer: Matrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, z: &Vector) {
        self.n += 1;
        self.sum += z;
        self.outer.ger(1.0, z, z, 1.0);
    }
}

impl Accumulator for VectorStats {
    fn merge(&mut self, other: Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.outer += other.outer;
    }
}

impl<A: Accumulator, B: Accumulator> Accumulator for (A, B) {
    fn merge(&mut self, other: Self) {
        self.0.merge(other.0);
        self.1.merge(other.1);
    }
}

impl<A: Accumulator> Accumulator for Vec<A> {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}
