//! Random fixtures for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{Matrix, SymMatrix};
use crate::rng::{standard_normal, substream};

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(substream(seed, 0xfeed, 0))
    }

    pub fn normal(&mut self) -> f64 {
        standard_normal(&mut self.0)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.gen()
    }
}

pub fn random_matrix(rng: &mut TestRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

pub fn random_sym(rng: &mut TestRng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_matrix(&random_matrix(rng, n, n, scale)).unwrap()
}

/// `G Gᵀ` for a random square G with a random rank in 1..=n.
pub fn random_psd(rng: &mut TestRng, n: usize) -> SymMatrix {
    let rank = 1 + (rng.uniform() * n as f64) as usize % n;
    let g = random_matrix(rng, n, rank, 1.0);
    SymMatrix::from_matrix(&g.matmul(&g.transpose())).unwrap()
}
