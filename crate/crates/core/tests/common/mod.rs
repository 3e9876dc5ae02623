#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ssdr::data::DataMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))
}

pub fn normal_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DataMatrix {
    DataMatrix::new(normal_matrix(rng, n, d)).unwrap()
}

/// Direction used by the single-index model.
pub fn single_index_beta() -> DMatrix<f64> {
    DMatrix::from_column_slice(6, 1, &[1.0, -0.5, 0.5, 0.0, 0.0, 0.0])
}

/// y = Xβ + 0.1ε with n = 200, p = 6.
pub fn single_index(seed: u64) -> (DataMatrix, DataMatrix) {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, 200, 6);
    let noise = normal_matrix(&mut r, 200, 1);
    let y = &x * single_index_beta() + noise * 0.1;
    (DataMatrix::new(x).unwrap(), DataMatrix::new(y).unwrap())
}

/// Row norms of a p×h matrix that are exactly zero.
pub fn zero_rows(m: &DMatrix<f64>) -> Vec<usize> {
    (0..m.nrows())
        .filter(|&i| m.row(i).iter().all(|&v| v == 0.0))
        .collect()
}
