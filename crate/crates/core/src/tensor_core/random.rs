//! Seeded random complex matrices and tensors (standard normal entries).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dense::DenseTensor;
use super::linalg::Matrix;
use crate::scalar::{Real, C};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_c<T: Real>(rng: &mut Rng) -> C<T> {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C::new(T::of(re), T::of(im))
}

pub fn random_matrix_with<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    let data: Vec<C<T>> = (0..rows * cols).map(|_| normal_c(rng)).collect();
    Matrix::from_column_slice(rows, cols, &data)
}

pub fn random_matrix<T: Real>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    random_matrix_with(rows, cols, &mut rng(seed))
}

pub fn random_tensor_with<T: Real>(dims: &[usize], rng: &mut Rng) -> DenseTensor<T> {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| normal_c(rng)).collect();
    DenseTensor::new(dims.to_vec(), data).expect("consistent dims")
}

pub fn random_tensor<T: Real>(dims: &[usize], seed: u64) -> DenseTensor<T> {
    random_tensor_with(dims, &mut rng(seed))
}
