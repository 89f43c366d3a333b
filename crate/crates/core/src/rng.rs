//! Keyed random streams.
//!
//! Every random tensor in the crate is generated from a key such as
//! `(seed, purpose, epoch, step, sample, layer)`. The key is mixed into a
//! ChaCha seed and the tensor's entries are read off the stream in row-major
//! order, so any tensor can be regenerated independently of every other one.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Purpose tags that keep streams for different tensors apart.
pub mod tag {
    pub const LATENT: u64 = 1;
    pub const WEIGHTS: u64 = 2;
    pub const SPECTRA: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const INIT: u64 = 5;
    pub const PREDICT: u64 = 6;
    pub const MIXTURE: u64 = 7;
    pub const TARGET: u64 = 8;
    pub const INDUCING: u64 = 9;
    pub const SPLIT: u64 = 10;
    pub const SPECTRA_PRIOR: u64 = 11;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a key into a single 64-bit seed.
pub fn mix(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x6A09_E667_F3BC_C909, |h, &k| splitmix(h ^ splitmix(k)))
}

pub fn stream(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(key))
}

/// Uniform in the open interval (0, 1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inverting the Gaussian CDF.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    thread_local! {
        static UNIT: Normal = Normal::standard();
    }
    let u = open_uniform(rng);
    UNIT.with(|n| n.inverse_cdf(u))
}

/// `rows × cols` matrix of unit normals filled in row-major order from the keyed stream.
pub fn normal_matrix(rows: usize, cols: usize, key: &[u64]) -> DMatrix<f64> {
    let mut rng = stream(key);
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = standard_normal(&mut rng);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_streams_are_reproducible_and_distinct() {
        let a = normal_matrix(3, 4, &[7, tag::WEIGHTS, 0, 1]);
        let b = normal_matrix(3, 4, &[7, tag::WEIGHTS, 0, 1]);
        let c = normal_matrix(3, 4, &[7, tag::WEIGHTS, 0, 2]);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unit_normal_moments() {
        let m = normal_matrix(1, 100_000, &[1]);
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
