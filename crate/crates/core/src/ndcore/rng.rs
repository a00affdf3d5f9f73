//! Seeded, splittable randomness.
//!
//! Every consumer derives its generator from `(seed, stream)` so that
//! independent parts of a run (initialisation, shuffling, dropout, latent
//! sampling) never share a sequence and each is reproducible on its own.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type SeededRng = ChaCha8Rng;

/// Log-variance bounds applied to every Gaussian head.
pub const LOG_VAR_MIN: f64 = -6.0;
pub const LOG_VAR_MAX: f64 = 2.0;

pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const SOM: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const KMEANS: u64 = 7;
}

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. one per epoch or per minibatch.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn clamp_log_var(v: f64) -> f64 {
    v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Reparameterised draw `mean + exp(log_var / 2) * eps`, `eps ~ N(0, I)`.
///
/// `log_var` is clamped to `[-6, 2]` first.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: ArrayView1<f64>,
    log_var: ArrayView1<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if mean.len() != log_var.len() {
        return Err(Error::dim(format!("mean has {} entries, log_var {}", mean.len(), log_var.len())));
    }
    Ok(mean
        .iter()
        .zip(log_var.iter())
        .map(|(&m, &lv)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + (0.5 * clamp_log_var(lv)).exp() * eps
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn same_seed_same_sample() {
        let m = arr1(&[0.5, -1.0, 2.0]);
        let lv = arr1(&[0.0, -1.0, 1.0]);
        let a = sample_gaussian(m.view(), lv.view(), &mut seeded(7, 0)).unwrap();
        let b = sample_gaussian(m.view(), lv.view(), &mut seeded(7, 0)).unwrap();
        assert_eq!(a, b);
        let c = sample_gaussian(m.view(), lv.view(), &mut seeded(7, 1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn floor_variance_stays_near_mean() {
        let m = arr1(&[1.0, -3.0, 0.25, 10.0]);
        let lv = Array1::from_elem(4, f64::NEG_INFINITY);
        let mut rng = seeded(3, 0);
        let mut eps_rng = seeded(3, 0);
        let z = sample_gaussian(m.view(), lv.view(), &mut rng).unwrap();
        for i in 0..4 {
            let eps: f64 = eps_rng.sample(StandardNormal);
            assert!((z[i] - m[i]).abs() <= (-3.0f64).exp() * eps.abs() + 1e-15);
        }
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let r = sample_gaussian(arr1(&[0.0, 1.0]).view(), arr1(&[0.0]).view(), &mut seeded(0, 0));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn monte_carlo_moments() {
        let n = 100_000;
        let m = arr1(&[0.0]);
        let lv = arr1(&[0.0]);
        let mut rng = seeded(11, 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_gaussian(m.view(), lv.view(), &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn child_seeds_differ() {
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
        assert_eq!(child_seed(5, 9), child_seed(5, 9));
    }
}
