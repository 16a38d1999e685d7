//! Fixtures shared by the benchmarks.

use diffblend::diffusion::gaussian_volume;
use diffblend::{DeskBenchmark, GaussianPrior, Volume3D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded standard-normal volume.
pub fn noise(width: usize, height: usize, depth: usize, seed: u64) -> Volume3D {
    gaussian_volume(width, height, depth, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).expect("positive dimensions")
}

/// The default desk benchmark.
pub fn desk() -> DeskBenchmark {
    DeskBenchmark::default()
}

/// Gaussian prior with 3-slice correlation blocks over a noise mean.
pub fn block_prior(width: usize, height: usize, depth: usize) -> GaussianPrior {
    GaussianPrior::new(
        noise(width, height, depth, 1).map(|v| 0.3 * v),
        vec![0.2; width * height],
        GaussianPrior::block_correlation(depth, 3, 0.6),
    )
    .expect("valid prior")
}
