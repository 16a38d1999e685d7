//! The desk-scale sparse-view benchmark: a synthetic phantom family, one
//! held-out test phantom, one validation phantom and a fixed scan.
//!
//! Seeds are laid out from a single base seed `s`: the test phantom uses
//! `s`, the validation phantom `s + 1`, and the training family
//! `s + 1000 ..`.

use crate::ct::{self, ScanMode, Sinogram, ViewGeometry};
use crate::error::Result;
use crate::partition::PartitionPolicy;
use crate::phantom::{make_phantom, phantom_family, PhantomSpec};
use crate::score::NetworkKind;
use crate::training::{Optimizer, TrainConfig};
use crate::volume::Volume3D;

/// Candidate z-TV weights for the regularised baseline; the one used is
/// picked by PSNR on the validation phantom.
pub const ZTV_WEIGHT_GRID: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];

/// Weight of the deliberately over-smoothing z-TV run.
pub const HEAVY_ZTV_WEIGHT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DeskBenchmark {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub ellipses: usize,
    pub z_variation: f64,
    pub train_volumes: usize,
    pub mode: ScanMode,
    pub views: usize,
    pub seed: u64,
}

impl Default for DeskBenchmark {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            depth: 18,
            ellipses: 6,
            z_variation: 1.0,
            train_volumes: 16,
            mode: ScanMode::Sparse,
            views: 8,
            seed: 0,
        }
    }
}

impl DeskBenchmark {
    fn spec(&self, seed: u64) -> PhantomSpec {
        PhantomSpec {
            z_variation: self.z_variation,
            ..PhantomSpec::new(self.width, self.height, self.depth, self.ellipses, seed)
        }
    }

    pub fn ground_truth(&self) -> Result<Volume3D> {
        make_phantom(&self.spec(self.seed))
    }

    pub fn validation_phantom(&self) -> Result<Volume3D> {
        make_phantom(&self.spec(self.seed.wrapping_add(1)))
    }

    pub fn training_family(&self) -> Result<Vec<Volume3D>> {
        phantom_family(&self.spec(self.seed.wrapping_add(1000)), self.train_volumes)
    }

    pub fn geometry(&self) -> Result<ViewGeometry> {
        ct::make_geometry(self.mode, self.views, ct::default_n_det(self.width, self.height))
    }

    /// Noise-free measurements of `v` under [`Self::geometry`].
    pub fn measure(&self, v: &Volume3D) -> Result<(Sinogram, ViewGeometry)> {
        let g = self.geometry()?;
        Ok((ct::project(v, &g)?, g))
    }

    /// Training settings used for every benchmark network. About 36k steps
    /// fit in four minutes per network on one core.
    pub fn train_config(&self, kind: NetworkKind) -> TrainConfig {
        TrainConfig {
            iterations: 36_000,
            batch_size: 4,
            learning_rate: 2e-2,
            optimizer: Optimizer::Momentum(0.9),
            grad_clip: Some(1.0),
            crop: Some(16.min(self.width).min(self.height)),
            partitions: PartitionPolicy::Blend { cross_frequency: 2 },
            seed: self.seed.wrapping_add(7),
            ..TrainConfig::new(kind)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantoms_are_distinct() {
        let b = DeskBenchmark {
            width: 12,
            height: 12,
            depth: 3,
            train_volumes: 2,
            ..Default::default()
        };
        let gt = b.ground_truth().unwrap();
        let val = b.validation_phantom().unwrap();
        let fam = b.training_family().unwrap();
        assert_ne!(gt, val);
        assert!(fam.iter().all(|v| *v != gt && *v != val));
        assert_eq!(fam.len(), 2);
    }

    #[test]
    fn crop_never_exceeds_the_slice() {
        let b = DeskBenchmark {
            width: 10,
            height: 12,
            ..Default::default()
        };
        assert_eq!(b.train_config(NetworkKind::Joint { k: 3 }).crop, Some(10));
    }
}
