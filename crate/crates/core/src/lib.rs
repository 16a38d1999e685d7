//! Slice-patch diffusion priors for 3D sparse-view and limited-angle CT.
//!
//! Shared types are re-exported at the crate root.

pub mod ct;
pub mod desk;
pub mod diffusion;
pub mod error;
pub mod krylov;
pub mod metrics;
pub mod partition;
pub mod phantom;
pub mod recon;
pub mod score;
pub mod training;
pub mod volume;

pub use ct::{Projector, ScanMode, Sinogram, ViewGeometry};
pub use desk::DeskBenchmark;
pub use diffusion::{NoiseSchedule, TimestepPlan};
pub use error::{Error, Result};
pub use metrics::{MetricReport, Plane};
pub use partition::{Partition, PartitionKind, PartitionPolicy, PartitionSchedule, Patch};
pub use phantom::PhantomSpec;
pub use recon::{Ablation, NoiseDirection, ReconConfig, ReconOutcome, ReconProblem, StepDiagnostics};
pub use score::{DenoiserArch, DenoiserParams, GaussianPrior, NetworkKind, PatchMode, PatchScoreRequest, ScoreBackend};
pub use training::{Optimizer, TrainConfig, TrainOutcome};
pub use volume::{SliceSet, Volume3D};
