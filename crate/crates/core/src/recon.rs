//! Diffusion-prior reconstruction from sparse-view or limited-angle data.
//!
//! Every method follows the same loop over the timestep plan:
//!
//! ```text
//! s   = score of x_t            (blended patches, conditional slices, ...)
//! x̂   = Tweedie(x_t, s)
//! x̂′  = CG(A*A, A*y, init = x̂, M iterations)
//! x_{t_prev} = DDIM(x̂′, ε̂)
//! ```
//!
//! and differs only in how the score is assembled.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ct::{Projector, Sinogram, ViewGeometry};
use crate::diffusion::{self, NoiseSchedule, TimestepPlan};
use crate::error::{Error, Result};
use crate::krylov::{cg_volume, NormalOperator};
use crate::metrics;
use crate::partition::{
    blended_score_threads, conditional_blended_score_threads, sample_partition, PartitionPolicy,
    PartitionSchedule,
};
use crate::score::ScoreBackend;
use crate::volume::{self, Volume3D};

/// Source of the DDIM noise direction after data consistency.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseDirection {
    /// `(x_t - √ᾱ x̂′) / σ_t`, recomputed from the corrected estimate.
    Rederived,
    /// `-σ_t s`, taken from the blended score.
    FromScore,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ablation {
    None,
    /// One adjacency partition (offset 0) at every step.
    FixedPartition,
    /// Random-offset adjacency partitions, never cross.
    AdjacencyOnly,
    /// Per-slice scores followed by a z-TV proximal step of this weight.
    Ztv(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub nfe: usize,
    pub eta: f64,
    pub cg_iters: usize,
    pub k: usize,
    pub j: usize,
    pub cross_frequency: usize,
    pub ablation: Ablation,
    pub direction: NoiseDirection,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            nfe: 200,
            eta: 0.85,
            cg_iters: 5,
            k: 3,
            j: 1,
            cross_frequency: 2,
            ablation: Ablation::None,
            direction: NoiseDirection::Rederived,
            seed: 0,
            threads: 1,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::invalid("NFE count must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid("patch size k must be at least 1"));
        }
        if self.cross_frequency == 0 {
            return Err(Error::invalid("cross frequency must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!("eta {} outside [0, 1]", self.eta)));
        }
        if let Ablation::Ztv(w) = self.ablation {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("z-TV weight must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn partition_schedule(&self) -> Result<PartitionSchedule> {
        let policy = match self.ablation {
            Ablation::FixedPartition => PartitionPolicy::Fixed { offset: 0 },
            Ablation::AdjacencyOnly => PartitionPolicy::AdjacencyOnly,
            _ => PartitionPolicy::Blend {
                cross_frequency: self.cross_frequency,
            },
        };
        PartitionSchedule::with_policy(policy, self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }
}

/// Measurements plus the geometry and image size they belong to.
#[derive(Clone, Debug)]
pub struct ReconProblem<'a> {
    pub sinogram: &'a Sinogram,
    pub geometry: &'a ViewGeometry,
    pub width: usize,
    pub height: usize,
}

impl ReconProblem<'_> {
    fn check(&self) -> Result<()> {
        if !self.sinogram.matches(self.geometry) {
            return Err(Error::invalid(format!(
                "sinogram ({} views x {} bins) does not match the geometry ({} views x {} bins)",
                self.sinogram.n_views(),
                self.sinogram.n_det(),
                self.geometry.n_views(),
                self.geometry.n_det()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: usize,
    pub partition: &'static str,
    /// `‖A x̂′ - y‖` on the (padded) problem.
    pub residual_norm: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReconOutcome {
    pub volume: Volume3D,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl ReconOutcome {
    /// `step,t,partition_kind,residual_norm,psnr_vs_gt` rows; the last
    /// column is empty without a reference.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,t,partition_kind,residual_norm,psnr_vs_gt")?;
        for d in &self.diagnostics {
            let psnr = d.psnr.map(|p| p.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", d.step, d.t, d.partition, d.residual_norm, psnr)?;
        }
        Ok(())
    }
}

/// How one step gets its full-volume score.
enum ScoreRule {
    Patches(PartitionSchedule, usize),
    Conditional(usize),
}

/// Proximal map of `weight · Σ|x[z+1] - x[z]|` applied to every pixel's
/// z-profile (dual projected gradient, fixed iteration count).
pub fn prox_ztv(v: &Volume3D, weight: f64) -> Volume3D {
    let (w, h, d) = v.dims();
    if weight == 0.0 || d < 2 {
        return v.clone();
    }
    let n = w * h;
    let mut out = v.clone();
    let mut prof = vec![0.0; d];
    let mut dual = vec![0.0; d - 1];
    let mut x = vec![0.0; d];
    for q in 0..n {
        for z in 0..d {
            prof[z] = v.data()[z * n + q];
        }
        dual.iter_mut().for_each(|p| *p = 0.0);
        for _ in 0..200 {
            // x = v - Dᵀp, with (Dᵀp)[z] = p[z-1] - p[z]
            for z in 0..d {
                let left = if z > 0 { dual[z - 1] } else { 0.0 };
                let right = if z + 1 < d { dual[z] } else { 0.0 };
                x[z] = prof[z] - (left - right);
            }
            for z in 0..d - 1 {
                let g = x[z + 1] - x[z];
                dual[z] = (dual[z] + 0.25 * g).clamp(-weight, weight);
            }
        }
        for z in 0..d {
            let left = if z > 0 { dual[z - 1] } else { 0.0 };
            let right = if z + 1 < d { dual[z] } else { 0.0 };
            out.data_mut()[z * n + q] = prof[z] - (left - right);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn run<B: ScoreBackend + ?Sized>(
    problem: &ReconProblem<'_>,
    backend: &B,
    sched: &NoiseSchedule,
    config: &ReconConfig,
    rule: ScoreRule,
    pad_multiple: usize,
    ztv_weight: f64,
    reference: Option<&Volume3D>,
) -> Result<ReconOutcome> {
    config.validate()?;
    problem.check()?;
    let depth = problem.sinogram.depth();
    let padded_depth = volume::round_up_depth(depth, pad_multiple);
    let (above, _) = volume::padding_split(depth, padded_depth)?;
    let y = problem.sinogram.pad_repeat(padded_depth)?;
    let projector = Projector::new(problem.geometry, problem.width, problem.height)?;
    let normal = NormalOperator::new(&projector, padded_depth);
    let rhs = normal.rhs(&y)?;
    let plan = TimestepPlan::uniform(sched, config.nfe, config.eta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sigma_t = sched.sigma(sched.len())?;
    let mut x = diffusion::gaussian_volume(problem.width, problem.height, padded_depth, sigma_t, &mut rng)?;
    let mut diagnostics = Vec::with_capacity(plan.nfe());

    for (step, (t, t_prev)) in plan.pairs().enumerate() {
        let wrap = |e: Error| Error::Step {
            step,
            source: Box::new(e),
        };
        let (score, kind) = match &rule {
            ScoreRule::Patches(schedule, k) => {
                let part = sample_partition(schedule, padded_depth, *k, step).map_err(wrap)?;
                let s = blended_score_threads(backend, &x, t, &part, sched, config.threads).map_err(wrap)?;
                (s, part.kind().label())
            }
            ScoreRule::Conditional(j) => {
                let s = conditional_blended_score_threads(backend, &x, t, *j, sched, config.threads)
                    .map_err(wrap)?;
                (s, "conditional")
            }
        };
        let x0 = diffusion::tweedie(&x, &score, t, sched).map_err(wrap)?;
        let mut x0c = if config.cg_iters > 0 {
            cg_volume(&normal, &rhs, &x0, config.cg_iters).map_err(wrap)?.0
        } else {
            x0
        };
        if ztv_weight > 0.0 {
            x0c = prox_ztv(&x0c, ztv_weight);
        }
        let residual_norm = {
            let ax = projector.project(&x0c).map_err(wrap)?;
            ax.data()
                .iter()
                .zip(y.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let psnr = match reference {
            Some(r) => Some(metrics::psnr(&x0c.crop_depth(above, depth)?, r, 1.0).map_err(wrap)?),
            None => None,
        };
        diagnostics.push(StepDiagnostics {
            step,
            t,
            partition: kind,
            residual_norm,
            psnr,
        });
        let eps = match config.direction {
            NoiseDirection::Rederived => diffusion::implied_noise(&x, &x0c, t, sched).map_err(wrap)?,
            NoiseDirection::FromScore => {
                let s = sched.sigma(t)?;
                score.map(|v| -s * v)
            }
        };
        x = diffusion::ddim_step_with_noise(&x0c, &eps, t, t_prev, config.eta, sched, &mut rng).map_err(wrap)?;
        if !x.is_finite() {
            return Err(Error::NumericFailure {
                message: format!("non-finite iterate after step {step}"),
                iteration: Some(step),
            });
        }
    }
    Ok(ReconOutcome {
        volume: x.crop_depth(above, depth)?,
        diagnostics,
    })
}

/// Joint-patch blending with random adjacency offsets and periodic cross
/// partitions. The backend must accept `k`-slice joint requests.
pub fn reconstruct_blendpp<B: ScoreBackend + ?Sized>(
    problem: &ReconProblem<'_>,
    backend: &B,
    sched: &NoiseSchedule,
    config: &ReconConfig,
    reference: Option<&Volume3D>,
) -> Result<ReconOutcome> {
    if let Ablation::Ztv(_) = config.ablation {
        return Err(Error::invalid("z-TV ablation runs through reconstruct_ztv"));
    }
    let k = config.k;
    let rule = ScoreRule::Patches(config.partition_schedule()?, k);
    run(problem, backend, sched, config, rule, k * k, 0.0, reference)
}

/// Per-slice conditional scores given `j` neighbours on each side. The
/// backend must accept `2j + 1`-slice conditional requests.
pub fn reconstruct_blend<B: ScoreBackend + ?Sized>(
    problem: &ReconProblem<'_>,
    backend: &B,
    sched: &NoiseSchedule,
    config: &ReconConfig,
    reference: Option<&Volume3D>,
) -> Result<ReconOutcome> {
    run(problem, backend, sched, config, ScoreRule::Conditional(config.j), 1, 0.0, reference)
}

/// Independent per-slice scores (`k = 1` joint backend) plus a z-TV
/// proximal step after each data-consistency update. Weight 0 is the plain
/// per-slice reconstruction.
pub fn reconstruct_ztv<B: ScoreBackend + ?Sized>(
    problem: &ReconProblem<'_>,
    backend: &B,
    sched: &NoiseSchedule,
    config: &ReconConfig,
    reference: Option<&Volume3D>,
) -> Result<ReconOutcome> {
    let weight = match config.ablation {
        Ablation::Ztv(w) => w,
        Ablation::None => 0.0,
        _ => return Err(Error::invalid("reconstruct_ztv needs the z-TV ablation")),
    };
    let schedule = PartitionSchedule::with_policy(PartitionPolicy::Fixed { offset: 0 }, config.seed)?;
    run(problem, backend, sched, config, ScoreRule::Patches(schedule, 1), 1, weight, reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prox_zero_weight_is_identity() {
        let v = Volume3D::from_vec(1, 1, 4, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(prox_ztv(&v, 0.0), v);
    }

    #[test]
    fn prox_large_weight_flattens() {
        let v = Volume3D::from_vec(1, 2, 4, vec![0.0, 1.0, 0.2, 0.9, 0.0, 1.0, 0.4, 0.7]).unwrap();
        let p = prox_ztv(&v, 10.0);
        for q in 0..2 {
            let mean: f64 = (0..4).map(|z| v.data()[z * 2 + q]).sum::<f64>() / 4.0;
            for z in 0..4 {
                assert!((p.data()[z * 2 + q] - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prox_two_point_closed_form() {
        // two samples a < b: each moves by min(λ, (b - a)/2) toward the other
        let v = Volume3D::from_vec(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let p = prox_ztv(&v, 0.2);
        assert!((p.data()[0] - 0.2).abs() < 1e-9 && (p.data()[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(ReconConfig::default().validate().is_ok());
        assert!(ReconConfig { nfe: 0, ..Default::default() }.validate().is_err());
        assert!(ReconConfig { eta: 1.5, ..Default::default() }.validate().is_err());
        assert!(ReconConfig { ablation: Ablation::Ztv(-1.0), ..Default::default() }.validate().is_err());
    }
}
