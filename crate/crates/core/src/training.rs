//! Denoising score matching for the slice-patch networks.
//!
//! Each iteration draws a batch of `(volume, t, noise, patch)` samples from
//! a generator seeded by `(seed, iteration)`, so a run depends only on the
//! data, the config and the seed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::partition::{conditional_window, sample_partition, PartitionPolicy, PartitionSchedule};
use crate::score::{DenoiserArch, DenoiserParams, GaussianPrior, NetworkKind};
use crate::volume::{self, SliceSet, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Momentum(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub kind: NetworkKind,
    pub hidden: usize,
    pub emb_dim: usize,
    pub skip: bool,
    /// Gradient steps.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Global gradient-norm cap applied before each step.
    pub grad_clip: Option<f64>,
    /// Square in-plane crop size; `None` trains on whole slices.
    pub crop: Option<usize>,
    /// Which partitions joint training draws its patches from.
    pub partitions: PartitionPolicy,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(kind: NetworkKind) -> Self {
        Self {
            kind,
            hidden: 32,
            emb_dim: 32,
            skip: true,
            iterations: 1000,
            batch_size: 4,
            learning_rate: 1e-3,
            optimizer: Optimizer::Momentum(0.9),
            grad_clip: None,
            crop: None,
            partitions: PartitionPolicy::Blend { cross_frequency: 2 },
            seed: 0,
        }
    }

    pub fn arch(&self) -> Result<DenoiserArch> {
        Ok(DenoiserArch::new(self.kind, self.hidden, self.emb_dim)?.with_skip(self.skip))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if let Optimizer::Momentum(m) = self.optimizer {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::invalid("momentum must lie in [0, 1)"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("gradient clip must be positive"));
            }
        }
        if self.crop == Some(0) {
            return Err(Error::invalid("crop size must be positive"));
        }
        if let PartitionPolicy::Blend { cross_frequency: 0 } = self.partitions {
            return Err(Error::invalid("cross frequency must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Batch-mean loss per voxel, one entry per iteration.
    pub losses: Vec<f64>,
    /// Spacings shown to the network, in order of first appearance.
    pub spacings_seen: Vec<usize>,
}

impl TrainOutcome {
    /// `iteration,loss` rows.
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,loss")?;
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }
}

/// One training example: network input, true noise at the output slots.
struct Sample {
    input: Volume3D,
    noise: Volume3D,
    t: usize,
    spacing: usize,
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

/// Noises the slots of `slots` from `vol`, sharing one noise draw between
/// repeated indices, inside an optional random crop.
fn noisy_slots(
    vol: &Volume3D,
    slots: &[usize],
    crop: Option<usize>,
    ab: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Volume3D, Volume3D)> {
    let (w, h) = (vol.width(), vol.height());
    let (cw, ch) = match crop {
        Some(c) => (c.min(w), c.min(h)),
        None => (w, h),
    };
    let x0 = rng.random_range(0..=w - cw);
    let y0 = rng.random_range(0..=h - ch);
    let mut distinct = slots.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let n = cw * ch;
    let noise_by_slice: Vec<Vec<f64>> = distinct
        .iter()
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut input = Vec::with_capacity(n * slots.len());
    let mut noise = Vec::with_capacity(n * slots.len());
    for &z in slots {
        let e = &noise_by_slice[distinct.binary_search(&z).unwrap()];
        let src = vol.slice(z);
        for y in 0..ch {
            for x in 0..cw {
                let q = y * cw + x;
                input.push(sa * src[(y0 + y) * w + x0 + x] + sb * e[q]);
            }
        }
        noise.extend_from_slice(e);
    }
    Ok((
        Volume3D::from_vec(cw, ch, slots.len(), input)?,
        Volume3D::from_vec(cw, ch, slots.len(), noise)?,
    ))
}

fn check_volumes(volumes: &[Volume3D], min_depth: usize) -> Result<()> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::invalid("no training volumes"))?;
    for v in volumes {
        if !v.same_shape(first) {
            return Err(Error::invalid("training volumes differ in shape"));
        }
    }
    if first.depth() < min_depth {
        return Err(Error::invalid(format!(
            "training volumes need depth >= {min_depth}, got {}",
            first.depth()
        )));
    }
    Ok(())
}

fn run<F>(config: &TrainConfig, sched: &NoiseSchedule, mut draw: F) -> Result<TrainOutcome>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> Result<Sample>,
{
    config.validate()?;
    let arch = config.arch()?;
    let mut params = DenoiserParams::init(arch, config.seed);
    let mut velocity = vec![0.0; arch.param_count()];
    let mut losses = Vec::with_capacity(config.iterations);
    let mut spacings_seen = Vec::new();
    for it in 0..config.iterations {
        let mut rng = iteration_rng(config.seed, it);
        let mut grad = vec![0.0; arch.param_count()];
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let t = rng.random_range(1..=sched.len());
            let s = draw(&mut rng, t)?;
            if !spacings_seen.contains(&s.spacing) {
                spacings_seen.push(s.spacing);
            }
            // ‖ε̂ - ε‖² / σ_t², the squared score residual
            let weight = 1.0 / (1.0 - sched.alpha_bar(s.t)?);
            let (l, g) = params
                .noise_loss_grad(&s.input, s.t, s.spacing, &s.noise, sched, weight)
                .map_err(|_| Error::TrainingFailure {
                    iteration: it,
                    loss: f64::NAN,
                })?;
            let scale = 1.0 / (config.batch_size * s.noise.len()) as f64;
            loss += l * scale;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b * scale;
            }
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { iteration: it, loss });
        }
        losses.push(loss);
        if let Some(c) = config.grad_clip {
            let norm = volume::dot(&grad, &grad).sqrt();
            if norm > c {
                let f = c / norm;
                grad.iter_mut().for_each(|g| *g *= f);
            }
        }
        let lr = config.learning_rate;
        let weights = params.weights_mut();
        match config.optimizer {
            Optimizer::Sgd => {
                for (w, g) in weights.iter_mut().zip(&grad) {
                    *w -= lr * g;
                }
            }
            Optimizer::Momentum(m) => {
                for ((w, v), g) in weights.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                    *v = m * *v + g;
                    *w -= lr * *v;
                }
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::TrainingFailure { iteration: it, loss });
        }
    }
    params.round_to_f32();
    Ok(TrainOutcome {
        params,
        losses,
        spacings_seen,
    })
}

/// Conditional training: predict the noise of slice `i` from the noisy
/// window `i - j ..= i + j`, repetition-padded at the ends.
pub fn train_blend(volumes: &[Volume3D], config: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainOutcome> {
    let j = match config.kind {
        NetworkKind::Conditional { j } => j,
        NetworkKind::Joint { .. } => {
            return Err(Error::invalid("train_blend needs a conditional network"))
        }
    };
    check_volumes(volumes, 1)?;
    run(config, sched, |rng, t| {
        let vol = &volumes[rng.random_range(0..volumes.len())];
        let i = rng.random_range(0..vol.depth());
        let window = conditional_window(i, j, vol.depth());
        let ab = sched.alpha_bar(t)?;
        let (input, noise) = noisy_slots(vol, &window, config.crop, ab, rng)?;
        let center = Volume3D::from_vec(noise.width(), noise.height(), 1, noise.slice(j).to_vec())?;
        Ok(Sample {
            input,
            noise: center,
            t,
            spacing: 1,
        })
    })
}

/// Joint training: pick a partition and one of its patches, then regress
/// the noise of all `k` slots with the patch spacing as positional input.
pub fn train_blendpp(volumes: &[Volume3D], config: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainOutcome> {
    let k = match config.kind {
        NetworkKind::Joint { k } => k,
        NetworkKind::Conditional { .. } => {
            return Err(Error::invalid("train_blendpp needs a joint network"))
        }
    };
    check_volumes(volumes, k)?;
    let depth = volumes[0].depth();
    let mut policy = config.partitions;
    if matches!(policy, PartitionPolicy::Blend { .. }) && !depth.is_multiple_of(k * k) {
        return Err(Error::invalid(format!(
            "cross partitions need training depth divisible by {}",
            k * k
        )));
    }
    if k == 1 {
        policy = PartitionPolicy::Fixed { offset: 0 };
    }
    run(config, sched, |rng, t| {
        let vol = &volumes[rng.random_range(0..volumes.len())];
        let schedule = PartitionSchedule {
            policy,
            seed: rng.random(),
        };
        let partition = sample_partition(&schedule, depth, k, rng.random_range(0..usize::MAX / 2))?;
        let patch = &partition.patches()[rng.random_range(0..partition.patches().len())];
        let ab = sched.alpha_bar(t)?;
        let (input, noise) = noisy_slots(vol, &patch.slots(), config.crop, ab, rng)?;
        Ok(Sample {
            input,
            noise,
            t,
            spacing: patch.spacing(),
        })
    })
}

/// Mean per-voxel squared score error of `params` against a Gaussian
/// prior's exact score on fresh noisy patches, relative to the mean squared
/// oracle score. Patches are adjacent runs of the network's width.
pub fn oracle_score_error(
    params: &DenoiserParams,
    prior: &GaussianPrior,
    sched: &NoiseSchedule,
    timesteps: &[usize],
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use crate::score::{PatchMode, PatchScoreRequest, ScoreBackend};
    let arch = params.arch();
    let width = arch.in_channels();
    if prior.depth() < width {
        return Err(Error::invalid("prior is thinner than the network window"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = prior.mean();
    let (w, h, d) = mean.dims();
    let (mut err, mut norm) = (0.0, 0.0);
    for s in 0..samples {
        let x0 = prior.sample(&mut rng)?;
        for &t in timesteps {
            let eps = crate::diffusion::gaussian_volume(w, h, d, 1.0, &mut rng)?;
            let x_t = crate::diffusion::add_noise(&x0, t, &eps, sched)?;
            let start = (s * 7 + t) % (d - width + 1);
            let set = SliceSet::strided(start, width, 1)?;
            let patch = volume::extract_patch(&x_t, &set)?;
            let mode = match arch.kind {
                NetworkKind::Joint { .. } => PatchMode::Joint,
                NetworkKind::Conditional { j } => PatchMode::Conditional { j },
            };
            let req = PatchScoreRequest {
                patch: &patch,
                indices: set.indices(),
                t,
                spacing: 1,
                mode,
            };
            let got = params.patch_score(&req, sched)?;
            let want = prior.patch_score(&req, sched)?;
            for (g, o) in got.data().iter().zip(want.data()) {
                err += (g - o) * (g - o);
                norm += o * o;
            }
        }
    }
    Ok(err / norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    /// Mean `‖X + Y‖²`.
    pub joint: f64,
    /// Mean `2‖X‖² + 2‖Y‖²`.
    pub bound: f64,
    pub gap: f64,
    pub holds: bool,
}

/// Compares `‖X + Y‖²` with `2‖X‖² + 2‖Y‖²` averaged over paired samples.
pub fn product_bound(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<BoundReport> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::invalid("need equally many non-empty X and Y samples"));
    }
    let (mut joint, mut bound) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        if x.len() != y.len() {
            return Err(Error::invalid("X and Y sample lengths differ"));
        }
        joint += x.iter().zip(y).map(|(a, b)| (a + b) * (a + b)).sum::<f64>();
        bound += 2.0 * volume::dot(x, x) + 2.0 * volume::dot(y, y);
    }
    let n = xs.len() as f64;
    let (joint, bound) = (joint / n, bound / n);
    Ok(BoundReport {
        joint,
        bound,
        gap: bound - joint,
        holds: joint <= bound * (1.0 + 1e-12),
    })
}

/// The two-component loss bound: `X = a s_q - a/(a+b) r`, `Y = b s_r -
/// b/(a+b) r` with `r = (y - x)/σ²` the regression target. `joint` is then
/// the loss of the combined score `a s_q + b s_r`.
pub fn check_product_bound(
    q_scores: &[Vec<f64>],
    r_scores: &[Vec<f64>],
    targets: &[Vec<f64>],
    a: f64,
    b: f64,
) -> Result<BoundReport> {
    if q_scores.len() != targets.len() || r_scores.len() != targets.len() {
        return Err(Error::invalid("score and target lists differ in length"));
    }
    if !(a + b != 0.0) {
        return Err(Error::invalid("a + b must be nonzero"));
    }
    let (fa, fb) = (a / (a + b), b / (a + b));
    let mut xs = Vec::with_capacity(targets.len());
    let mut ys = Vec::with_capacity(targets.len());
    for ((q, r), tgt) in q_scores.iter().zip(r_scores).zip(targets) {
        if q.len() != tgt.len() || r.len() != tgt.len() {
            return Err(Error::invalid("score and target lengths differ"));
        }
        xs.push(q.iter().zip(tgt).map(|(s, g)| a * s - fa * g).collect());
        ys.push(r.iter().zip(tgt).map(|(s, g)| b * s - fb * g).collect());
    }
    product_bound(&xs, &ys)
}

/// One noisy training pair with arbitrary patch-network outputs.
#[derive(Clone, Debug)]
pub struct DsmSample {
    pub clean: Volume3D,
    pub noisy: Volume3D,
    pub sigma: f64,
    /// Score output for each patch, in partition order.
    pub patch_scores: Vec<Volume3D>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparableReport {
    pub full_loss: f64,
    pub patch_loss_sum: f64,
    pub rel_error: f64,
}

/// Full-volume DSM loss of the summed patch scores against the sum of the
/// per-patch DSM losses, for a disjoint cover by `patches`.
pub fn check_separable_reduction(
    prior: &GaussianPrior,
    patches: &[SliceSet],
    samples: &[DsmSample],
) -> Result<SeparableReport> {
    let c = prior.corr();
    for a in 0..c.nrows() {
        for b in 0..c.ncols() {
            if a != b && c[(a, b)].abs() > 1e-12 {
                return Err(Error::invalid("prior is not separable across slices"));
            }
        }
    }
    let depth = prior.depth();
    let mut seen = vec![false; depth];
    for s in patches {
        for &z in s.indices() {
            if z >= depth || seen[z] {
                return Err(Error::invalid(format!("patches overlap or leave the volume at slice {z}")));
            }
            seen[z] = true;
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::invalid("patches do not cover the volume"));
    }
    let (mut full, mut split) = (0.0, 0.0);
    for s in samples {
        if s.patch_scores.len() != patches.len() || !s.clean.same_shape(&s.noisy) || s.clean.depth() != depth {
            return Err(Error::invalid("sample does not match the partition"));
        }
        let inv = 1.0 / (s.sigma * s.sigma);
        let n = s.clean.slice_len();
        let mut summed = Volume3D::zeros(s.clean.width(), s.clean.height(), depth)?;
        for (set, score) in patches.iter().zip(&s.patch_scores) {
            if score.depth() != set.len() || score.slice_len() != n {
                return Err(Error::invalid("patch score shape mismatch"));
            }
            volume::scatter_into(&mut summed, set, score)?;
            for (slot, &z) in set.indices().iter().enumerate() {
                for q in 0..n {
                    let target = (s.noisy.slice(z)[q] - s.clean.slice(z)[q]) * inv;
                    let r = score.slice(slot)[q] - target;
                    split += r * r;
                }
            }
        }
        for ((o, y), x) in summed.data().iter().zip(s.noisy.data()).zip(s.clean.data()) {
            let r = o - (y - x) * inv;
            full += r * r;
        }
    }
    let rel_error = (full - split).abs() / full.abs().max(f64::MIN_POSITIVE);
    Ok(SeparableReport {
        full_loss: full,
        patch_loss_sum: split,
        rel_error,
    })
}
