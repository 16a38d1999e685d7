//! Slice partitions and score blending.
//!
//! A partition splits the slice indices `0..depth` into disjoint patches of
//! `k` slots. Adjacency partitions use runs of consecutive slices shifted by
//! an offset `m`; cross partitions take stride-`k` slices inside blocks of
//! `k²`. Partial runs at the volume boundary are filled by repeating the
//! boundary slice, and the repeated slots are averaged when scores are
//! scattered back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::score::{PatchMode, PatchScoreRequest, ScoreBackend};
use crate::volume::{gather_slices, SliceSet, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionKind {
    Adjacency { offset: usize },
    Cross { block_offset: usize },
}

impl PartitionKind {
    pub fn label(&self) -> &'static str {
        match self {
            PartitionKind::Adjacency { .. } => "adjacency",
            PartitionKind::Cross { .. } => "cross",
        }
    }

    pub fn is_cross(&self) -> bool {
        matches!(self, PartitionKind::Cross { .. })
    }
}

/// Distinct slices of one patch plus the number of repeated boundary slots
/// before and after them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    set: SliceSet,
    lead: usize,
    trail: usize,
}

impl Patch {
    pub fn new(set: SliceSet, lead: usize, trail: usize) -> Self {
        Self { set, lead, trail }
    }

    pub fn set(&self) -> &SliceSet {
        &self.set
    }

    pub fn spacing(&self) -> usize {
        self.set.spacing()
    }

    pub fn lead(&self) -> usize {
        self.lead
    }

    pub fn trail(&self) -> usize {
        self.trail
    }

    pub fn is_padded(&self) -> bool {
        self.lead + self.trail > 0
    }

    /// Number of slots, padding included.
    pub fn size(&self) -> usize {
        self.lead + self.set.len() + self.trail
    }

    /// Slot-by-slot slice indices, e.g. `[0, 0, 0]` or `[7, 8, 8]`.
    pub fn slots(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size());
        out.extend(std::iter::repeat_n(self.set.first(), self.lead));
        out.extend_from_slice(self.set.indices());
        out.extend(std::iter::repeat_n(self.set.last(), self.trail));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    kind: PartitionKind,
    depth: usize,
    k: usize,
    patches: Vec<Patch>,
}

/// Patch from the in-range part of `start, start + step, ..` (`k` slots,
/// `start` may be negative). `None` when nothing is in range.
fn clipped_patch(start: isize, k: usize, step: usize, depth: usize) -> Option<Patch> {
    let slots: Vec<isize> = (0..k).map(|i| start + (i * step) as isize).collect();
    let inside: Vec<usize> = slots
        .iter()
        .filter(|&&z| z >= 0 && (z as usize) < depth)
        .map(|&z| z as usize)
        .collect();
    if inside.is_empty() {
        return None;
    }
    let lead = slots.iter().take_while(|&&z| z < 0).count();
    let trail = k - lead - inside.len();
    let set = SliceSet::new(inside, step).expect("strided indices");
    Some(Patch::new(set, lead, trail))
}

/// Runs of `k` consecutive slices starting at `m - k, m, m + k, ...`.
pub fn adjacency_partition(depth: usize, k: usize, m: usize) -> Result<Partition> {
    if k == 0 || depth == 0 {
        return Err(Error::invalid("depth and patch size must be positive"));
    }
    if m >= k {
        return Err(Error::invalid(format!("offset {m} must be below patch size {k}")));
    }
    let mut patches = Vec::new();
    let mut start = m as isize - if m > 0 { k as isize } else { 0 };
    while start < depth as isize {
        if let Some(p) = clipped_patch(start, k, 1, depth) {
            patches.push(p);
        }
        start += k as isize;
    }
    Ok(Partition {
        kind: PartitionKind::Adjacency { offset: m },
        depth,
        k,
        patches,
    })
}

/// Stride-`k` patches inside consecutive blocks of `k²` slices, with the
/// block grid shifted by `block_offset`.
pub fn cross_partition(depth: usize, k: usize, block_offset: usize) -> Result<Partition> {
    if k == 0 || depth == 0 {
        return Err(Error::invalid("depth and patch size must be positive"));
    }
    let block = k * k;
    if !depth.is_multiple_of(block) {
        return Err(Error::invalid(format!(
            "cross partition needs depth divisible by {block}, got {depth}"
        )));
    }
    if block_offset >= block {
        return Err(Error::invalid(format!(
            "block offset {block_offset} must be below {block}"
        )));
    }
    let mut patches = Vec::new();
    let mut base = block_offset as isize - if block_offset > 0 { block as isize } else { 0 };
    while base < depth as isize {
        for r in 0..k {
            if let Some(p) = clipped_patch(base + r as isize, k, k, depth) {
                patches.push(p);
            }
        }
        base += block as isize;
    }
    Ok(Partition {
        kind: PartitionKind::Cross { block_offset },
        depth,
        k,
        patches,
    })
}

impl Partition {
    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    /// Builds a partition from explicit patches after checking that they
    /// form a disjoint cover of `0..depth` with `k` slots each.
    pub fn from_patches(kind: PartitionKind, depth: usize, k: usize, patches: Vec<Patch>) -> Result<Self> {
        let p = Self {
            kind,
            depth,
            k,
            patches,
        };
        p.check_cover()?;
        Ok(p)
    }

    /// Every in-range slice belongs to exactly one patch.
    pub fn check_cover(&self) -> Result<()> {
        let mut seen = vec![0usize; self.depth];
        for p in &self.patches {
            if p.size() != self.k {
                return Err(Error::invalid(format!(
                    "patch {:?} has {} slots, expected {}",
                    p.set.indices(),
                    p.size(),
                    self.k
                )));
            }
            for &z in p.set.indices() {
                if z >= self.depth {
                    return Err(Error::invalid(format!("slice {z} outside depth {}", self.depth)));
                }
                seen[z] += 1;
            }
        }
        if let Some(z) = seen.iter().position(|&c| c != 1) {
            return Err(Error::invalid(format!(
                "slice {z} is covered {} times",
                seen[z]
            )));
        }
        Ok(())
    }

    /// Whether slices `a` and `b` fall in the same patch.
    pub fn together(&self, a: usize, b: usize) -> bool {
        self.patches
            .iter()
            .any(|p| p.set.indices().contains(&a) && p.set.indices().contains(&b))
    }
}

/// The `k` adjacency offsets plus, when `depth` allows it, the cross
/// partition.
pub fn partition_family(depth: usize, k: usize) -> Result<Vec<Partition>> {
    let mut out = (0..k)
        .map(|m| adjacency_partition(depth, k, m))
        .collect::<Result<Vec<_>>>()?;
    if depth.is_multiple_of(k * k) {
        out.push(cross_partition(depth, k, 0)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionPolicy {
    /// Cross partition every `cross_frequency` iterations, random-offset
    /// adjacency otherwise.
    Blend { cross_frequency: usize },
    /// Random-offset adjacency only.
    AdjacencyOnly,
    /// The same adjacency partition every iteration.
    Fixed { offset: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionSchedule {
    pub policy: PartitionPolicy,
    pub seed: u64,
}

impl PartitionSchedule {
    pub fn new(cross_frequency: usize, seed: u64) -> Result<Self> {
        if cross_frequency == 0 {
            return Err(Error::invalid("cross frequency must be at least 1"));
        }
        Ok(Self {
            policy: PartitionPolicy::Blend { cross_frequency },
            seed,
        })
    }

    pub fn with_policy(policy: PartitionPolicy, seed: u64) -> Result<Self> {
        if let PartitionPolicy::Blend { cross_frequency: 0 } = policy {
            return Err(Error::invalid("cross frequency must be at least 1"));
        }
        Ok(Self { policy, seed })
    }
}

impl Default for PartitionSchedule {
    fn default() -> Self {
        Self {
            policy: PartitionPolicy::Blend { cross_frequency: 2 },
            seed: 0,
        }
    }
}

/// Partition for one iteration. A pure function of the schedule, the
/// shape and `iteration`.
pub fn sample_partition(schedule: &PartitionSchedule, depth: usize, k: usize, iteration: usize) -> Result<Partition> {
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(iteration as u64);
    match schedule.policy {
        PartitionPolicy::Blend { cross_frequency } if iteration.is_multiple_of(cross_frequency) => {
            cross_partition(depth, k, 0)
        }
        PartitionPolicy::Blend { .. } | PartitionPolicy::AdjacencyOnly => {
            adjacency_partition(depth, k, rng.random_range(0..k))
        }
        PartitionPolicy::Fixed { offset } => adjacency_partition(depth, k, offset),
    }
}

fn patch_error(indices: Vec<usize>, e: Error) -> Error {
    Error::Patch {
        indices,
        source: Box::new(e),
    }
}

/// Runs `f` over `0..n` on up to `threads` scoped workers, returning results
/// in index order.
fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("score worker panicked"))
            .collect()
    })
}

/// Full-volume score assembled from the patch scores of one partition.
pub fn blended_score<B: ScoreBackend + ?Sized>(
    backend: &B,
    x_t: &Volume3D,
    t: usize,
    partition: &Partition,
    sched: &NoiseSchedule,
) -> Result<Volume3D> {
    blended_score_threads(backend, x_t, t, partition, sched, 1)
}

/// [`blended_score`] with patch evaluations spread over `threads` workers.
/// The result does not depend on `threads`.
pub fn blended_score_threads<B: ScoreBackend + ?Sized>(
    backend: &B,
    x_t: &Volume3D,
    t: usize,
    partition: &Partition,
    sched: &NoiseSchedule,
    threads: usize,
) -> Result<Volume3D> {
    if partition.depth() != x_t.depth() {
        return Err(Error::invalid(format!(
            "partition covers {} slices, volume has {}",
            partition.depth(),
            x_t.depth()
        )));
    }
    let patches = partition.patches();
    let scores = par_map(patches.len(), threads, |i| {
        let slots = patches[i].slots();
        let input = gather_slices(x_t, &slots)?;
        let req = PatchScoreRequest {
            patch: &input,
            indices: &slots,
            t,
            spacing: patches[i].spacing(),
            mode: PatchMode::Joint,
        };
        let s = backend.patch_score(&req, sched)?;
        if s.depth() != slots.len() || s.slice_len() != x_t.slice_len() {
            return Err(Error::invalid(format!("backend returned a {:?} score", s.dims())));
        }
        Ok(s)
    });
    let mut out = Volume3D::zeros(x_t.width(), x_t.height(), x_t.depth())?;
    let mut counts = vec![0usize; x_t.depth()];
    for (patch, score) in patches.iter().zip(scores) {
        let score = score.map_err(|e| patch_error(patch.set().indices().to_vec(), e))?;
        for (slot, z) in patch.slots().into_iter().enumerate() {
            counts[z] += 1;
            for (o, s) in out.slice_mut(z).iter_mut().zip(score.slice(slot)) {
                *o += s;
            }
        }
    }
    for (z, &c) in counts.iter().enumerate() {
        if c > 1 {
            let inv = 1.0 / c as f64;
            out.slice_mut(z).iter_mut().for_each(|v| *v *= inv);
        }
    }
    Ok(out)
}

/// Window of `2j + 1` slice indices centred on `i`, clamped to the volume.
pub fn conditional_window(i: usize, j: usize, depth: usize) -> Vec<usize> {
    (0..2 * j + 1)
        .map(|s| (i + s).saturating_sub(j).min(depth - 1))
        .collect()
}

/// Stacks the conditional score of every slice given its `j` neighbours on
/// either side.
pub fn conditional_blended_score<B: ScoreBackend + ?Sized>(
    backend: &B,
    x_t: &Volume3D,
    t: usize,
    j: usize,
    sched: &NoiseSchedule,
) -> Result<Volume3D> {
    conditional_blended_score_threads(backend, x_t, t, j, sched, 1)
}

pub fn conditional_blended_score_threads<B: ScoreBackend + ?Sized>(
    backend: &B,
    x_t: &Volume3D,
    t: usize,
    j: usize,
    sched: &NoiseSchedule,
    threads: usize,
) -> Result<Volume3D> {
    let depth = x_t.depth();
    let scores = par_map(depth, threads, |i| {
        let window = conditional_window(i, j, depth);
        let input = gather_slices(x_t, &window)?;
        let req = PatchScoreRequest {
            patch: &input,
            indices: &window,
            t,
            spacing: 1,
            mode: PatchMode::Conditional { j },
        };
        let s = backend
            .patch_score(&req, sched)
            .map_err(|e| patch_error(window.clone(), e))?;
        if s.depth() != 1 || s.slice_len() != x_t.slice_len() {
            return Err(patch_error(
                window,
                Error::invalid(format!("backend returned a {:?} score", s.dims())),
            ));
        }
        Ok(s)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let slices: Vec<&[f64]> = scores.iter().map(|s| s.data()).collect();
    Volume3D::from_slices(x_t.width(), x_t.height(), &slices)
}
