//! Patch score evaluation.
//!
//! A backend maps a stack of noisy slices to the score of their joint
//! marginal (joint mode) or to the conditional score of the center slice
//! given its neighbours (conditional mode). Two backends exist: an exact
//! Gaussian oracle and a small trainable convolutional denoiser.

mod denoiser;
mod oracle;

pub use denoiser::{Activations, DenoiserArch, DenoiserParams, NetworkKind};
pub use oracle::GaussianPrior;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchMode {
    /// Score of all `k` slices of the patch.
    Joint,
    /// Score of the center slice of a `2j + 1` window given the others.
    Conditional { j: usize },
}

/// One patch-score query.
#[derive(Clone, Copy, Debug)]
pub struct PatchScoreRequest<'a> {
    /// `k` stacked slices of the noisy iterate.
    pub patch: &'a Volume3D,
    /// Volume slice index behind each patch slot. Repeats mark padding.
    pub indices: &'a [usize],
    pub t: usize,
    /// Relative positional encoding: distance between consecutive slices.
    pub spacing: usize,
    pub mode: PatchMode,
}

impl PatchScoreRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        let k = self.patch.depth();
        if self.indices.len() != k {
            return Err(Error::invalid(format!(
                "patch has {k} slices but {} indices",
                self.indices.len()
            )));
        }
        if self.spacing == 0 {
            return Err(Error::invalid("spacing must be at least 1"));
        }
        if let PatchMode::Conditional { j } = self.mode {
            if k != 2 * j + 1 {
                return Err(Error::invalid(format!(
                    "conditional window with j = {j} needs {} slices, got {k}",
                    2 * j + 1
                )));
            }
        }
        Ok(())
    }

    /// Number of output slices: `k` for joint, 1 for conditional.
    pub fn output_depth(&self) -> usize {
        match self.mode {
            PatchMode::Joint => self.patch.depth(),
            PatchMode::Conditional { .. } => 1,
        }
    }
}

/// Something that can score a patch of noisy slices.
pub trait ScoreBackend: Sync {
    /// Returns the score for every patch slot (joint) or for the center
    /// slot only (conditional).
    fn patch_score(&self, req: &PatchScoreRequest<'_>, sched: &NoiseSchedule) -> Result<Volume3D>;
}

/// Sinusoidal encoding of the timestep `t` and slice spacing `p`.
///
/// The first `dim/2` entries encode `t`, the rest encode `p`. Each half is
/// `[sin(ω_i x) .., cos(ω_i x) ..]` with `ω_i = 10000^(-i/n)`, zero-padded
/// when `dim/2` is odd.
pub fn embed(t: f64, p: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(Error::invalid(format!("embedding dimension {dim} must be even and positive")));
    }
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for x in [t, p] {
        sinusoid(x, half, &mut out);
    }
    Ok(out)
}

fn sinusoid(x: f64, len: usize, out: &mut Vec<f64>) {
    let n = len / 2;
    let freqs: Vec<f64> = (0..n)
        .map(|i| (-(10000f64.ln()) * i as f64 / n as f64).exp())
        .collect();
    out.extend(freqs.iter().map(|w| (w * x).sin()));
    out.extend(freqs.iter().map(|w| (w * x).cos()));
    if len % 2 == 1 {
        out.push(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_at_zero() {
        let e = embed(0.0, 3.0, 16).unwrap();
        assert_eq!(e.len(), 16);
        assert!(e[..4].iter().all(|&v| v == 0.0));
        assert!(e[4..8].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn embed_is_pure_and_separable() {
        let a = embed(417.0, 1.0, 32).unwrap();
        assert_eq!(a, embed(417.0, 1.0, 32).unwrap());
        let b = embed(417.0, 3.0, 32).unwrap();
        assert_eq!(a[..16], b[..16]);
        assert_ne!(a[16..], b[16..]);
    }

    #[test]
    fn embed_rejects_odd_dim() {
        assert!(embed(1.0, 1.0, 7).is_err());
        assert!(embed(1.0, 1.0, 0).is_err());
        assert_eq!(embed(1.0, 1.0, 6).unwrap().len(), 6);
    }

    #[test]
    fn conditional_request_shape() {
        let patch = Volume3D::zeros(2, 2, 3).unwrap();
        let ok = PatchScoreRequest {
            patch: &patch,
            indices: &[0, 1, 2],
            t: 1,
            spacing: 1,
            mode: PatchMode::Conditional { j: 1 },
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.output_depth(), 1);
        let bad = PatchScoreRequest { mode: PatchMode::Conditional { j: 2 }, ..ok };
        assert!(bad.validate().is_err());
        let bad_idx = PatchScoreRequest { indices: &[0, 1], ..ok };
        assert!(bad_idx.validate().is_err());
    }
}
