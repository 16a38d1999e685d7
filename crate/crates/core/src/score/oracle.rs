//! Exact scores of a z-factorized Gaussian prior.
//!
//! The prior is `x ~ N(μ, Σ)` with `Σ = diag(v) ⊗ C`: pixels are independent
//! in-plane, and the slices at pixel `q` have covariance `v_q C`. After VP
//! noising the slices at pixel `q` follow `N(√ᾱ μ_q, ᾱ v_q C + (1-ᾱ) I)`, so
//! every score reduces to small per-pixel solves with sub-blocks of `C`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{PatchMode, PatchScoreRequest, ScoreBackend};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Debug)]
pub struct GaussianPrior {
    mean: Volume3D,
    /// Per-pixel variance `v_q`, length `width * height`.
    spatial_var: Vec<f64>,
    /// `depth x depth` slice correlation `C`.
    corr: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Volume3D, spatial_var: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        let d = mean.depth();
        if spatial_var.len() != mean.slice_len() {
            return Err(Error::invalid(format!(
                "spatial variance has {} entries, expected {}",
                spatial_var.len(),
                mean.slice_len()
            )));
        }
        if spatial_var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("spatial variances must be finite and non-negative"));
        }
        if corr.nrows() != d || corr.ncols() != d {
            return Err(Error::invalid(format!(
                "slice correlation must be {d}x{d}, got {}x{}",
                corr.nrows(),
                corr.ncols()
            )));
        }
        let scale = corr.amax().max(1.0);
        if (&corr - corr.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("slice correlation is not symmetric"));
        }
        if corr.clone().cholesky().is_none() {
            return Err(Error::invalid("slice correlation is not positive definite"));
        }
        Ok(Self {
            mean,
            spatial_var,
            corr,
        })
    }

    /// `N(μ, c I)`: independent voxels of variance `c`.
    pub fn isotropic(mean: Volume3D, variance: f64) -> Result<Self> {
        let n = mean.slice_len();
        let d = mean.depth();
        Self::new(mean, vec![variance; n], DMatrix::identity(d, d))
    }

    /// Slice correlation made of equal diagonal blocks of size `block` with
    /// off-diagonal correlation `rho` inside each block.
    pub fn block_correlation(depth: usize, block: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(depth, depth, |a, b| {
            if a == b {
                1.0
            } else if a / block == b / block {
                rho
            } else {
                0.0
            }
        })
    }

    /// Moment-matched prior for a set of equally shaped volumes.
    ///
    /// The mean is the voxelwise average; `v_q` is the pixel variance pooled
    /// over slices and `C` the pixel-pooled slice correlation. A small ridge
    /// keeps `C` positive definite.
    pub fn fit(volumes: &[Volume3D]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::invalid("cannot fit a prior to zero volumes"))?;
        if volumes.iter().any(|v| !v.same_shape(first)) {
            return Err(Error::invalid("volumes must share one shape"));
        }
        let (w, h, d) = first.dims();
        let n = w * h;
        let count = volumes.len() as f64;
        let mut mean = vec![0.0; n * d];
        for v in volumes {
            for (m, x) in mean.iter_mut().zip(v.data()) {
                *m += x / count;
            }
        }
        let denom = (volumes.len().max(2) - 1) as f64;
        let mut var = vec![0.0; n];
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centred = vec![0.0; d];
        for v in volumes {
            for q in 0..n {
                for z in 0..d {
                    centred[z] = v.data()[z * n + q] - mean[z * n + q];
                }
                let ss: f64 = centred.iter().map(|c| c * c).sum();
                var[q] += ss / (d as f64 * denom);
                for a in 0..d {
                    for b in a..d {
                        cov[(a, b)] += centred[a] * centred[b];
                    }
                }
            }
        }
        let floor = 1e-6;
        for v in var.iter_mut() {
            *v = v.max(floor);
        }
        for a in 0..d {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        let diag: Vec<f64> = (0..d).map(|a| cov[(a, a)].max(1e-12)).collect();
        let mut corr = DMatrix::from_fn(d, d, |a, b| cov[(a, b)] / (diag[a] * diag[b]).sqrt());
        for a in 0..d {
            corr[(a, a)] = 1.0 + 1e-3;
        }
        Self::new(Volume3D::from_vec(w, h, d, mean)?, var, corr)
    }

    /// One draw `μ + sqrt(v_q) L z` per pixel, `C = L Lᵀ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Volume3D> {
        let l = self
            .corr
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("slice correlation lost definiteness"))?
            .l();
        let (w, h, d) = self.mean.dims();
        let n = w * h;
        let mut out = self.mean.clone();
        let data = out.data_mut();
        let mut z = DVector::<f64>::zeros(d);
        for q in 0..n {
            for a in 0..d {
                z[a] = rng.sample(StandardNormal);
            }
            let x = &l * &z;
            let s = self.spatial_var[q].sqrt();
            for a in 0..d {
                data[a * n + q] += s * x[a];
            }
        }
        Ok(out)
    }

    pub fn mean(&self) -> &Volume3D {
        &self.mean
    }

    pub fn spatial_var(&self) -> &[f64] {
        &self.spatial_var
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn depth(&self) -> usize {
        self.mean.depth()
    }

    /// Exact score of the full noisy volume.
    pub fn volume_score(&self, x_t: &Volume3D, t: usize, sched: &NoiseSchedule) -> Result<Volume3D> {
        if !x_t.same_shape(&self.mean) {
            return Err(Error::invalid("volume shape differs from the prior"));
        }
        let d = self.depth();
        let indices: Vec<usize> = (0..d).collect();
        let (distinct, _) = dedupe(&indices);
        let scores = self.marginal_scores(x_t, &indices, &distinct, t, sched)?;
        let n = x_t.slice_len();
        let mut out = Volume3D::zeros(x_t.width(), x_t.height(), d)?;
        for (z, s) in scores.iter().enumerate() {
            out.data_mut()[z * n..(z + 1) * n].copy_from_slice(s);
        }
        Ok(out)
    }

    /// Score of the marginal over `distinct` slice indices; `slots[i]` holds
    /// the patch data for `indices[i]`. Returns one slice per distinct index.
    fn marginal_scores(
        &self,
        patch: &Volume3D,
        indices: &[usize],
        distinct: &[usize],
        t: usize,
        sched: &NoiseSchedule,
    ) -> Result<Vec<Vec<f64>>> {
        if patch.width() != self.mean.width() || patch.height() != self.mean.height() {
            return Err(Error::invalid("patch plane size differs from the prior"));
        }
        if let Some(&z) = distinct.iter().find(|&&z| z >= self.depth()) {
            return Err(Error::invalid(format!(
                "slice {z} outside prior depth {}",
                self.depth()
            )));
        }
        let ab = sched.alpha_bar(t)?;
        let root_ab = ab.sqrt();
        let m = distinct.len();
        let sub = DMatrix::from_fn(m, m, |a, b| self.corr[(distinct[a], distinct[b])]);
        let eig = SymmetricEigen::new(sub);
        let q = &eig.eigenvectors;
        let lambda = &eig.eigenvalues;
        // slot holding the data for each distinct index
        let slot_of: Vec<usize> = distinct
            .iter()
            .map(|z| indices.iter().position(|i| i == z).unwrap())
            .collect();
        let n = patch.slice_len();
        let mut out = vec![vec![0.0; n]; m];
        let mut resid = DVector::<f64>::zeros(m);
        let mut gains = vec![0.0; m];
        for p in 0..n {
            let v = self.spatial_var[p];
            for (g, l) in gains.iter_mut().zip(lambda.iter()) {
                let denom = ab * v * l + (1.0 - ab);
                if !(denom.is_finite() && denom > 1e-300) {
                    return Err(Error::numeric(format!(
                        "singular noisy covariance at pixel {p} (eigenvalue {denom})"
                    )));
                }
                *g = 1.0 / denom;
            }
            for a in 0..m {
                let z = distinct[a];
                resid[a] = patch.data()[slot_of[a] * n + p] - root_ab * self.mean.data()[z * n + p];
            }
            let mut coeff = q.tr_mul(&resid);
            for (c, g) in coeff.iter_mut().zip(&gains) {
                *c *= g;
            }
            let score = q * coeff;
            for a in 0..m {
                out[a][p] = -score[a];
            }
        }
        Ok(out)
    }
}

/// Sorted distinct values and, for every input position, its rank among them.
fn dedupe(indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut distinct = indices.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let rank = indices
        .iter()
        .map(|z| distinct.binary_search(z).unwrap())
        .collect();
    (distinct, rank)
}

impl ScoreBackend for GaussianPrior {
    /// Joint mode returns the marginal score over the distinct slices of the
    /// patch, copied into every slot that repeats an index. Conditional mode
    /// returns the center component of that marginal score, which is the
    /// conditional score of the center slice given the other distinct slices.
    fn patch_score(&self, req: &PatchScoreRequest<'_>, sched: &NoiseSchedule) -> Result<Volume3D> {
        req.validate()?;
        let (distinct, rank) = dedupe(req.indices);
        let scores = self.marginal_scores(req.patch, req.indices, &distinct, req.t, sched)?;
        let (w, h) = (req.patch.width(), req.patch.height());
        match req.mode {
            PatchMode::Joint => {
                let slices: Vec<&[f64]> = rank.iter().map(|&r| scores[r].as_slice()).collect();
                Volume3D::from_slices(w, h, &slices)
            }
            PatchMode::Conditional { j } => {
                Volume3D::from_vec(w, h, 1, scores[rank[j]].clone())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::gather_slices;

    fn wobble(w: usize, h: usize, d: usize, seed: usize) -> Volume3D {
        let data = (0..w * h * d)
            .map(|i| (((i * 7919 + seed * 104729) % 1000) as f64 / 500.0) - 1.0)
            .collect();
        Volume3D::from_vec(w, h, d, data).unwrap()
    }

    #[test]
    fn rejects_non_spd_correlation() {
        let mean = Volume3D::zeros(2, 2, 2).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianPrior::new(mean.clone(), vec![1.0; 4], bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(GaussianPrior::new(mean.clone(), vec![1.0; 4], asym).is_err());
        assert!(GaussianPrior::new(mean, vec![1.0; 3], DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn identity_unit_prior_score_is_minus_patch() {
        let sched = NoiseSchedule::ddpm_default();
        let prior = GaussianPrior::isotropic(Volume3D::zeros(3, 3, 4).unwrap(), 1.0).unwrap();
        let x = wobble(3, 3, 4, 1);
        for t in [1, 200, 1000] {
            let s = prior.volume_score(&x, t, &sched).unwrap();
            for (a, b) in s.data().iter().zip(x.data()) {
                assert!((a + b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_limit() {
        let sched = NoiseSchedule::ddpm_default();
        let mean = wobble(2, 3, 3, 2).map(|v| 0.5 * v);
        let prior = GaussianPrior::new(
            mean.clone(),
            vec![1e-12; 6],
            GaussianPrior::block_correlation(3, 3, 0.4),
        )
        .unwrap();
        let x = wobble(2, 3, 3, 5);
        let t = 300;
        let ab = sched.alpha_bar(t).unwrap();
        let patch = gather_slices(&x, &[0, 1, 2]).unwrap();
        let req = PatchScoreRequest {
            patch: &patch,
            indices: &[0, 1, 2],
            t,
            spacing: 1,
            mode: PatchMode::Joint,
        };
        let s = prior.patch_score(&req, &sched).unwrap();
        for i in 0..x.len() {
            let expect = -(x.data()[i] - ab.sqrt() * mean.data()[i]) / (1.0 - ab);
            assert!((s.data()[i] - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn score_vanishes_at_scaled_mean() {
        let sched = NoiseSchedule::ddpm_default();
        let mean = wobble(3, 2, 4, 3);
        let prior = GaussianPrior::new(
            mean.clone(),
            vec![0.3; 6],
            GaussianPrior::block_correlation(4, 2, 0.6),
        )
        .unwrap();
        let t = 640;
        let root = sched.alpha_bar(t).unwrap().sqrt();
        let x = mean.map(|v| root * v);
        let s = prior.volume_score(&x, t, &sched).unwrap();
        assert!(s.data().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn fit_recovers_shape() {
        let vols: Vec<_> = (0..6).map(|s| wobble(3, 3, 3, s)).collect();
        let prior = GaussianPrior::fit(&vols).unwrap();
        assert_eq!(prior.mean().dims(), (3, 3, 3));
        assert!(prior.spatial_var().iter().all(|&v| v > 0.0));
        assert!(GaussianPrior::fit(&[]).is_err());
    }

    #[test]
    fn out_of_range_patch_index() {
        let sched = NoiseSchedule::ddpm_default();
        let prior = GaussianPrior::isotropic(Volume3D::zeros(2, 2, 2).unwrap(), 1.0).unwrap();
        let patch = Volume3D::zeros(2, 2, 1).unwrap();
        let req = PatchScoreRequest {
            patch: &patch,
            indices: &[2],
            t: 5,
            spacing: 1,
            mode: PatchMode::Joint,
        };
        assert!(prior.patch_score(&req, &sched).is_err());
    }
}
