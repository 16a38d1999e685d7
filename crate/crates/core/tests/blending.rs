use diffblend::diffusion::gaussian_volume;
use diffblend::partition::{blended_score, conditional_blended_score, cross_partition, partition_family};
use diffblend::{
    DenoiserArch, DenoiserParams, GaussianPrior, NetworkKind, NoiseSchedule, Partition, PatchMode,
    PatchScoreRequest, ScoreBackend, Volume3D,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise(w: usize, h: usize, d: usize, scale: f64, seed: u64) -> Volume3D {
    gaussian_volume(w, h, d, scale, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Score of the marginal over the distinct slices of `slots`, by a dense
/// solve per pixel, written back slot by slot.
fn dense_patch_score(
    x: &Volume3D,
    mean: &Volume3D,
    var: &[f64],
    corr: &DMatrix<f64>,
    ab: f64,
    slots: &[usize],
) -> Vec<Vec<f64>> {
    let mut distinct = slots.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let n = distinct.len();
    let mut out = vec![vec![0.0; x.slice_len()]; slots.len()];
    for q in 0..x.slice_len() {
        let cov = DMatrix::from_fn(n, n, |i, j| {
            ab * var[q] * corr[(distinct[i], distinct[j])] + if i == j { 1.0 - ab } else { 0.0 }
        });
        let r = DVector::from_fn(n, |i, _| x.slice(distinct[i])[q] - ab.sqrt() * mean.slice(distinct[i])[q]);
        let s = cov.lu().solve(&r).unwrap();
        for (slot, z) in slots.iter().enumerate() {
            out[slot][q] = -s[distinct.iter().position(|d| d == z).unwrap()];
        }
    }
    out
}

/// Scatter with duplicate slots averaged, straight from the definition.
fn scatter_average(depth: usize, len: usize, parts: &[(Vec<usize>, Vec<Vec<f64>>)]) -> Vec<f64> {
    let mut sum = vec![0.0; depth * len];
    let mut count = vec![0usize; depth];
    for (slots, scores) in parts {
        for (slot, &z) in slots.iter().enumerate() {
            count[z] += 1;
            for q in 0..len {
                sum[z * len + q] += scores[slot][q];
            }
        }
    }
    for z in 0..depth {
        for q in 0..len {
            sum[z * len + q] /= count[z] as f64;
        }
    }
    sum
}

fn family_mean<B: ScoreBackend>(b: &B, x: &Volume3D, t: usize, fam: &[Partition], s: &NoiseSchedule) -> Vec<f64> {
    let mut mean = vec![0.0; x.len()];
    for p in fam {
        let v = blended_score(b, x, t, p, s).unwrap();
        for (m, v) in mean.iter_mut().zip(v.data()) {
            *m += v / fam.len() as f64;
        }
    }
    mean
}

#[test]
fn family_average_equals_brute_force_mean_for_the_oracle() {
    let sched = NoiseSchedule::ddpm_default();
    let (w, h, d) = (5, 4, 9);
    let mean = noise(w, h, d, 0.3, 1);
    let var: Vec<f64> = (0..w * h).map(|i| 0.1 + 0.02 * i as f64).collect();
    // Toeplitz correlation, not conformal with any partition
    let corr = DMatrix::from_fn(d, d, |i, j| 0.7f64.powi((i as i32 - j as i32).abs()));
    let prior = GaussianPrior::new(mean.clone(), var.clone(), corr.clone()).unwrap();
    let fam = partition_family(d, 3).unwrap();
    assert_eq!(fam.len(), 4);
    for (seed, t) in [(2, 30), (3, 400), (4, 950)] {
        let x = noise(w, h, d, 1.0, seed);
        let ab = sched.alpha_bar(t).unwrap();
        let mut brute = vec![0.0; x.len()];
        for p in &fam {
            let parts: Vec<_> = p
                .patches()
                .iter()
                .map(|patch| {
                    let slots = patch.slots();
                    let s = dense_patch_score(&x, &mean, &var, &corr, ab, &slots);
                    (slots, s)
                })
                .collect();
            for (b, v) in brute.iter_mut().zip(scatter_average(d, w * h, &parts)) {
                *b += v / fam.len() as f64;
            }
        }
        let got = family_mean(&prior, &x, t, &fam, &sched);
        assert!(rel(&got, &brute) <= 1e-10, "t = {t}: {}", rel(&got, &brute));
    }
}

#[test]
fn family_average_equals_brute_force_mean_for_a_network() {
    let sched = NoiseSchedule::ddpm_default();
    let (w, h, d) = (6, 6, 18);
    let params = DenoiserParams::init(DenoiserArch::new(NetworkKind::Joint { k: 3 }, 4, 8).unwrap(), 5);
    let x = noise(w, h, d, 1.0, 6);
    let t = 250;
    let fam = partition_family(d, 3).unwrap();
    let mut brute = vec![0.0; x.len()];
    for p in &fam {
        let parts: Vec<_> = p
            .patches()
            .iter()
            .map(|patch| {
                let slots = patch.slots();
                let mut input = Volume3D::zeros(w, h, slots.len()).unwrap();
                for (i, &z) in slots.iter().enumerate() {
                    input.slice_mut(i).copy_from_slice(x.slice(z));
                }
                let req = PatchScoreRequest {
                    patch: &input,
                    indices: &slots,
                    t,
                    spacing: patch.spacing(),
                    mode: PatchMode::Joint,
                };
                let s = params.patch_score(&req, &sched).unwrap();
                (slots.clone(), (0..slots.len()).map(|i| s.slice(i).to_vec()).collect())
            })
            .collect();
        for (b, v) in brute.iter_mut().zip(scatter_average(d, w * h, &parts)) {
            *b += v / fam.len() as f64;
        }
    }
    let got = family_mean(&params, &x, t, &fam, &sched);
    assert!(rel(&got, &brute) <= 1e-12);
}

#[test]
fn single_patch_is_passed_through() {
    let sched = NoiseSchedule::ddpm_default();
    let prior = GaussianPrior::new(noise(4, 4, 3, 0.3, 1), vec![0.2; 16], GaussianPrior::block_correlation(3, 3, 0.5))
        .unwrap();
    let x = noise(4, 4, 3, 1.0, 2);
    let fam = partition_family(3, 3).unwrap();
    let req = PatchScoreRequest { patch: &x, indices: &[0, 1, 2], t: 321, spacing: 1, mode: PatchMode::Joint };
    let direct = prior.patch_score(&req, &sched).unwrap();
    let adjacency = fam.iter().find(|p| !p.kind().is_cross()).unwrap();
    assert_eq!(blended_score(&prior, &x, 321, adjacency, &sched).unwrap(), direct);
}

#[test]
fn cross_partition_with_k_one_is_singletons() {
    let p = cross_partition(5, 1, 0).unwrap();
    let sets: Vec<Vec<usize>> = p.patches().iter().map(|q| q.set().indices().to_vec()).collect();
    assert_eq!(sets, vec![vec![0], vec![1], vec![2], vec![3], vec![4]]);
}

#[test]
fn conditional_score_on_a_separable_prior_is_the_marginal() {
    let sched = NoiseSchedule::ddpm_default();
    let prior = GaussianPrior::isotropic(noise(6, 5, 7, 0.3, 1), 0.15).unwrap();
    let x = noise(6, 5, 7, 1.0, 2);
    for j in [1, 2] {
        let got = conditional_blended_score(&prior, &x, 600, j, &sched).unwrap();
        let want = prior.volume_score(&x, 600, &sched).unwrap();
        assert!(rel(got.data(), want.data()) <= 1e-6);
    }
}

#[test]
fn conditional_score_of_a_single_slice() {
    let sched = NoiseSchedule::ddpm_default();
    let prior = GaussianPrior::new(noise(4, 4, 1, 0.3, 1), vec![0.3; 16], DMatrix::identity(1, 1)).unwrap();
    let x = noise(4, 4, 1, 1.0, 2);
    let got = conditional_blended_score(&prior, &x, 100, 1, &sched).unwrap();
    let want = prior.volume_score(&x, 100, &sched).unwrap();
    assert!(rel(got.data(), want.data()) <= 1e-12);
}

#[test]
fn conditional_score_matches_the_bivariate_closed_form() {
    let sched = NoiseSchedule::ddpm_default();
    let (v, rho) = (0.25, 0.6);
    let mean = noise(3, 3, 2, 0.4, 1);
    let corr = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let prior = GaussianPrior::new(mean.clone(), vec![v; 9], corr).unwrap();
    let x = noise(3, 3, 2, 1.0, 2);
    for t in [5, 200, 700] {
        let ab = sched.alpha_bar(t).unwrap();
        // noisy pair covariance [[a, b], [b, a]]
        let (a, b) = (ab * v + 1.0 - ab, ab * v * rho);
        let got = conditional_blended_score(&prior, &x, t, 1, &sched).unwrap();
        for q in 0..9 {
            let r0 = x.slice(0)[q] - ab.sqrt() * mean.slice(0)[q];
            let r1 = x.slice(1)[q] - ab.sqrt() * mean.slice(1)[q];
            let s0 = -(a * r0 - b * r1) / (a * a - b * b);
            let s1 = -(a * r1 - b * r0) / (a * a - b * b);
            assert!((got.slice(0)[q] - s0).abs() <= 1e-10 * (1.0 + s0.abs()));
            assert!((got.slice(1)[q] - s1).abs() <= 1e-10 * (1.0 + s1.abs()));
        }
    }
}
