//! `oracle-check`: analytic self-tests with known answers.
//!
//! With `fault` set (`DIFFBLEND_FAULT=adjoint` in the environment) the
//! backprojector inside the adjoint suite is perturbed so the failure path
//! can be exercised.

use std::io::Write;
use std::time::Instant;

use diffblend::diffusion::gaussian_volume;
use diffblend::krylov::{cg, DenseOperator, LinearOperator};
use diffblend::partition::{adjacency_partition, blended_score, partition_family};
use diffblend::training::{check_product_bound, check_separable_reduction, DsmSample};
use diffblend::{ct, GaussianPrior, NoiseSchedule, Projector, ScanMode, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

type Suite<'a> = &'a dyn Fn() -> Result<String, String>;

pub fn run_all(out: &mut dyn Write, fault: bool) -> Result<(), CliError> {
    let adjoint_suite = || adjoint(fault);
    let suites: [(&str, Suite); 5] = [
        ("oracle-exactness", &oracle_exactness),
        ("adjoint", &adjoint_suite),
        ("cg-termination", &cg_termination),
        ("product-bound", &product_bound),
        ("separable-reduction", &separable_reduction),
    ];
    writeln!(out, "{:<22} {:<6} detail", "suite", "result")?;
    let mut failed = Vec::new();
    for (name, suite) in suites {
        let t0 = Instant::now();
        let (tag, detail) = match suite() {
            Ok(d) => ("pass", d),
            Err(d) => {
                failed.push(name);
                ("FAIL", d)
            }
        };
        writeln!(out, "{name:<22} {tag:<6} {detail} ({:.2}s)", t0.elapsed().as_secs_f64())?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failing suites: {}", failed.join(", "))))
    }
}

fn wrap<T>(r: diffblend::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Blended adjacency-partition score against the full-volume score of a
/// prior whose slice correlation is block diagonal along that partition.
fn oracle_exactness() -> Result<String, String> {
    let (w, h, d) = (16, 16, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sched = NoiseSchedule::ddpm_default();
    let mean = wrap(gaussian_volume(w, h, d, 0.3, &mut rng))?;
    let var = (0..w * h).map(|_| rng.random_range(0.05..0.5)).collect();
    let prior = wrap(GaussianPrior::new(mean, var, GaussianPrior::block_correlation(d, 3, 0.6)))?;
    let part = wrap(adjacency_partition(d, 3, 0))?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.random_range(1..=1000);
        let x = wrap(gaussian_volume(w, h, d, 1.0, &mut rng))?;
        let got = wrap(blended_score(&prior, &x, t, &part, &sched))?;
        let want = wrap(prior.volume_score(&x, t, &sched))?;
        let diff: f64 = got.data().iter().zip(want.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(diff.sqrt() / want.norm().max(f64::MIN_POSITIVE));
    }
    if worst <= 1e-6 {
        Ok(format!("20 probes, worst relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} > 1e-6"))
    }
}

fn adjoint(fault: bool) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (w, h) = (64, 64);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let views = rng.random_range(8..=180);
        let g = wrap(ct::make_geometry(ScanMode::Sparse, views, ct::default_n_det(w, h)))?;
        let p = wrap(Projector::new(&g, w, h))?;
        let x: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..views * g.n_det()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; y.len()];
        let mut aty = vec![0.0; x.len()];
        p.project_slice(&x, &mut ax);
        p.backproject_slice(&y, &mut aty);
        if fault {
            aty.iter_mut().for_each(|v| *v *= 1.001);
        }
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    if worst <= 1e-5 {
        Ok(format!("50 pairs at 64x64, worst relative gap {worst:.2e}"))
    } else {
        Err(format!("<Ax, y> and <x, A*y> differ by {worst:.2e} (> 1e-5)"))
    }
}

/// Dense `Q Λ Qᵀ` with `Q` a product of Householder reflections and the
/// eigenvalues `lambda`.
fn rotated_spd(lambda: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = lambda.len();
    let mut q: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    for _ in 0..4 {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        // q ← q (I - 2 v vᵀ / vᵀv)
        for row in q.chunks_exact_mut(n) {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (r, vi) in row.iter_mut().zip(&v) {
                *r -= 2.0 * dot * vi / vv;
            }
        }
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = (0..n).map(|k| q[i * n + k] * lambda[k] * q[j * n + k]).sum();
        }
    }
    m
}

fn cg_termination() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for n in [1, 2, 5, 16, 33, 64] {
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let op = wrap(DenseOperator::new(n, rotated_spd(&lambda, &mut rng)))?;
        let mut rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        rhs.iter_mut().for_each(|v| *v /= norm);
        let out = wrap(cg(&op, &rhs, &vec![0.0; n], n))?;
        let mut mx = vec![0.0; n];
        op.apply(&out.x, &mut mx);
        let r: f64 = mx.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(r);
    }
    if worst <= 1e-8 {
        Ok(format!("n up to 64, worst residual {worst:.2e}"))
    } else {
        Err(format!("residual after n steps {worst:.2e} > 1e-8"))
    }
}

fn random_vecs(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn product_bound() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_equal: f64 = 0.0;
    for i in 0..1000 {
        let (count, len) = (rng.random_range(1..6), rng.random_range(1..20));
        let a = rng.random_range(0.1..3.0);
        let b = rng.random_range(0.1..3.0);
        let q = random_vecs(&mut rng, count, len);
        let r = random_vecs(&mut rng, count, len);
        let y = random_vecs(&mut rng, count, len);
        let rep = wrap(check_product_bound(&q, &r, &y, a, b))?;
        if !rep.holds {
            return Err(format!("instance {i}: joint {} above bound {}", rep.joint, rep.bound));
        }
        // X = Y when a q = b r and a = b
        let rep = wrap(check_product_bound(&q, &q, &y, a, a))?;
        worst_equal = worst_equal.max(rep.gap.abs() / rep.bound.max(f64::MIN_POSITIVE));
    }
    if worst_equal <= 1e-10 {
        Ok(format!("1000 instances, equality gap {worst_equal:.2e}"))
    } else {
        Err(format!("X = Y gap {worst_equal:.2e} > 1e-10"))
    }
}

fn separable_reduction() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(k..=12);
        let (w, h) = (4, 3);
        let family = wrap(partition_family(d, k))?;
        let part = &family[rng.random_range(0..family.len())];
        let sets: Vec<_> = part.patches().iter().map(|p| p.set().clone()).collect();
        let mean = wrap(gaussian_volume(w, h, d, 0.5, &mut rng))?;
        let prior = wrap(GaussianPrior::isotropic(mean, 0.2))?;
        let mut samples = Vec::new();
        for _ in 0..3 {
            let clean = wrap(gaussian_volume(w, h, d, 1.0, &mut rng))?;
            let sigma = rng.random_range(0.05..1.0);
            let eps = wrap(gaussian_volume(w, h, d, sigma, &mut rng))?;
            let noisy = wrap(Volume3D::from_vec(
                w,
                h,
                d,
                clean.data().iter().zip(eps.data()).map(|(a, b)| a + b).collect(),
            ))?;
            let patch_scores = sets
                .iter()
                .map(|s| gaussian_volume(w, h, s.len(), 1.0 / sigma, &mut rng))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            samples.push(DsmSample { clean, noisy, sigma, patch_scores });
        }
        let rep = wrap(check_separable_reduction(&prior, &sets, &samples))?;
        worst = worst.max(rep.rel_error);
    }
    if worst <= 1e-6 {
        Ok(format!("100 instances, worst relative error {worst:.2e}"))
    } else {
        Err(format!("full and per-patch losses differ by {worst:.2e} (> 1e-6)"))
    }
}
