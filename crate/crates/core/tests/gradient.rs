use diffblend::diffusion::gaussian_volume;
use diffblend::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worst per-coordinate relative error between the analytic gradient and
/// central differences of the same loss.
fn worst_relative_error(kind: NetworkKind, skip: bool, t: usize) -> f64 {
    let sched = NoiseSchedule::ddpm_default();
    let arch = DenoiserArch::new(kind, 6, 8).unwrap().with_skip(skip);
    let mut params = DenoiserParams::init(arch, 3);
    // a larger output layer keeps every gradient entry well away from zero
    let n = params.weights().len();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for w in params.weights_mut().iter_mut().skip(n - 200) {
        *w += 0.05 * rand::Rng::random_range(&mut rng, -1.0..1.0);
    }
    let input = gaussian_volume(8, 8, arch.in_channels(), 1.0, &mut rng).unwrap();
    let noise = gaussian_volume(8, 8, arch.out_channels(), 1.0, &mut rng).unwrap();
    let weight = 1.0 / sched.sigma(t).unwrap().powi(2);
    let (_, grad) = params.noise_loss_grad(&input, t, 2, &noise, &sched, weight).unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let orig = params.weights()[i];
        params.weights_mut()[i] = orig + h;
        let (up, _) = params.noise_loss_grad(&input, t, 2, &noise, &sched, weight).unwrap();
        params.weights_mut()[i] = orig - h;
        let (down, _) = params.noise_loss_grad(&input, t, 2, &noise, &sched, weight).unwrap();
        params.weights_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn joint_gradient_matches_finite_differences() {
    let err = worst_relative_error(NetworkKind::Joint { k: 3 }, true, 300);
    assert!(err <= 1e-3, "worst relative error {err}");
}

#[test]
fn conditional_gradient_matches_finite_differences() {
    let err = worst_relative_error(NetworkKind::Conditional { j: 1 }, true, 40);
    assert!(err <= 1e-3, "worst relative error {err}");
}

#[test]
fn gradient_without_skip() {
    let err = worst_relative_error(NetworkKind::Joint { k: 1 }, false, 700);
    assert!(err <= 1e-3, "worst relative error {err}");
}
