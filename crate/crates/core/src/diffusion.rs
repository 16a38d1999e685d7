//! Discrete variance-preserving diffusion: schedule, forward noising,
//! Tweedie denoising and the DDIM reverse update.
//!
//! Timesteps run `1..=T`; `ᾱ_0 = 1` is implied so a step to `t_prev = 0`
//! lands on the clean estimate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// Linear β ramp from `beta_min` to `beta_max` over `steps` timesteps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid("schedule needs at least two steps"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
        .collect();
    NoiseSchedule::from_betas(beta)
}

impl NoiseSchedule {
    /// Standard DDPM schedule: 1000 steps, β from 1e-4 to 0.02.
    pub fn ddpm_default() -> Self {
        make_schedule(1000, 1e-4, 0.02).expect("default schedule is valid")
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::invalid("schedule needs at least two steps"));
        }
        if beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("betas must be non-decreasing"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = cumulative_alpha_bar(&beta);
        if *alpha_bar.last().unwrap() >= 0.01 {
            return Err(Error::invalid(
                "schedule does not reach the noise limit (final alpha_bar >= 0.01)",
            ));
        }
        let sigma = alpha_bar.iter().map(|ab| (1.0 - ab).sqrt()).collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        })
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(format!(
                "timestep {t} outside [1, {}]",
                self.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check(t)?])
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `σ_t = sqrt(1 - ᾱ_t)`, with `σ_0 = 0`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(0.0);
        }
        Ok(self.sigma[self.check(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// Running products `ᾱ_t = Π_{s<=t} (1 - β_s)`.
pub fn cumulative_alpha_bar(beta: &[f64]) -> Vec<f64> {
    beta.iter()
        .scan(1.0, |acc, b| {
            *acc *= 1.0 - b;
            Some(*acc)
        })
        .collect()
}

/// Ordered sampling timesteps and DDIM stochasticity.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepPlan {
    steps: Vec<usize>,
    eta: f64,
}

impl TimestepPlan {
    /// `nfe` timesteps strided uniformly from `T` down to 1.
    pub fn uniform(sched: &NoiseSchedule, nfe: usize, eta: f64) -> Result<Self> {
        let t_max = sched.len();
        if nfe == 0 || nfe > t_max {
            return Err(Error::invalid(format!("NFE count {nfe} outside [1, {t_max}]")));
        }
        let steps = if nfe == 1 {
            vec![1]
        } else {
            (0..nfe)
                .map(|i| 1 + (nfe - 1 - i) * (t_max - 1) / (nfe - 1))
                .collect()
        };
        Self::new(steps, eta)
    }

    pub fn new(steps: Vec<usize>, eta: f64) -> Result<Self> {
        if steps.is_empty() || *steps.last().unwrap() != 1 {
            return Err(Error::invalid("timestep plan must end at t = 1"));
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("timestep plan must be strictly decreasing"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
        }
        Ok(Self { steps, eta })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn nfe(&self) -> usize {
        self.steps.len()
    }

    /// `(t, t_prev)` pairs in sampling order; the final pair targets 0.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}

/// `x_t = sqrt(ᾱ_t) x0 + σ_t ε`.
pub fn add_noise(x0: &Volume3D, t: usize, eps: &Volume3D, sched: &NoiseSchedule) -> Result<Volume3D> {
    if !x0.same_shape(eps) {
        return Err(Error::invalid("noise shape differs from x0"));
    }
    let a = sched.alpha_bar(t)?.sqrt();
    let s = sched.sigma(t)?;
    if t == 0 {
        return Err(Error::invalid("timestep 0 is not a noise level"));
    }
    let mut out = x0.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps.data()) {
        *o = a * *o + s * e;
    }
    Ok(out)
}

/// Posterior mean `E[x0 | x_t] = (x_t + (1 - ᾱ_t) score) / sqrt(ᾱ_t)`.
pub fn tweedie(x_t: &Volume3D, score: &Volume3D, t: usize, sched: &NoiseSchedule) -> Result<Volume3D> {
    if !x_t.same_shape(score) {
        return Err(Error::invalid("score shape differs from x_t"));
    }
    let ab = sched.alpha_bar(t)?;
    if ab <= 0.0 {
        return Err(Error::numeric("alpha_bar is zero; Tweedie estimate undefined"));
    }
    let inv = 1.0 / ab.sqrt();
    let var = 1.0 - ab;
    let mut out = x_t.clone();
    for (o, s) in out.data_mut().iter_mut().zip(score.data()) {
        *o = (*o + var * s) * inv;
    }
    Ok(out)
}

/// Noise direction implied by a clean estimate: `(x_t - sqrt(ᾱ_t) x0) / σ_t`.
pub fn implied_noise(x_t: &Volume3D, x0_hat: &Volume3D, t: usize, sched: &NoiseSchedule) -> Result<Volume3D> {
    if !x_t.same_shape(x0_hat) {
        return Err(Error::invalid("x0 estimate shape differs from x_t"));
    }
    let a = sched.alpha_bar(t)?.sqrt();
    let s = sched.sigma(t)?;
    if t == 0 || s == 0.0 {
        return Err(Error::numeric("sigma_t is zero; implied noise undefined"));
    }
    let mut out = x_t.clone();
    for (o, x0) in out.data_mut().iter_mut().zip(x0_hat.data()) {
        *o = (*o - a * x0) / s;
    }
    Ok(out)
}

/// Standard deviation of the fresh noise injected by a DDIM step.
pub fn ddim_sigma(t: usize, t_prev: usize, eta: f64, sched: &NoiseSchedule) -> Result<f64> {
    let ab = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    Ok(eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt())
}

/// One DDIM update from `t` to `t_prev`, with the noise direction derived
/// from `x0_hat`.
pub fn ddim_step<R: Rng + ?Sized>(
    x_t: &Volume3D,
    x0_hat: &Volume3D,
    t: usize,
    t_prev: usize,
    eta: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Volume3D> {
    let eps = implied_noise(x_t, x0_hat, t, sched)?;
    ddim_step_with_noise(x0_hat, &eps, t, t_prev, eta, sched, rng)
}

/// DDIM update given an explicit noise direction `eps_hat`.
pub fn ddim_step_with_noise<R: Rng + ?Sized>(
    x0_hat: &Volume3D,
    eps_hat: &Volume3D,
    t: usize,
    t_prev: usize,
    eta: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Volume3D> {
    if t_prev >= t {
        return Err(Error::invalid(format!("t_prev {t_prev} must be below t {t}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
    }
    if !x0_hat.same_shape(eps_hat) {
        return Err(Error::invalid("noise direction shape differs from x0 estimate"));
    }
    sched.alpha_bar(t)?;
    if t_prev == 0 {
        return Ok(x0_hat.clone());
    }
    let ab_prev = sched.alpha_bar(t_prev)?;
    let sigma_tilde = ddim_sigma(t, t_prev, eta, sched)?;
    let dir_var = 1.0 - ab_prev - sigma_tilde * sigma_tilde;
    if dir_var < 0.0 {
        return Err(Error::numeric(format!(
            "negative DDIM direction variance {dir_var}"
        )));
    }
    let a = ab_prev.sqrt();
    let d = dir_var.sqrt();
    let mut out = x0_hat.clone();
    for (o, e) in out.data_mut().iter_mut().zip(eps_hat.data()) {
        let z: f64 = if sigma_tilde > 0.0 {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        *o = a * *o + d * e + sigma_tilde * z;
    }
    Ok(out)
}

/// Volume of i.i.d. `N(0, std²)` samples.
pub fn gaussian_volume<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    depth: usize,
    std: f64,
    rng: &mut R,
) -> Result<Volume3D> {
    let data = (0..width * height * depth)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Volume3D::from_vec(width, height, depth, data)
}
