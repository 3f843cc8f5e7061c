//! One-step clean prediction, DDIM and DDPM reverse steps, and the sampling
//! loop over an evenly spaced timestep grid.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, param, Error, Result};
use crate::mixture::GaussianMixture;
use crate::rng::{derive_seed, standard_normal_vec, stream};
use crate::schedule::{timestep_grid, NoiseSchedule};
use crate::vecops::all_finite;

/// A state vector paired with its timestep. Clean points and noise vectors
/// share the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePoint {
    pub coords: Vec<f64>,
    pub t: usize,
}

impl StatePoint {
    pub fn new(coords: Vec<f64>, t: usize) -> Self {
        Self { coords, t }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

/// Rewrites the raw noise prediction before each reverse step.
pub trait EpsilonHook {
    /// `x` is the current state, `t_next` the step's target timestep.
    fn adjust(&mut self, x: &StatePoint, t_next: usize, eps: Vec<f64>) -> Result<Vec<f64>>;
}

/// Clean-sample estimate `(x - sqrt(1 - a_t) eps) / sqrt(a_t)`.
pub fn predict_x0_one_step(x: &StatePoint, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_dim(x.dim(), eps.len())?;
    schedule.check_t(x.t)?;
    if x.t == 0 {
        return Err(param("clean prediction needs t >= 1"));
    }
    let a = schedule.alpha_bar(x.t);
    let (sa, sn) = (libm::sqrt(a), libm::sqrt(1.0 - a));
    Ok(x.coords.iter().zip(eps).map(|(xi, ei)| (xi - sn * ei) / sa).collect())
}

fn check_transition(x: &StatePoint, t_next: usize, schedule: &NoiseSchedule) -> Result<()> {
    schedule.check_t(x.t)?;
    if x.t == 0 || t_next >= x.t {
        return Err(Error::Ordering { from: x.t, to: t_next });
    }
    Ok(())
}

/// Deterministic DDIM update `sqrt(a_next) x0_hat + sqrt(1 - a_next) eps`.
pub fn ddim_step(x: &StatePoint, eps: &[f64], t_next: usize, schedule: &NoiseSchedule) -> Result<StatePoint> {
    check_transition(x, t_next, schedule)?;
    let x0 = predict_x0_one_step(x, eps, schedule)?;
    let an = schedule.alpha_bar(t_next);
    let (san, snn) = (libm::sqrt(an), libm::sqrt(1.0 - an));
    let coords = x0.iter().zip(eps).map(|(x0i, ei)| san * x0i + snn * ei).collect();
    Ok(StatePoint::new(coords, t_next))
}

/// Posterior variance of the ancestral step `t -> t_next`.
pub fn ddpm_variance(t: usize, t_next: usize, schedule: &NoiseSchedule) -> f64 {
    let (a, an) = (schedule.alpha_bar(t), schedule.alpha_bar(t_next));
    ((1.0 - an) / (1.0 - a) * (1.0 - a / an)).max(0.0)
}

/// Ancestral DDPM update from `x.t` to `t_next`, with Gaussian noise drawn
/// from `rng_seed` and scaled by the posterior standard deviation.
///
/// For `t_next = t - 1` this is the classic posterior
/// `q(x_{t-1} | x_t, x0_hat)`; on a subsampled grid the same posterior is
/// taken between the two grid points. The noise vanishes when `t_next = 0`.
pub fn ddpm_step(
    x: &StatePoint,
    eps: &[f64],
    t_next: usize,
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<StatePoint> {
    check_transition(x, t_next, schedule)?;
    let x0 = predict_x0_one_step(x, eps, schedule)?;
    let an = schedule.alpha_bar(t_next);
    let var = ddpm_variance(x.t, t_next, schedule);
    let san = libm::sqrt(an);
    let dir = libm::sqrt((1.0 - an - var).max(0.0));
    let mut coords: Vec<f64> = x0.iter().zip(eps).map(|(x0i, ei)| san * x0i + dir * ei).collect();
    if var > 0.0 {
        let sd = libm::sqrt(var);
        let z = standard_normal_vec(rng_seed, coords.len());
        for (c, zi) in coords.iter_mut().zip(z) {
            *c += sd * zi;
        }
    }
    Ok(StatePoint::new(coords, t_next))
}

/// Generates one sample: `x_T ~ N(0, I)` from `rng_seed`, then `steps`
/// reverse steps along the evenly spaced grid from `T` to 0. Each raw noise
/// prediction passes through `hook` when one is given.
pub fn run_sampler(
    kind: SamplerKind,
    steps: usize,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    mut hook: Option<&mut dyn EpsilonHook>,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    let total = schedule.total_steps();
    if steps == 0 || steps > total {
        return Err(param(alloc::format!("inference steps must lie in [1, {total}], got {steps}")));
    }
    let grid = timestep_grid(total, steps);
    let init = standard_normal_vec(derive_seed(rng_seed, stream::INITIAL_NOISE, 0), mixture.dim());
    let mut x = StatePoint::new(init, total);
    for (i, &t_next) in grid[1..].iter().enumerate() {
        let mut eps = mixture.epsilon(&x.coords, x.t, schedule)?;
        if let Some(h) = hook.as_deref_mut() {
            eps = h.adjust(&x, t_next, eps)?;
        }
        x = match kind {
            SamplerKind::Ddim => ddim_step(&x, &eps, t_next, schedule)?,
            SamplerKind::Ddpm => {
                ddpm_step(&x, &eps, t_next, schedule, derive_seed(rng_seed, stream::DDPM_NOISE, i as u64))?
            }
        };
        if !all_finite(&x.coords) {
            return Err(Error::Domain(alloc::format!("sampler diverged at t = {t_next}")));
        }
    }
    Ok(x.coords)
}
