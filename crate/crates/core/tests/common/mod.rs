#![allow(dead_code)]

use deskdiff_core::{make_linear_schedule, GaussianMixture, NoiseSchedule};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn schedule() -> NoiseSchedule {
    make_linear_schedule(1000, 1e-4, 0.02).unwrap()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * normal(rng)).collect()
}

/// Box-Muller, kept local so the oracle shares no sampling code with the crate.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_mixture(rng: &mut ChaCha8Rng, d: usize) -> GaussianMixture {
    let k = rng.random_range(1..=4);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let s: f64 = w.iter().sum();
    w[0] += 1.0 - s;
    let means = (0..k).map(|_| gaussian_vec(rng, d, 1.5)).collect();
    let stds = (0..k).map(|_| rng.random_range(0.0..0.8)).collect();
    GaussianMixture::new(w, means, stds).unwrap()
}

/// log q_t(x) summed directly from component densities.
pub fn log_q(mix: &GaussianMixture, sched: &NoiseSchedule, x: &[f64], t: usize) -> f64 {
    let a = sched.alpha_bar(t);
    let d = x.len() as f64;
    let terms: Vec<f64> = mix
        .weights()
        .iter()
        .zip(mix.means())
        .zip(mix.stds())
        .map(|((w, m), s)| {
            let var = a * s * s + (1.0 - a);
            let sq: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - a.sqrt() * mi).powi(2)).sum();
            w.ln() - 0.5 * d * (std::f64::consts::TAU * var).ln() - sq / (2.0 * var)
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Noise prediction from a central-difference score of [`log_q`].
pub fn fd_epsilon(mix: &GaussianMixture, sched: &NoiseSchedule, x: &[f64], t: usize) -> Vec<f64> {
    let scale = -(1.0 - sched.alpha_bar(t)).sqrt();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + x[i].abs());
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            scale * (log_q(mix, sched, &p, t) - log_q(mix, sched, &m, t)) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error between two gradients. The denominator is floored at
/// 1e-6: below that central differences at h ~ 1e-5 carry rounding noise of
/// the same order as the quantity itself.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-6)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}
