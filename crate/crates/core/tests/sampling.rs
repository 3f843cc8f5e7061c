mod common;

use common::{mean, rng, schedule, variance};
use deskdiff_core::{
    ddim_step, msla_predict_x0, predict_x0_one_step, run_sampler, GaussianMixture, SamplerKind, StatePoint,
};
use rand::Rng;

/// Cumulative products of 1 - beta for the default linear schedule.
fn alpha_bars() -> Vec<f64> {
    let mut a = vec![1.0];
    for u in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (u - 1) as f64 / 999.0;
        a.push(a[u - 1] * (1.0 - beta));
    }
    a
}

fn grid(from: usize, steps: usize) -> Vec<usize> {
    let mut g: Vec<usize> = (0..=steps).map(|j| ((from * (steps - j)) as f64 / steps as f64).round() as usize).collect();
    g.dedup();
    g
}

/// For data N(mu, I) every exact DDIM step scales the offset from the noised
/// mean by sqrt(a a') + sqrt((1 - a)(1 - a')).
fn unit_gaussian_contraction(from: usize, steps: usize) -> f64 {
    let a = alpha_bars();
    grid(from, steps)
        .windows(2)
        .map(|w| (a[w[0]] * a[w[1]]).sqrt() + ((1.0 - a[w[0]]) * (1.0 - a[w[1]])).sqrt())
        .product()
}

#[test]
fn ddim_moments_on_a_unit_gaussian() {
    let sched = schedule();
    let mu = [1.5, -0.5];
    let mix = GaussianMixture::uniform(vec![mu.to_vec()], 1.0).unwrap();
    let n = 1000;
    let xs: Vec<Vec<f64>> =
        (0..n).map(|i| run_sampler(SamplerKind::Ddim, 50, &sched, &mix, None, 10_000 + i).unwrap()).collect();
    let c = unit_gaussian_contraction(1000, 50);
    let start = alpha_bars()[1000].sqrt();
    for axis in 0..2 {
        let v: Vec<f64> = xs.iter().map(|x| x[axis]).collect();
        let (m, var) = (mean(&v), variance(&v));
        // x_T ~ N(0, I) sits sqrt(alpha_T) mu below the noised mean
        let oracle_mean = mu[axis] * (1.0 - c * start);
        let se = (var / n as f64).sqrt();
        assert!((m - oracle_mean).abs() < 3.0 * se, "axis {axis}: mean {m} vs {oracle_mean} (se {se})");
        assert!((var / (c * c) - 1.0).abs() < 0.1, "axis {axis}: variance {var} vs {}", c * c);
    }
}

#[test]
fn ddpm_point_mass_rollout_lands_on_the_point() {
    let sched = schedule();
    let mu = vec![0.7, -1.2];
    let mix = GaussianMixture::uniform(vec![mu.clone()], 0.0).unwrap();
    let xs: Vec<Vec<f64>> =
        (0..1000).map(|i| run_sampler(SamplerKind::Ddpm, 1000, &sched, &mix, None, i).unwrap()).collect();
    for axis in 0..2 {
        let v: Vec<f64> = xs.iter().map(|x| x[axis]).collect();
        let se = (variance(&v) / v.len() as f64).sqrt();
        assert!((mean(&v) - mu[axis]).abs() <= 3.0 * se + 1e-12, "axis {axis}");
    }
}

/// Mean offset factor and variance of the 50-step ancestral sampler on data
/// N(mu, I): y' = (sqrt(a a') + sqrt((1 - a' - s2)(1 - a))) y + sqrt(s2) z.
fn unit_gaussian_ancestral(from: usize, steps: usize) -> (f64, f64) {
    let a = alpha_bars();
    let (mut c, mut var) = (1.0, 1.0);
    for w in grid(from, steps).windows(2) {
        let (at, an) = (a[w[0]], a[w[1]]);
        let s2 = (1.0 - an) / (1.0 - at) * (1.0 - at / an);
        let step = (at * an).sqrt() + ((1.0 - an - s2).max(0.0) * (1.0 - at)).sqrt();
        c *= step;
        var = step * step * var + s2;
    }
    (c, var)
}

#[test]
fn ddpm_moments_on_a_unit_gaussian() {
    let sched = schedule();
    let mu = [0.0, 2.0];
    let mix = GaussianMixture::uniform(vec![mu.to_vec()], 1.0).unwrap();
    let n = 1000;
    let xs: Vec<Vec<f64>> =
        (0..n).map(|i| run_sampler(SamplerKind::Ddpm, 50, &sched, &mix, None, 50_000 + i).unwrap()).collect();
    let (c, oracle_var) = unit_gaussian_ancestral(1000, 50);
    let start = alpha_bars()[1000].sqrt();
    for axis in 0..2 {
        let v: Vec<f64> = xs.iter().map(|x| x[axis]).collect();
        let (m, var) = (mean(&v), variance(&v));
        let oracle_mean = mu[axis] * (1.0 - c * start);
        let se = (var / n as f64).sqrt();
        assert!((m - oracle_mean).abs() < 3.0 * se, "axis {axis}: mean {m} vs {oracle_mean}");
        assert!((var / oracle_var - 1.0).abs() < 0.1, "axis {axis}: variance {var} vs {oracle_var}");
    }
}

#[test]
fn point_mass_prediction_is_the_point_along_a_trajectory() {
    let sched = schedule();
    let mu = vec![2.0, -1.0, 0.5];
    let mix = GaussianMixture::uniform(vec![mu.clone()], 0.0).unwrap();
    let mut r = rng(3);
    let mut x = StatePoint::new((0..3).map(|_| common::normal(&mut r)).collect(), 1000);
    for &t_next in &grid(1000, 50)[1..] {
        let eps = mix.epsilon(&x.coords, x.t, &sched).unwrap();
        let pred = predict_x0_one_step(&x, &eps, &sched).unwrap();
        for (p, m) in pred.iter().zip(&mu) {
            assert!((p - m).abs() < 1e-12, "t={} {pred:?}", x.t);
        }
        x = ddim_step(&x, &eps, t_next, &sched).unwrap();
    }
    assert_eq!(x.t, 0);
}

#[test]
fn ddim_sampling_is_bit_reproducible() {
    let sched = schedule();
    let mut r = rng(5);
    let mix = common::random_mixture(&mut r, 3);
    for seed in 0..10 {
        let a = run_sampler(SamplerKind::Ddim, 50, &sched, &mix, None, seed).unwrap();
        let b = run_sampler(SamplerKind::Ddim, 50, &sched, &mix, None, seed).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn look_ahead_sharpens_with_more_steps() {
    let sched = schedule();
    let mu = vec![0.5, 1.0];
    let mix = GaussianMixture::uniform(vec![mu], 1.0).unwrap();
    let mut r = rng(11);
    let mut dist = [0.0f64; 3];
    let draws = 200;
    for _ in 0..draws {
        let t = r.random_range(20..=1000);
        let x = StatePoint::new((0..2).map(|_| common::normal(&mut r)).collect(), t);
        // reference: a 50-step DDIM rollout from the same state
        let mut cur = x.clone();
        for &tn in &grid(t, 50)[1..] {
            let eps = mix.epsilon(&cur.coords, cur.t, &sched).unwrap();
            cur = ddim_step(&cur, &eps, tn, &sched).unwrap();
        }
        for (slot, n) in [1, 3, 5].iter().enumerate() {
            let p = msla_predict_x0(&x, *n, &sched, &mix).unwrap();
            dist[slot] += p.iter().zip(&cur.coords).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / draws as f64;
        }
    }
    assert!(dist[0] >= dist[1] && dist[1] >= dist[2], "{dist:?}");
}
