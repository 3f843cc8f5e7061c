//! Forward-process noise schedules.

use alloc::vec::Vec;

use crate::error::{param, Result};

/// Cumulative signal levels `alpha_bar[0..=T]` of the forward process.
///
/// `alpha_bar[0] = 1` and the sequence strictly decreases; `alpha_bar[t]` is
/// the product of `1 - beta_u` for `u = 1..=t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    total_steps: usize,
    beta_start: f64,
    beta_end: f64,
    alpha_bar: Vec<f64>,
}

/// Linear-beta schedule with `total_steps` steps and betas spaced evenly in
/// `[beta_start, beta_end]`.
pub fn make_linear_schedule(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(param("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(param("beta bounds must satisfy 0 < beta_start <= beta_end < 1"));
    }
    let mut alpha_bar = Vec::with_capacity(total_steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for u in 1..=total_steps {
        acc *= 1.0 - linear_beta(u, total_steps, beta_start, beta_end);
        if !(acc > 0.0 && acc < alpha_bar[u - 1]) {
            return Err(param("beta range yields a non-decreasing or vanishing alpha_bar"));
        }
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { total_steps, beta_start, beta_end, alpha_bar })
}

fn linear_beta(u: usize, total: usize, start: f64, end: f64) -> f64 {
    if total == 1 {
        start
    } else {
        start + (end - start) * (u - 1) as f64 / (total - 1) as f64
    }
}

impl NoiseSchedule {
    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    /// Signal level at timestep `t`. Panics when `t > T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Per-step beta for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        linear_beta(t, self.total_steps, self.beta_start, self.beta_end)
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.total_steps {
            Err(param(alloc::format!("timestep {t} outside [0, {}]", self.total_steps)))
        } else {
            Ok(())
        }
    }
}

/// Evenly spaced integer timesteps from `from` down to 0, both endpoints
/// included, using `steps` transitions.
///
/// Grid points are rounded to the nearest integer; duplicates produced by
/// rounding (when `steps > from`) are dropped, so consecutive entries always
/// strictly decrease.
pub fn timestep_grid(from: usize, steps: usize) -> Vec<usize> {
    if steps == 0 || from == 0 {
        return alloc::vec![from];
    }
    let mut grid: Vec<usize> = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let num = from as u128 * (steps - j) as u128;
        let t = ((2 * num + steps as u128) / (2 * steps as u128)) as usize;
        if grid.last() != Some(&t) {
            grid.push(t);
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_is_single_factor() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
    }

    #[test]
    fn one_step_schedule() {
        let s = make_linear_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.5]);
    }

    #[test]
    fn final_alpha_matches_bruteforce_product() {
        // Oracle: independent product over explicitly listed betas.
        let t = 1000usize;
        let betas: std::vec::Vec<f64> =
            (0..t).map(|i| 1e-4 + (0.02 - 1e-4) * (i as f64) / 999.0).collect();
        let oracle: f64 = betas.iter().map(|b| 1.0 - b).product();
        let s = make_linear_schedule(t, 1e-4, 0.02).unwrap();
        assert!((s.alpha_bar(t) - oracle).abs() < 1e-12);
        assert!((s.beta(t) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(make_linear_schedule(0, 1e-4, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.0, 0.02).is_err());
        assert!(make_linear_schedule(10, 0.03, 0.02).is_err());
        assert!(make_linear_schedule(10, 1e-4, 1.0).is_err());
        // 1 - 1e-17 rounds to 1, which would break strict decrease.
        assert!(make_linear_schedule(10, 1e-17, 1e-17).is_err());
    }

    #[test]
    fn grid_matches_fifty_step_convention() {
        let g = timestep_grid(1000, 50);
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 1000);
        assert_eq!(g[1], 980);
        assert_eq!(*g.last().unwrap(), 0);
        assert_eq!(timestep_grid(7, 1), std::vec![7, 0]);
        assert_eq!(timestep_grid(2, 5), std::vec![2, 1, 0]);
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing(t in 1usize..400, lo in 1e-5f64..0.05, span in 0.0f64..0.2) {
            let hi = (lo + span).min(0.5);
            let s = make_linear_schedule(t, lo, hi).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for w in s.alpha_bars().windows(2) {
                prop_assert!(w[1] < w[0]);
                prop_assert!(w[1] > 0.0 && w[1] <= 1.0);
            }
        }

        #[test]
        fn grid_strictly_decreasing(from in 1usize..2000, steps in 1usize..80) {
            let g = timestep_grid(from, steps);
            prop_assert_eq!(g[0], from);
            prop_assert_eq!(*g.last().unwrap(), 0);
            prop_assert!(g.len() <= steps + 1);
            for w in g.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }
    }
}
