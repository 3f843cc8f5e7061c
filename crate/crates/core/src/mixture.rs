//! Isotropic Gaussian mixtures with closed-form noised marginals.
//!
//! Under the forward process `x_t = sqrt(a) x_0 + sqrt(1 - a) z` a mixture
//! with means `mu_k` and standard deviations `sigma_k` stays a mixture with
//! means `sqrt(a) mu_k` and variances `a sigma_k^2 + (1 - a)`. The exact noise
//! prediction is therefore `eps(x, t) = -sqrt(1 - a) * grad log q_t(x)`, which
//! is what a perfectly trained network would output.

use alloc::vec;
use alloc::vec::Vec;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, param, Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vecops::sq_dist;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    dim: usize,
}

/// Per-component quantities of the noised mixture at one point.
struct Noised {
    /// Component responsibilities `p(k | x_t)`.
    resp: Vec<f64>,
    /// Log responsibilities, computed in the log domain.
    log_resp: Vec<f64>,
    /// Component variances at `t`.
    var: Vec<f64>,
    /// Component scores `-(x - m_k) / v_k`, flattened K x D.
    scores: Vec<f64>,
    /// Mixture score, the responsibility-weighted component scores.
    score: Vec<f64>,
    log_density: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(param("mixture needs at least one component"));
        }
        if means.len() != k || stds.len() != k {
            return Err(param("weights, means and stds must have one entry per component"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(param("mixture dimension must be at least 1"));
        }
        for m in &means {
            check_dim(dim, m.len())?;
            if !m.iter().all(|v| v.is_finite()) {
                return Err(param("mixture means must be finite"));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(param("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(param("mixture weights must sum to 1"));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(param("component standard deviations must be nonnegative"));
        }
        Ok(Self { weights, means, stds, dim })
    }

    /// Equal-weight mixture sharing one standard deviation.
    pub fn uniform(means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(param("mixture needs at least one component"));
        }
        let w = 1.0 / k as f64;
        let mut weights = vec![w; k];
        // Keep the sum within 1e-12 of 1 regardless of rounding in 1/k.
        let drift: f64 = 1.0 - weights.iter().sum::<f64>();
        weights[0] += drift;
        Self::new(weights, means, vec![std; k])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    fn noised(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Noised> {
        check_dim(self.dim, x.len())?;
        schedule.check_t(t)?;
        if t == 0 {
            return Err(Error::Domain("noise prediction is undefined at t = 0".into()));
        }
        let a = schedule.alpha_bar(t);
        let sa = libm::sqrt(a);
        let k = self.components();
        let d = self.dim;
        let mut var = Vec::with_capacity(k);
        let mut logp = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k * d);
        for c in 0..k {
            let v = a * self.stds[c] * self.stds[c] + (1.0 - a);
            let mut dist2 = 0.0;
            for (i, xi) in x.iter().enumerate() {
                let diff = xi - sa * self.means[c][i];
                dist2 += diff * diff;
                scores.push(-diff / v);
            }
            let lw = if self.weights[c] > 0.0 { libm::log(self.weights[c]) } else { f64::NEG_INFINITY };
            logp.push(lw - 0.5 * dist2 / v - 0.5 * d as f64 * libm::log(2.0 * core::f64::consts::PI * v));
            var.push(v);
        }
        let log_density = log_sum_exp(&logp);
        let log_resp: Vec<f64> = logp.iter().map(|l| l - log_density).collect();
        let resp: Vec<f64> = log_resp.iter().map(|l| libm::exp(*l)).collect();
        let mut score = vec![0.0; d];
        for c in 0..k {
            for i in 0..d {
                score[i] += resp[c] * scores[c * d + i];
            }
        }
        Ok(Noised { resp, log_resp, var, scores, score, log_density })
    }

    /// `log q_t(x)` of the noised mixture.
    pub fn log_density(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<f64> {
        Ok(self.noised(x, t, schedule)?.log_density)
    }

    /// `grad_x log q_t(x)`.
    pub fn score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.noised(x, t, schedule)?.score)
    }

    /// Exact noise prediction `-sqrt(1 - alpha_t) * grad log q_t(x)`. Requires `t >= 1`.
    pub fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let n = self.noised(x, t, schedule)?;
        let c = -libm::sqrt(1.0 - schedule.alpha_bar(t));
        Ok(n.score.into_iter().map(|s| c * s).collect())
    }

    /// Noise prediction together with the vector-Jacobian product `J^T v`.
    ///
    /// The Jacobian is `-sqrt(1 - a)` times the Hessian of `log q_t`, which is
    /// symmetric, so `J^T v = J v`.
    pub fn epsilon_with_vjp(
        &self,
        x: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
        v: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.noised(x, t, schedule)?;
        let c = -libm::sqrt(1.0 - schedule.alpha_bar(t));
        let d = self.dim;
        // H v = sum_k r_k (-v / v_k + s_k (s_k . v)) - s (s . v)
        let mut hv = vec![0.0; d];
        for k in 0..self.components() {
            let r = n.resp[k];
            if r == 0.0 {
                continue;
            }
            let sk = &n.scores[k * d..(k + 1) * d];
            let skv: f64 = sk.iter().zip(v).map(|(a, b)| a * b).sum();
            for i in 0..d {
                hv[i] += r * (-v[i] / n.var[k] + sk[i] * skv);
            }
        }
        let sv: f64 = n.score.iter().zip(v).map(|(a, b)| a * b).sum();
        for i in 0..d {
            hv[i] -= n.score[i] * sv;
        }
        let eps = n.score.iter().map(|s| c * s).collect();
        let vjp = hv.into_iter().map(|h| c * h).collect();
        Ok((eps, vjp))
    }

    /// Exact component posterior `log p(k | x_t)` of the noised mixture.
    pub fn log_posterior(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(self.noised(x, t, schedule)?.log_resp)
    }

    /// `grad_x log p(c | x_t) = s_c - sum_k r_k s_k`.
    pub fn grad_log_posterior(
        &self,
        x: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
        component: usize,
    ) -> Result<Vec<f64>> {
        if component >= self.components() {
            return Err(param("target component out of range"));
        }
        let n = self.noised(x, t, schedule)?;
        let d = self.dim;
        Ok((0..d).map(|i| n.scores[component * d + i] - n.score[i]).collect())
    }

    /// Index of the most probable component for `x` under the mixture noised to `t`.
    pub fn classify(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<usize> {
        let lp = self.log_posterior(x, t, schedule)?;
        Ok(argmax(&lp))
    }

    /// Draws one clean sample `x_0 ~ q`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let idx = if self.components() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights).expect("validated weights").sample(rng)
        };
        let s = self.stds[idx];
        self.means[idx]
            .iter()
            .map(|m| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }

    /// Squared distance from `x` to the nearest component mean.
    pub fn nearest_mean_sq_dist(&self, x: &[f64]) -> f64 {
        self.means.iter().map(|m| sq_dist(m, x)).fold(f64::INFINITY, f64::min)
    }
}

/// Exact noise prediction for `x` at its timestep.
pub fn epsilon_gmm(
    x: &crate::sampler::StatePoint,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Vec<f64>> {
    mixture.epsilon(&x.coords, x.t, schedule)
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(v.iter().map(|x| libm::exp(x - m)).sum::<f64>())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
