//! Propulsive energy guidance.
//!
//! At every reverse step the sampler predicts a clean sample with a short
//! DDIM look-ahead, embeds it, and measures its largest cosine similarity
//! to the reference set. The gradient of `gamma` times that similarity with
//! respect to the noisy state is added to the noise prediction, which moves
//! the next state away from the closest reference:
//!
//! ```text
//! g(x_t)  = gamma * max_i cos(f(x0_hat(x_t)), f(x_i))
//! eps'    = eps(x_t, t) + sqrt(1 - alpha_{t_next}) * clip(grad g(x_t))
//! ```
//!
//! Classifier guidance toward a mixture component is provided as a baseline
//! using the exact noised component posterior.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{check_dim, Error, Result};
use crate::grad::{Evaluation, Node, Program, ProgramBuilder};
use crate::mixture::GaussianMixture;
use crate::refstore::{Origin, RefItem, ReferenceStore};
use crate::rng::{derive_seed, stream};
use crate::sampler::{run_sampler, EpsilonHook, SamplerKind, StatePoint};
use crate::schedule::{timestep_grid, NoiseSchedule};
use crate::vecops::norm;

fn default_batch_size() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Guidance strength; 0 disables guidance.
    pub gamma: f64,
    /// Look-ahead DDIM steps; 0 disables guidance.
    pub n_step: usize,
    /// Cap on the energy gradient norm, applied before the noise-level scaling.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub dynamic_growth: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { gamma: 0.0, n_step: 5, clip_norm: None, dynamic_growth: true, batch_size: 1 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("guidance.gamma must be a finite value >= 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config("guidance.clip_norm must be positive".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("guidance.batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Guidance contributes nothing when either strength or look-ahead is zero.
    pub fn is_active(&self) -> bool {
        self.gamma > 0.0 && self.n_step > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierGuidanceConfig {
    pub target_component: usize,
    pub scale: f64,
}

/// Energy value at one state with the reference it was measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyValue {
    /// `gamma * similarity`.
    pub value: f64,
    /// Largest cosine similarity between the prediction and any reference.
    pub similarity: f64,
    /// Index of the closest reference (lowest index on ties).
    pub closest: usize,
    /// The prediction's embedding hit the cosine denominator floor.
    pub degenerate: bool,
}

fn check_look_ahead(x: &StatePoint, n_step: usize, schedule: &NoiseSchedule) -> Result<()> {
    if n_step == 0 {
        return Err(Error::Config("look-ahead needs n_step >= 1; n_step = 0 means unguided sampling".into()));
    }
    schedule.check_t(x.t)?;
    if x.t == 0 {
        return Err(Error::Domain("look-ahead prediction needs t >= 1".into()));
    }
    Ok(())
}

/// Appends an `n_step` DDIM look-ahead from `t` to 0 to a program.
pub fn msla_node<'a>(
    b: &mut ProgramBuilder<'a>,
    x: Node,
    t: usize,
    n_step: usize,
    schedule: &'a NoiseSchedule,
    mixture: &'a GaussianMixture,
) -> Result<Node> {
    let grid = timestep_grid(t, n_step);
    let mut cur = x;
    for w in grid.windows(2) {
        let eps = b.mixture_eps(cur, w[0], mixture, schedule)?;
        cur = b.ddim_update(cur, eps, w[0], w[1], schedule)?;
    }
    Ok(cur)
}

/// Clean-sample prediction by `n_step` deterministic DDIM steps over the
/// evenly spaced grid from `x.t` to 0. With `n_step = 1` this is the one-step
/// prediction.
pub fn msla_predict_x0(
    x: &StatePoint,
    n_step: usize,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Vec<f64>> {
    check_look_ahead(x, n_step, schedule)?;
    check_dim(mixture.dim(), x.dim())?;
    let mut cur = x.clone();
    for &t_next in &timestep_grid(x.t, n_step)[1..] {
        let eps = mixture.epsilon(&cur.coords, cur.t, schedule)?;
        cur = crate::sampler::ddim_step(&cur, &eps, t_next, schedule)?;
    }
    Ok(cur.coords)
}

/// The energy `gamma * max_i cos(f(msla(x)), e_i)` as a program of the noisy
/// state, plus the node of its max.
pub fn energy_program<'a>(
    t: usize,
    refs: &'a [RefItem],
    gamma: f64,
    n_step: usize,
    embedder: &'a Embedder,
    schedule: &'a NoiseSchedule,
    mixture: &'a GaussianMixture,
) -> Result<(Program<'a>, Node)> {
    if refs.is_empty() {
        return Err(Error::EmptyReferences);
    }
    let mut b = ProgramBuilder::new(mixture.dim());
    let x = b.input();
    let x0 = msla_node(&mut b, x, t, n_step, schedule, mixture)?;
    let emb = embedder.embed_node(&mut b, x0)?;
    let sims = refs.iter().map(|r| b.cosine_const(emb, &r.embedding)).collect::<Result<Vec<_>>>()?;
    let best = b.max(&sims)?;
    let out = b.scale(best, gamma);
    Ok((b.finish(out)?, best))
}

fn energy_from(ev: &Evaluation, best: Node) -> EnergyValue {
    EnergyValue {
        value: ev.value(),
        similarity: ev.node_value(best)[0],
        closest: ev.choice(best).expect("max records its branch"),
        degenerate: ev.degenerate(),
    }
}

/// Evaluates the energy. `Ok(None)` signals that guidance is disabled
/// because the reference snapshot is empty.
pub fn energy(
    x: &StatePoint,
    refs: &[RefItem],
    cfg: &GuidanceConfig,
    embedder: &Embedder,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Option<EnergyValue>> {
    check_look_ahead(x, cfg.n_step, schedule)?;
    if refs.is_empty() {
        return Ok(None);
    }
    let (prog, best) = energy_program(x.t, refs, cfg.gamma, cfg.n_step, embedder, schedule, mixture)?;
    Ok(Some(energy_from(&prog.forward(&x.coords)?, best)))
}

/// Rescales `gvec` to norm `clip_norm` when it is longer.
pub fn clip_gradient(gvec: &[f64], clip_norm: f64) -> Vec<f64> {
    let n = norm(gvec);
    if n <= clip_norm {
        gvec.to_vec()
    } else {
        let s = clip_norm / n;
        gvec.iter().map(|g| g * s).collect()
    }
}

/// Everything computed for one guided noise prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedStep {
    pub eps: Vec<f64>,
    /// Gradient of the energy before clipping.
    pub raw_gradient: Vec<f64>,
    /// `sqrt(1 - alpha_{t_next}) * clip(raw_gradient)`.
    pub term: Vec<f64>,
    pub energy: EnergyValue,
}

/// Guided noise prediction with diagnostics. `Ok(None)` when guidance is
/// inactive (zero strength, zero look-ahead or empty references).
pub fn guided_step(
    x: &StatePoint,
    t_next: usize,
    refs: &[RefItem],
    cfg: &GuidanceConfig,
    embedder: &Embedder,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Option<GuidedStep>> {
    if t_next >= x.t {
        return Err(Error::Ordering { from: x.t, to: t_next });
    }
    if !cfg.is_active() || refs.is_empty() {
        return Ok(None);
    }
    let eps = mixture.epsilon(&x.coords, x.t, schedule)?;
    let (prog, best) = energy_program(x.t, refs, cfg.gamma, cfg.n_step, embedder, schedule, mixture)?;
    let (ev, raw_gradient) = prog.value_and_gradient(&x.coords)?;
    let clipped = match cfg.clip_norm {
        Some(c) => clip_gradient(&raw_gradient, c),
        None => raw_gradient.clone(),
    };
    let coef = libm::sqrt(1.0 - schedule.alpha_bar(t_next));
    let term: Vec<f64> = clipped.iter().map(|g| coef * g).collect();
    let guided = eps.iter().zip(&term).map(|(e, d)| e + d).collect();
    Ok(Some(GuidedStep { eps: guided, raw_gradient, term, energy: energy_from(&ev, best) }))
}

/// `eps' = eps + sqrt(1 - alpha_{t_next}) * clip(grad g)`; returns `eps`
/// unchanged when guidance is inactive.
pub fn guided_epsilon(
    x: &StatePoint,
    t_next: usize,
    refs: &[RefItem],
    cfg: &GuidanceConfig,
    embedder: &Embedder,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Vec<f64>> {
    match guided_step(x, t_next, refs, cfg, embedder, schedule, mixture)? {
        Some(step) => Ok(step.eps),
        None => mixture.epsilon(&x.coords, x.t, schedule),
    }
}

/// Classifier-guided noise prediction toward `cfg.target_component`, with
/// the exact noised posterior as classifier and loss `-log p(c | x_t)`.
pub fn classifier_guided_epsilon(
    x: &StatePoint,
    t_next: usize,
    cfg: &ClassifierGuidanceConfig,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
) -> Result<Vec<f64>> {
    if t_next >= x.t {
        return Err(Error::Ordering { from: x.t, to: t_next });
    }
    if cfg.target_component >= mixture.components() {
        return Err(Error::Config("classifier_guidance.target_component out of range".into()));
    }
    let eps = mixture.epsilon(&x.coords, x.t, schedule)?;
    if cfg.scale == 0.0 {
        return Ok(eps);
    }
    let grad = mixture.grad_log_posterior(&x.coords, x.t, schedule, cfg.target_component)?;
    let coef = cfg.scale * libm::sqrt(1.0 - schedule.alpha_bar(t_next));
    // grad(-log p) = -grad log p
    Ok(eps.iter().zip(&grad).map(|(e, g)| e - coef * g).collect())
}

/// Sampler hook applying propulsive guidance against a frozen snapshot.
pub struct PropulsiveHook<'a> {
    pub refs: &'a [RefItem],
    pub cfg: &'a GuidanceConfig,
    pub embedder: &'a Embedder,
    pub schedule: &'a NoiseSchedule,
    pub mixture: &'a GaussianMixture,
}

impl EpsilonHook for PropulsiveHook<'_> {
    fn adjust(&mut self, x: &StatePoint, t_next: usize, eps: Vec<f64>) -> Result<Vec<f64>> {
        match guided_step(x, t_next, self.refs, self.cfg, self.embedder, self.schedule, self.mixture)? {
            Some(step) => Ok(step.eps),
            None => Ok(eps),
        }
    }
}

/// Sampler hook applying classifier guidance.
pub struct ClassifierHook<'a> {
    pub cfg: &'a ClassifierGuidanceConfig,
    pub schedule: &'a NoiseSchedule,
    pub mixture: &'a GaussianMixture,
}

impl EpsilonHook for ClassifierHook<'_> {
    fn adjust(&mut self, x: &StatePoint, t_next: usize, _eps: Vec<f64>) -> Result<Vec<f64>> {
        classifier_guided_epsilon(x, t_next, self.cfg, self.schedule, self.mixture)
    }
}

/// Seed used for the `index`-th sample of a batch run.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, stream::SAMPLES, index as u64)
}

/// Generates `count` samples in batches of `cfg.batch_size`.
///
/// Every sample in a batch is guided against the same snapshot of `refs`.
/// With `cfg.dynamic_growth` each finished batch is appended to `refs` (as
/// generated items) before the next batch starts. Sample `i` uses
/// [`sample_seed`]`(rng_seed, i)`, so with guidance inactive the outputs
/// equal [`run_sampler`] under those seeds bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch_procreate(
    count: usize,
    refs: &mut ReferenceStore,
    cfg: &GuidanceConfig,
    kind: SamplerKind,
    steps: usize,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_dim(mixture.dim(), refs.embedder().in_dim())?;
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    if cfg.is_active() && refs.is_empty() && !cfg.dynamic_growth {
        return Err(Error::Config("guidance is enabled but the reference set is empty".into()));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let batch_len = cfg.batch_size.min(count - out.len());
        let mut batch = Vec::with_capacity(batch_len);
        {
            let snapshot = refs.snapshot();
            let embedder = refs.embedder();
            for j in 0..batch_len {
                let seed = sample_seed(rng_seed, out.len() + j);
                let x0 = if cfg.is_active() && !snapshot.is_empty() {
                    let mut hook = PropulsiveHook { refs: snapshot, cfg, embedder, schedule, mixture };
                    run_sampler(kind, steps, schedule, mixture, Some(&mut hook), seed)?
                } else {
                    run_sampler(kind, steps, schedule, mixture, None, seed)?
                };
                batch.push(x0);
            }
        }
        if cfg.dynamic_growth {
            refs.add_batch(&batch, Origin::Generated)?;
        }
        out.extend(batch);
    }
    Ok(out)
}

/// Generates `count` classifier-guided samples; sample `i` uses [`sample_seed`].
pub fn sample_classifier_guided(
    count: usize,
    cfg: &ClassifierGuidanceConfig,
    kind: SamplerKind,
    steps: usize,
    schedule: &NoiseSchedule,
    mixture: &GaussianMixture,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .map(|i| {
            let mut hook = ClassifierHook { cfg, schedule, mixture };
            run_sampler(kind, steps, schedule, mixture, Some(&mut hook), sample_seed(rng_seed, i))
        })
        .collect()
}
