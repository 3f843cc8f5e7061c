//! Numerical core of the diffusion desk lab.
//!
//! Everything here is `no_std` + `alloc`: noise schedules, the exact
//! Gaussian-mixture noise predictor, DDIM/DDPM reverse steps, a small
//! reverse-mode tape for gradients through sampler rollouts, the similarity
//! embedding, the reference store, propulsive energy guidance and the metric
//! battery. IO, configuration files and the CLI live in the `deskdiff` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod embedding;
pub mod error;
pub mod grad;
pub mod guidance;
pub mod metrics;
pub mod mixture;
pub mod refstore;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub(crate) mod vecops;

pub use embedding::{cosine_similarity, Cosine, Embedder, EmbedderKind, EmbedderSpec};
pub use error::{Error, Result};
pub use grad::{finite_diff, Evaluation, Node, Program, ProgramBuilder};
pub use guidance::{
    energy_program, guided_step, msla_node, sample_classifier_guided, sample_seed, ClassifierHook,
    GuidedStep, PropulsiveHook,
    classifier_guided_epsilon, clip_gradient, energy, guided_epsilon, msla_predict_x0,
    sample_batch_procreate, ClassifierGuidanceConfig, EnergyValue, GuidanceConfig,
};
pub use metrics::{
    fid, kid, mss, precision_recall, top1_fractions, vendi, MetricsReport, MetricsSpec,
};
pub use mixture::{epsilon_gmm, GaussianMixture};
pub use refstore::{nearest_reference, prefilter_topk, Origin, RefItem, ReferenceStore};
pub use sampler::{
    ddim_step, ddpm_step, predict_x0_one_step, run_sampler, EpsilonHook, SamplerKind, StatePoint,
};
pub use schedule::{make_linear_schedule, timestep_grid, NoiseSchedule};
