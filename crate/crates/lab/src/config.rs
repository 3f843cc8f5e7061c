//! Run configuration: one JSON document that fixes every random draw.

use std::fs;
use std::path::{Path, PathBuf};

use deskdiff_core::{
    make_linear_schedule, ClassifierGuidanceConfig, EmbedderSpec, GaussianMixture, GuidanceConfig, MetricsSpec,
    NoiseSchedule, SamplerKind,
};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixtureSpec {
    /// `components` equal-weight means on a circle in the first two
    /// coordinates, adjacent means `spacing` apart.
    Ring {
        components: usize,
        #[serde(default = "default_spacing")]
        spacing: f64,
        std: f64,
        #[serde(default = "default_ring_dim")]
        dim: usize,
    },
    Explicit {
        means: Vec<Vec<f64>>,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        stds: Vec<f64>,
    },
}

fn default_spacing() -> f64 {
    1.0
}

fn default_ring_dim() -> usize {
    2
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        let bad = |e: deskdiff_core::Error| LabError::config("mixture", e.to_string());
        match self {
            MixtureSpec::Ring { components, spacing, std, dim } => {
                if *components == 0 || *dim < 2 {
                    return Err(LabError::config("mixture", "ring needs components >= 1 and dim >= 2"));
                }
                let k = *components as f64;
                let radius = if *components == 1 { 0.0 } else { spacing / (2.0 * (std::f64::consts::PI / k).sin()) };
                let means = (0..*components)
                    .map(|i| {
                        let a = std::f64::consts::TAU * i as f64 / k;
                        let mut m = vec![0.0; *dim];
                        m[0] = radius * a.cos();
                        m[1] = radius * a.sin();
                        m
                    })
                    .collect();
                GaussianMixture::uniform(means, *std).map_err(bad)
            }
            MixtureSpec::Explicit { means, weights, stds } => {
                let k = means.len();
                let w = weights.clone().unwrap_or_else(|| {
                    let mut w = vec![1.0 / k.max(1) as f64; k];
                    if k > 0 {
                        w[0] += 1.0 - w.iter().sum::<f64>();
                    }
                    w
                });
                GaussianMixture::new(w, means.clone(), stds.clone()).map_err(bad)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { total_steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_linear_schedule(self.total_steps, self.beta_start, self.beta_end)
            .map_err(|e| LabError::config("schedule", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub steps: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self { kind: SamplerKind::Ddim, steps: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ReferenceSource {
    /// `count` clean draws from the mixture.
    Mixture { count: usize },
    /// One reference at each component mean.
    Means,
    Inline { points: Vec<Vec<f64>> },
    /// CSV with columns `x0..x{D-1}` and an optional `origin` column.
    Csv { path: PathBuf },
}

fn default_samples() -> usize {
    40
}

fn default_held_out() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    #[serde(flatten)]
    pub metrics: MetricsSpec,
    /// Number of generated samples per run.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Held-out mixture draws used as the real set.
    #[serde(default = "default_held_out")]
    pub held_out: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { metrics: MetricsSpec::default(), samples: default_samples(), held_out: default_held_out() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    pub embedder: EmbedderSpec,
    /// Embedder for the metric battery; defaults to `embedder`.
    #[serde(default)]
    pub metrics_embedder: Option<EmbedderSpec>,
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub classifier_guidance: Option<ClassifierGuidanceConfig>,
    #[serde(default)]
    pub metrics: EvalSpec,
    pub references: ReferenceSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| LabError::config("config", format!("{}: {e}", path.display())))?;
        if let ReferenceSource::Csv { path: p } = &mut cfg.references {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn metrics_embedder_spec(&self) -> EmbedderSpec {
        self.metrics_embedder.unwrap_or(self.embedder)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let mixture = self.mixture.build()?;
        let schedule = self.schedule.build()?;
        let d = mixture.dim();
        if self.embedder.in_dim != d {
            return Err(LabError::config(
                "embedder.in_dim",
                format!("embedder expects {} dimensions, mixture has {d}", self.embedder.in_dim),
            ));
        }
        if let Some(m) = &self.metrics_embedder {
            if m.in_dim != d {
                return Err(LabError::config("metrics_embedder.in_dim", format!("expected {d}, got {}", m.in_dim)));
            }
        }
        if self.sampler.steps == 0 || self.sampler.steps > schedule.total_steps() {
            return Err(LabError::config(
                "sampler.steps",
                format!("must lie in [1, {}], got {}", schedule.total_steps(), self.sampler.steps),
            ));
        }
        self.guidance.validate().map_err(|e| LabError::config("guidance", e.to_string()))?;
        if let Some(c) = &self.classifier_guidance {
            if c.target_component >= mixture.components() {
                return Err(LabError::config("classifier_guidance.target_component", "no such mixture component"));
            }
            if !(c.scale >= 0.0 && c.scale.is_finite()) {
                return Err(LabError::config("classifier_guidance.scale", "must be finite and >= 0"));
            }
        }
        let k = self.metrics.metrics.k;
        if k == 0 {
            return Err(LabError::config("metrics.k", "must be at least 1"));
        }
        if self.metrics.samples < k + 1 {
            return Err(LabError::config(
                "metrics.k",
                format!("k = {k} needs at least {} samples, got {}", k + 1, self.metrics.samples),
            ));
        }
        if self.metrics.held_out < k + 1 {
            return Err(LabError::config("metrics.held_out", format!("needs at least {} draws", k + 1)));
        }
        match &self.references {
            ReferenceSource::Mixture { count } if *count == 0 && !self.guidance.dynamic_growth && self.guidance.is_active() => {
                Err(LabError::config("references.count", "guidance needs at least one reference"))
            }
            ReferenceSource::Inline { points } => {
                for p in points {
                    if p.len() != d {
                        return Err(LabError::config("references.points", format!("expected {d} coordinates, got {}", p.len())));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}
