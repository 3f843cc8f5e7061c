//! Deterministic similarity embeddings and cosine similarity.
//!
//! The same embedder serves the guidance energy, the Top-1 replication
//! scores and the kernel metrics. Every embedder is reproducible from its
//! [`EmbedderSpec`] alone.

use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, param, Result};
use crate::grad::{floored_cosine, Node, ProgramBuilder};
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// `f(x) = x`
    Identity,
    /// `f(x) = P x`, `P_ij ~ N(0, 1) / sqrt(D)`
    RandomLinear,
    /// `f(x) = tanh(P x)`
    RandomLinearTanh,
    /// `f(x) = sqrt(2 / E) cos(W x + b)` with `W_ij ~ N(0, 1) / bandwidth`
    /// and `b_i ~ U[0, 2 pi)`. Cosine similarity between two embeddings
    /// approximates the Gaussian kernel `exp(-|x - y|^2 / (2 bandwidth^2))`,
    /// so it is sensitive to location rather than direction only.
    RandomFourier,
}

fn default_bandwidth() -> f64 {
    1.0
}

/// Serializable description that fully determines an [`Embedder`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    #[serde(default)]
    pub seed: u64,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Length scale of the `random_fourier` kind; ignored otherwise.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

impl EmbedderSpec {
    pub fn identity(dim: usize) -> Self {
        Self { kind: EmbedderKind::Identity, seed: 0, in_dim: dim, out_dim: dim, bandwidth: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    spec: EmbedderSpec,
    /// Row-major `out_dim x in_dim`; empty for the identity kind.
    projection: Vec<f64>,
    offset: Vec<f64>,
}

impl Embedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self> {
        let (d, e) = (spec.in_dim, spec.out_dim);
        if d == 0 || e == 0 {
            return Err(param("embedder dimensions must be positive"));
        }
        let mut rng = rng_from(derive_seed(spec.seed, stream::EMBEDDER, 0));
        let (projection, offset) = match spec.kind {
            EmbedderKind::Identity => {
                if d != e {
                    return Err(param("identity embedder needs out_dim == in_dim"));
                }
                (Vec::new(), Vec::new())
            }
            EmbedderKind::RandomLinear | EmbedderKind::RandomLinearTanh => {
                let s = 1.0 / libm::sqrt(d as f64);
                let p = (0..d * e).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                (p, Vec::new())
            }
            EmbedderKind::RandomFourier => {
                if !(spec.bandwidth > 0.0 && spec.bandwidth.is_finite()) {
                    return Err(param("random_fourier bandwidth must be positive"));
                }
                let s = 1.0 / spec.bandwidth;
                let p = (0..d * e).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                let b = (0..e).map(|_| rng.random_range(0.0..core::f64::consts::TAU)).collect();
                (p, b)
            }
        };
        Ok(Self { spec, projection, offset })
    }

    pub fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.spec.in_dim, x.len())?;
        let d = self.spec.in_dim;
        let project = || {
            self.projection
                .chunks_exact(d)
                .map(|row| row.iter().zip(x).map(|(p, xi)| p * xi).sum::<f64>())
        };
        Ok(match self.spec.kind {
            EmbedderKind::Identity => x.to_vec(),
            EmbedderKind::RandomLinear => project().collect(),
            EmbedderKind::RandomLinearTanh => project().map(libm::tanh).collect(),
            EmbedderKind::RandomFourier => {
                let amp = libm::sqrt(2.0 / self.spec.out_dim as f64);
                project().zip(&self.offset).map(|(u, b)| amp * libm::cos(u + b)).collect()
            }
        })
    }

    pub fn embed_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.embed(x)).collect()
    }

    /// Appends this embedding to a program, returning the embedded node.
    pub fn embed_node<'a>(&'a self, b: &mut ProgramBuilder<'a>, x: Node) -> Result<Node> {
        check_dim(self.spec.in_dim, b.dim(x))?;
        let e = self.spec.out_dim;
        Ok(match self.spec.kind {
            EmbedderKind::Identity => x,
            EmbedderKind::RandomLinear => b.matvec(&self.projection, e, x)?,
            EmbedderKind::RandomLinearTanh => {
                let p = b.matvec(&self.projection, e, x)?;
                b.tanh(p)
            }
            EmbedderKind::RandomFourier => {
                let p = b.matvec(&self.projection, e, x)?;
                let shifted = b.add_const(p, &self.offset)?;
                let c = b.cos(shifted);
                b.scale(c, libm::sqrt(2.0 / e as f64))
            }
        })
    }
}

/// Result of a cosine similarity with its degenerate-input flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input had (near-)zero norm; `value` is then 0 for
    /// zero inputs.
    pub degenerate: bool,
}

/// `a . b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    check_dim(a.len(), b.len())?;
    let (value, degenerate) = floored_cosine(a, b);
    Ok(Cosine { value, degenerate })
}
