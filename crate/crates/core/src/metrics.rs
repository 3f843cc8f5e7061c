//! Distribution and diversity metrics on embedded point sets.
//!
//! All functions take embeddings (`&[Vec<f64>]`, one row per sample). FID
//! and KID compare a generated set with a real set, precision/recall use the
//! k-NN manifold estimate, MSS and Vendi measure diversity within one set,
//! and Top-1 fractions count near-replicas of a reference corpus.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, param, Error, Result};
use crate::grad::floored_cosine;
use crate::refstore::nearest_embedding;
use crate::vecops::{norm, sq_dist};

/// Eigenvalues below this are treated as zero in matrix square roots.
pub const EIGEN_FLOOR: f64 = 1e-10;

fn set_dim(set: &[Vec<f64>], min_len: usize, what: &str) -> Result<usize> {
    if set.len() < min_len {
        return Err(param(alloc::format!("{what} needs at least {min_len} points, got {}", set.len())));
    }
    let d = set[0].len();
    for row in set {
        check_dim(d, row.len())?;
    }
    Ok(d)
}

fn to_matrix(set: &[Vec<f64>]) -> DMatrix<f64> {
    let d = set[0].len();
    DMatrix::from_fn(set.len(), d, |i, j| set[i][j])
}

/// Sample mean and unbiased covariance.
pub fn moments(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = set_dim(set, 2, "moments")?;
    let n = set.len() as f64;
    let x = to_matrix(set);
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n);
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        for j in 0..d {
            row[j] -= mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| if l < EIGEN_FLOOR { 0.0 } else { libm::sqrt(l) });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Frechet distance between two Gaussians given by their moments.
///
/// The trace term uses `Tr((S1 S2)^{1/2}) = Tr((S1^{1/2} S2 S1^{1/2})^{1/2})`,
/// which only needs symmetric eigendecompositions.
pub fn fid_from_moments(
    mu1: &DVector<f64>,
    s1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    s2: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu1.len();
    check_dim(d, mu2.len())?;
    if s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(param("covariance shape does not match mean dimension"));
    }
    let r1 = sym_sqrt(s1);
    let inner = &r1 * s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| if *l < EIGEN_FLOOR { 0.0 } else { libm::sqrt(*l) })
        .sum();
    let diff = (mu1 - mu2).norm_squared();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0))
}

pub fn fid(generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<f64> {
    let d = set_dim(generated, 2, "fid")?;
    check_dim(d, set_dim(real, 2, "fid")?)?;
    let (m1, s1) = moments(generated)?;
    let (m2, s2) = moments(real)?;
    fid_from_moments(&m1, &s1, &m2, &s2)
}

/// `(x . y / E + 1)^3`
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let u = crate::vecops::dot(x, y) / x.len() as f64 + 1.0;
    u * u * u
}

/// Unbiased squared MMD with the cubic polynomial kernel.
pub fn kid(generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<f64> {
    let d = set_dim(generated, 2, "kid")?;
    check_dim(d, set_dim(real, 2, "kid")?)?;
    let within = |s: &[Vec<f64>]| {
        let n = s.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += poly_kernel(&s[i], &s[j]);
            }
        }
        2.0 * acc / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for g in generated {
        for r in real {
            cross += poly_kernel(g, r);
        }
    }
    cross /= (generated.len() * real.len()) as f64;
    Ok(within(generated) + within(real) - 2.0 * cross)
}

/// Distance from each point to its `k`-th nearest neighbour within the set.
fn knn_radii(set: &[Vec<f64>], k: usize) -> Vec<f64> {
    set.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = set.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| sq_dist(p, q)).collect();
            d.sort_by(f64::total_cmp);
            libm::sqrt(d[k - 1])
        })
        .collect()
}

fn coverage(points: &[Vec<f64>], manifold: &[Vec<f64>], radii: &[f64]) -> f64 {
    let inside = points
        .iter()
        .filter(|p| manifold.iter().zip(radii).any(|(m, r)| libm::sqrt(sq_dist(p, m)) <= *r))
        .count();
    inside as f64 / points.len() as f64
}

/// k-NN manifold precision and recall of `generated` against `real`.
pub fn precision_recall(generated: &[Vec<f64>], real: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(param("precision/recall needs k >= 1"));
    }
    let d = set_dim(generated, k + 1, "precision/recall")?;
    check_dim(d, set_dim(real, k + 1, "precision/recall")?)?;
    let real_r = knn_radii(real, k);
    let gen_r = knn_radii(generated, k);
    Ok((coverage(generated, real, &real_r), coverage(real, generated, &gen_r)))
}

/// Mean cosine similarity over unordered pairs.
pub fn mss(samples: &[Vec<f64>]) -> Result<f64> {
    set_dim(samples, 2, "mss")?;
    let n = samples.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += floored_cosine(&samples[i], &samples[j]).0;
        }
    }
    Ok(acc / (n * (n - 1) / 2) as f64)
}

/// Exponential of the Shannon entropy of the eigenvalues of `K / n`, with
/// `K` the cosine-similarity kernel. Ranges from 1 to `n`.
pub fn vendi(samples: &[Vec<f64>]) -> Result<f64> {
    set_dim(samples, 1, "vendi")?;
    if samples.iter().any(|s| norm(s) == 0.0) {
        return Err(Error::Domain("vendi needs nonzero embeddings".into()));
    }
    let n = samples.len();
    let k = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { floored_cosine(&samples[i], &samples[j]).0 });
    let eig = SymmetricEigen::new(k / n as f64).eigenvalues;
    let h: f64 = eig.iter().filter(|l| **l > 0.0).map(|l| -l * libm::log(*l)).sum();
    Ok(libm::exp(h).clamp(1.0, n as f64))
}

/// Per threshold, the fraction of `generated` whose largest cosine
/// similarity to `refs` is strictly above it.
pub fn top1_fractions(generated: &[Vec<f64>], refs: &[Vec<f64>], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if refs.is_empty() {
        return Err(Error::EmptyReferences);
    }
    if generated.is_empty() {
        return Err(param("top-1 fractions need at least one sample"));
    }
    let scores = top1_scores(generated, refs)?;
    Ok(thresholds
        .iter()
        .map(|th| (*th, scores.iter().filter(|s| **s > *th).count() as f64 / scores.len() as f64))
        .collect())
}

/// Largest cosine similarity of each sample to the reference corpus.
pub fn top1_scores(generated: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<Vec<f64>> {
    generated.iter().map(|g| nearest_embedding(refs.iter().map(|r| r.as_slice()), g).map(|(_, s)| s)).collect()
}

fn default_k() -> usize {
    5
}

fn default_thresholds() -> Vec<f64> {
    vec![0.4, 0.5, 0.6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self { k: default_k(), thresholds: default_thresholds() }
    }
}

/// The metric battery for one set of generated samples. A metric that
/// cannot be computed is `None` and its reason is recorded in `errors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fid: Option<f64>,
    pub kid: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mss: Option<f64>,
    pub vendi: Option<f64>,
    /// Threshold (as written, e.g. `"0.6"`) to fraction.
    pub top1_fractions: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<String, String>,
}

fn keep(errors: &mut BTreeMap<String, String>, name: &str, r: Result<f64>) -> Option<f64> {
    match r {
        Ok(v) if v.is_finite() => Some(v),
        Ok(_) => {
            errors.insert(name.to_string(), "non-finite result".to_string());
            None
        }
        Err(e) => {
            errors.insert(name.to_string(), e.to_string());
            None
        }
    }
}

impl MetricsReport {
    /// Computes every metric. `generated`, `real` and `refs` are embeddings.
    pub fn evaluate(generated: &[Vec<f64>], real: &[Vec<f64>], refs: &[Vec<f64>], spec: &MetricsSpec) -> Self {
        let mut errors = BTreeMap::new();
        let fid = keep(&mut errors, "fid", fid(generated, real));
        let kid = keep(&mut errors, "kid", kid(generated, real));
        let (precision, recall) = match precision_recall(generated, real, spec.k) {
            Ok((p, r)) => (Some(p), Some(r)),
            Err(e) => {
                errors.insert("precision_recall".to_string(), e.to_string());
                (None, None)
            }
        };
        let mss = keep(&mut errors, "mss", mss(generated));
        let vendi = keep(&mut errors, "vendi", vendi(generated));
        let mut top1 = BTreeMap::new();
        match top1_fractions(generated, refs, &spec.thresholds) {
            Ok(v) => {
                for (th, f) in v {
                    top1.insert(threshold_key(th), f);
                }
            }
            Err(e) => {
                errors.insert("top1_fractions".to_string(), e.to_string());
            }
        }
        Self { fid, kid, precision, recall, mss, vendi, top1_fractions: top1, errors }
    }

    pub fn top1(&self, threshold: f64) -> Option<f64> {
        self.top1_fractions.get(&threshold_key(threshold)).copied()
    }
}

pub fn threshold_key(th: f64) -> String {
    alloc::format!("{th}")
}
