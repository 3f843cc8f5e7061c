//! The reference set: points the sampler is pushed away from, with their
//! embeddings cached at insert time.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{check_dim, param, Error, Result};
use crate::grad::floored_cosine;
use crate::vecops::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Generated,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Generated => "generated",
        }
    }
}

impl core::str::FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Origin::Original),
            "generated" => Ok(Origin::Generated),
            other => Err(param(alloc::format!("unknown reference origin `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefItem {
    pub point: Vec<f64>,
    pub embedding: Vec<f64>,
    pub origin: Origin,
}

/// Append-only reference store. Indices never change once assigned.
///
/// Readers take [`ReferenceStore::snapshot`], a shared borrow, so no reader
/// can observe an append in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStore {
    embedder: Embedder,
    items: Vec<RefItem>,
}

impl ReferenceStore {
    pub fn new(embedder: Embedder) -> Self {
        Self { embedder, items: Vec::new() }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn snapshot(&self) -> &[RefItem] {
        &self.items
    }

    /// Embeds and appends `points`; returns the new size. Nothing is appended
    /// if any point is rejected.
    pub fn add_batch(&mut self, points: &[Vec<f64>], origin: Origin) -> Result<usize> {
        let mut fresh = Vec::with_capacity(points.len());
        for p in points {
            check_dim(self.embedder.in_dim(), p.len())?;
            if !all_finite(p) {
                return Err(param("reference points must be finite"));
            }
            fresh.push(RefItem { point: p.clone(), embedding: self.embedder.embed(p)?, origin });
        }
        self.items.extend(fresh);
        Ok(self.items.len())
    }

    /// Items at `indices`, in the given order, as a standalone store.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { embedder: self.embedder.clone(), items: indices.iter().map(|i| self.items[*i].clone()).collect() }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|it| it.point.clone()).collect()
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|it| it.embedding.clone()).collect()
    }
}

/// Index and value of the most cosine-similar reference; ties go to the
/// lowest index.
pub fn nearest_reference(snapshot: &[RefItem], query: &[f64]) -> Result<(usize, f64)> {
    nearest_embedding(snapshot.iter().map(|it| it.embedding.as_slice()), query)
}

pub(crate) fn nearest_embedding<'a>(
    embeddings: impl Iterator<Item = &'a [f64]>,
    query: &[f64],
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in embeddings.enumerate() {
        check_dim(query.len(), e.len())?;
        let (s, _) = floored_cosine(query, e);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or(Error::EmptyReferences)
}

/// Indices (ascending) of the `k` items most similar to `query`. Equal
/// similarities rank by lower index. Returns every index when `k >= len`.
pub fn prefilter_topk(snapshot: &[RefItem], query: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(param("prefilter needs k >= 1"));
    }
    let mut scored = Vec::with_capacity(snapshot.len());
    for (i, it) in snapshot.iter().enumerate() {
        check_dim(query.len(), it.embedding.len())?;
        scored.push((i, floored_cosine(query, &it.embedding).0));
    }
    if k < scored.len() {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
    }
    let mut idx: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbedderKind, EmbedderSpec};
    use crate::rng::rng_from;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn identity_store(points: &[Vec<f64>]) -> ReferenceStore {
        let mut s = ReferenceStore::new(Embedder::new(EmbedderSpec::identity(2)).unwrap());
        s.add_batch(points, Origin::Original).unwrap();
        s
    }

    #[test]
    fn append_only_growth() {
        let mut s = ReferenceStore::new(Embedder::new(EmbedderSpec::identity(2)).unwrap());
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(s.add_batch(&pts, Origin::Original).unwrap(), 10);
        let before = s.snapshot().to_vec();
        assert_eq!(s.add_batch(&pts[..3], Origin::Generated).unwrap(), 13);
        assert_eq!(&s.snapshot()[..10], &before[..]);
        assert_eq!(s.snapshot()[12].origin, Origin::Generated);
        assert!(s.add_batch(&[vec![1.0]], Origin::Original).is_err());
        assert!(s.add_batch(&[vec![1.0, f64::NAN]], Origin::Original).is_err());
        assert_eq!(s.len(), 13);
    }

    #[test]
    fn cached_embedding_is_coherent() {
        let spec = EmbedderSpec { kind: EmbedderKind::RandomLinearTanh, seed: 3, in_dim: 2, out_dim: 5, bandwidth: 1.0 };
        let e = Embedder::new(spec).unwrap();
        let mut s = ReferenceStore::new(e.clone());
        s.add_batch(&[vec![0.4, -1.0]], Origin::Original).unwrap();
        assert_eq!(s.snapshot()[0].embedding, e.embed(&[0.4, -1.0]).unwrap());
    }

    #[test]
    fn nearest_examples() {
        let s = identity_store(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(nearest_reference(s.snapshot(), &[1.0, 0.0]).unwrap(), (0, 1.0));
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let (i, v) = nearest_reference(s.snapshot(), &[h, h]).unwrap();
        assert_eq!(i, 0);
        assert!((v - h).abs() < 1e-15);
        assert_eq!(nearest_reference(&[], &[1.0, 0.0]), Err(Error::EmptyReferences));
    }

    #[test]
    fn prefilter_edges() {
        let s = identity_store(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(prefilter_topk(s.snapshot(), &[0.2, 1.0], 10).unwrap(), vec![0, 1, 2]);
        let (i, _) = nearest_reference(s.snapshot(), &[0.2, 1.0]).unwrap();
        assert_eq!(prefilter_topk(s.snapshot(), &[0.2, 1.0], 1).unwrap(), vec![i]);
        assert!(prefilter_topk(s.snapshot(), &[0.2, 1.0], 0).is_err());
    }

    fn random_store(n: usize, seed: u64) -> ReferenceStore {
        let mut rng = rng_from(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        identity_store(&pts)
    }

    #[test]
    fn nearest_agrees_with_exhaustive_scan() {
        let s = random_store(1000, 5);
        let q = [0.3, -0.8];
        // Oracle: explicit loop with its own cosine.
        let mut best = (usize::MAX, -2.0);
        for (i, it) in s.snapshot().iter().enumerate() {
            let e = &it.embedding;
            let c = (e[0] * q[0] + e[1] * q[1]) / (libm::hypot(e[0], e[1]) * libm::hypot(q[0], q[1]));
            if c > best.1 {
                best = (i, c);
            }
        }
        let (i, v) = nearest_reference(s.snapshot(), &q).unwrap();
        assert_eq!(i, best.0);
        assert!((v - best.1).abs() < 1e-12);
    }

    #[test]
    fn topk_matches_full_sort() {
        let s = random_store(200, 8);
        let q = [-0.1, 0.9];
        let mut all: Vec<(usize, f64)> = s
            .snapshot()
            .iter()
            .enumerate()
            .map(|(i, it)| (i, crate::embedding::cosine_similarity(&q, &it.embedding).unwrap().value))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let mut expect: Vec<usize> = all[..10].iter().map(|p| p.0).collect();
        expect.sort_unstable();
        assert_eq!(prefilter_topk(s.snapshot(), &q, 10).unwrap(), expect);
    }

    proptest! {
        #[test]
        fn prefilter_preserves_nearest(seed in 0u64..1000, k in 1usize..40, qx in -1.0f64..1.0, qy in -1.0f64..1.0) {
            let s = random_store(30, seed);
            let q = [qx, qy];
            let full = nearest_reference(s.snapshot(), &q).unwrap();
            let idx = prefilter_topk(s.snapshot(), &q, k).unwrap();
            let sub = s.subset(&idx);
            let (j, v) = nearest_reference(sub.snapshot(), &q).unwrap();
            prop_assert_eq!(idx[j], full.0);
            prop_assert_eq!(v, full.1);
        }
    }
}
