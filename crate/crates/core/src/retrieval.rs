//! Top-1 reference retrieval by cosine similarity over an exhaustive scan,
//! optionally restricted to one submap.

use crate::error::{Error, Result};
use crate::tensor::{dot, gem_pool, l2_normalize, DescriptorVector, FeatureMap, DEFAULT_GEM_EPS};

/// Whole-image descriptor: GeM over every cell, then L2 normalisation.
pub fn compute_global_descriptor(fm: &FeatureMap, p: f64) -> Result<DescriptorVector> {
    l2_normalize(&gem_pool(&fm.full_region(), p, DEFAULT_GEM_EPS)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub frame_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
struct IndexEntry {
    frame_id: String,
    submap_id: String,
    descriptor: Vec<f64>,
}

/// Immutable database of normalised reference descriptors.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
}

impl RetrievalIndex {
    /// Builds an index from `(frame_id, submap_id, descriptor)` triples;
    /// descriptors are normalised on insertion.
    pub fn build<I>(references: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, DescriptorVector)>,
    {
        let mut entries = Vec::new();
        let mut dim = None;
        for (frame_id, submap_id, d) in references {
            match dim {
                None => dim = Some(d.len()),
                Some(n) if n != d.len() => {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: d.len(),
                    })
                }
                _ => {}
            }
            let descriptor = l2_normalize(&d)?.into_values();
            entries.push(IndexEntry {
                frame_id,
                submap_id,
                descriptor,
            });
        }
        let dim = dim.ok_or(Error::EmptyIndex)?;
        Ok(Self { entries, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Best-matching reference among those eligible under `submap`. Ties go
    /// to the lexicographically smallest frame id.
    pub fn retrieve(&self, query: &DescriptorVector, submap: Option<&str>) -> Result<RetrievalHit> {
        if query.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let q = if query.is_normalized() {
            query.clone()
        } else {
            l2_normalize(query)?
        };
        let mut best: Option<(&IndexEntry, f64)> = None;
        for e in &self.entries {
            if submap.is_some_and(|s| s != e.submap_id) {
                continue;
            }
            let sim = dot(q.values(), &e.descriptor).clamp(-1.0, 1.0);
            let better = match best {
                None => true,
                Some((b, bs)) => sim > bs || (sim == bs && e.frame_id < b.frame_id),
            };
            if better {
                best = Some((e, sim));
            }
        }
        best.map(|(e, similarity)| RetrievalHit {
            frame_id: e.frame_id.clone(),
            similarity,
        })
        .ok_or_else(|| Error::NoReferenceInSubmap(submap.map(str::to_string)))
    }
}
