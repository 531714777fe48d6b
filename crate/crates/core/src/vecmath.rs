//! Vector arithmetic for embedding retrieval.
//!
//! Everything here is pure and allocation-light: cosine similarity,
//! normalization, the reference + difference update used by comparative
//! queries, centroids, and exhaustive nearest-neighbour retrieval over a
//! small labelled candidate set.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest number of scents a catalogue can hold.
pub const MAX_SCENT_ID: u8 = 20;

/// Tolerance on `| ‖v‖ − 1 |` for vectors held in an embedding store.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VecError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("description cancels reference: reference + difference is the zero vector")]
    DegenerateSum,
    #[error("vector must have at least one coordinate")]
    Empty,
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("no candidates left to retrieve from")]
    NoCandidates,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("scent id {0} outside 1..={MAX_SCENT_ID}")]
    InvalidScentId(u32),
}

/// Identifier of a catalogue scent, `1..=20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ScentId(u8);

impl ScentId {
    pub fn new(id: u32) -> Result<Self, VecError> {
        if (1..=MAX_SCENT_ID as u32).contains(&id) {
            Ok(ScentId(id as u8))
        } else {
            Err(VecError::InvalidScentId(id))
        }
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }

    /// All ids `1..=20` in ascending order.
    pub fn all() -> impl Iterator<Item = ScentId> {
        (1..=MAX_SCENT_ID).map(ScentId)
    }

    /// Zero-based position, handy for indexing 20-wide tables.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u32> for ScentId {
    type Error = VecError;
    fn try_from(value: u32) -> Result<Self, Self::Error> {
        ScentId::new(value)
    }
}

impl From<ScentId> for u32 {
    fn from(id: ScentId) -> u32 {
        id.get()
    }
}

impl fmt::Display for ScentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VecError> {
        if values.is_empty() {
            return Err(VecError::Empty);
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(VecError::NonFinite(i));
        }
        Ok(EmbeddingVector(values))
    }

    /// Unit basis vector `e_axis` in `dims` dimensions.
    pub fn basis(dims: usize, axis: usize) -> Self {
        assert!(axis < dims, "axis {axis} out of range for {dims} dims");
        let mut v = vec![0.0; dims];
        v[axis] = 1.0;
        EmbeddingVector(v)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn is_unit(&self, tolerance: f64) -> bool {
        (self.norm() - 1.0).abs() <= tolerance
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64, VecError> {
        check_dims(self, other)?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, VecError> {
        EmbeddingVector::new(self.0.iter().map(|x| x * factor).collect())
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Vec<f64> {
        v.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VecError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

/// Best-scoring candidate for a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredMatch {
    pub scent_id: ScentId,
    pub score: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), VecError> {
    if a.dims() != b.dims() {
        return Err(VecError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// `(a·b) / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VecError> {
    check_dims(a, b)?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(VecError::ZeroNorm);
    }
    // Multiply the norms first so the expression is symmetric in (a, b).
    let cos = dot(&a.0, &b.0) / (na * nb);
    Ok(cos.clamp(-1.0, 1.0))
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, VecError> {
    let n = v.norm();
    if n == 0.0 {
        return Err(VecError::ZeroNorm);
    }
    Ok(EmbeddingVector(v.0.iter().map(|x| x / n).collect()))
}

/// Moves a reference vector by a difference vector and projects the result
/// back onto the unit sphere: `(ref + diff) / ‖ref + diff‖`.
pub fn combine_reference_diff(
    reference: &EmbeddingVector,
    diff: &EmbeddingVector,
) -> Result<EmbeddingVector, VecError> {
    check_dims(reference, diff)?;
    let sum: Vec<f64> = reference.0.iter().zip(&diff.0).map(|(r, d)| r + d).collect();
    let sum = EmbeddingVector(sum);
    normalize(&sum).map_err(|_| VecError::DegenerateSum)
}

/// Coordinate-wise mean. The result is not re-normalized.
pub fn centroid(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, VecError> {
    let first = vectors.first().ok_or(VecError::NoCandidates)?;
    let mut acc = vec![0.0; first.dims()];
    for v in vectors {
        check_dims(first, v)?;
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    EmbeddingVector::new(acc)
}

fn ranked<'a, I>(
    query: &EmbeddingVector,
    candidates: I,
    exclude: &BTreeSet<ScentId>,
) -> Result<Vec<ScoredMatch>, VecError>
where
    I: IntoIterator<Item = (ScentId, &'a EmbeddingVector)>,
{
    let mut scored = Vec::new();
    for (id, v) in candidates {
        if exclude.contains(&id) {
            continue;
        }
        scored.push(ScoredMatch {
            scent_id: id,
            score: cosine_similarity(query, v)?,
        });
    }
    if scored.is_empty() {
        return Err(VecError::NoCandidates);
    }
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.scent_id.cmp(&b.scent_id))
    });
    Ok(scored)
}

/// The non-excluded candidate with the highest cosine similarity to `query`.
/// Equal scores resolve to the lowest scent id.
pub fn retrieve_best<'a, I>(
    query: &EmbeddingVector,
    candidates: I,
    exclude: &BTreeSet<ScentId>,
) -> Result<ScoredMatch, VecError>
where
    I: IntoIterator<Item = (ScentId, &'a EmbeddingVector)>,
{
    let mut best: Option<ScoredMatch> = None;
    for (id, v) in candidates {
        if exclude.contains(&id) {
            continue;
        }
        let score = cosine_similarity(query, v)?;
        let better = match best {
            None => true,
            Some(b) => score > b.score || (score == b.score && id < b.scent_id),
        };
        if better {
            best = Some(ScoredMatch { scent_id: id, score });
        }
    }
    best.ok_or(VecError::NoCandidates)
}

/// Up to `k` candidates in descending score order, ties by ascending id.
pub fn retrieve_top_k<'a, I>(
    query: &EmbeddingVector,
    candidates: I,
    k: usize,
    exclude: &BTreeSet<ScentId>,
) -> Result<Vec<ScoredMatch>, VecError>
where
    I: IntoIterator<Item = (ScentId, &'a EmbeddingVector)>,
{
    if k == 0 {
        return Err(VecError::ZeroK);
    }
    let mut all = ranked(query, candidates, exclude)?;
    all.truncate(k);
    Ok(all)
}
