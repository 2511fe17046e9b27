//! Vector primitives for the shared latent space: normalization, cosine
//! similarity, batch similarity matrices.
//!
//! All latent-space math is 64-bit; gradient checks against finite
//! differences depend on double precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// L2 norms below this are treated as degenerate encoder output.
pub const MIN_NORM: f64 = 1e-30;

/// A vector in the shared latent space. Values produced by [`l2_normalize`]
/// (and by the frozen encoders) have unit Euclidean norm within 1e-12.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Wrap raw values without rescaling.
    pub fn new(values: Vec<f64>) -> Self {
        Embedding { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Scale `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Embedding> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < MIN_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(Embedding {
        values: v.iter().map(|x| x / norm).collect(),
    })
}

/// Cosine similarity dot(a,b)/(|a||b|), clamped to [-1, 1] so downstream
/// exp/log never sees rounding overshoot. For unit inputs this is the dot
/// product.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na < MIN_NORM || nb < MIN_NORM {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Row-major N x M matrix of cosine similarities.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}

/// entry(i, j) = cosine_similarity(queries[i], candidates[j]).
pub fn similarity_matrix(
    queries: &[Embedding],
    candidates: &[Embedding],
) -> Result<SimilarityMatrix> {
    if queries.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = queries[0].dim();
    for e in queries.iter().chain(candidates.iter()) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
    }
    let mut entries = Vec::with_capacity(queries.len() * candidates.len());
    for q in queries {
        for c in candidates {
            entries.push(cosine_similarity(q, c)?);
        }
    }
    Ok(SimilarityMatrix {
        rows: queries.len(),
        cols: candidates.len(),
        entries,
    })
}
