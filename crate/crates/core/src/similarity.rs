//! Pairwise test similarity and condensed upper-triangle storage.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::VersionSuite;
use crate::embedding::{Embedding, EmbeddingError, EmbeddingSet};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("zero vector under cosine similarity{}", pair.map(|(i, j)| format!(" (pair {i}, {j})")).unwrap_or_default())]
    ZeroVector { pair: Option<(usize, usize)> },
    #[error("index order violated: expected i < j, got ({i}, {j})")]
    IndexOrder { i: usize, j: usize },
    #[error("index ({i}, {j}) out of range for {n} tests")]
    OutOfRange { i: usize, j: usize, n: usize },
    #[error("self-similarity ({0}, {0}) is not stored")]
    DiagonalAccess(usize),
    #[error("corrupt matrix file at byte {offset}: {reason}")]
    CorruptFile { offset: u64, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMeasure {
    #[serde(rename = "cos")]
    NormalizedCosine,
    #[serde(rename = "euc")]
    NormalizedEuclidean,
}

impl SimilarityMeasure {
    pub fn id(self) -> u8 {
        match self {
            Self::NormalizedCosine => 0,
            Self::NormalizedEuclidean => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Self::NormalizedCosine),
            1 => Some(Self::NormalizedEuclidean),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::NormalizedCosine => "cos",
            Self::NormalizedEuclidean => "euc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Some(Self::NormalizedCosine),
            "euc" | "euclidean" => Some(Self::NormalizedEuclidean),
            _ => None,
        }
    }

    pub fn compute(self, u: &Embedding, v: &Embedding) -> Result<f64, SimilarityError> {
        match self {
            Self::NormalizedCosine => norm_cosine(u, v),
            Self::NormalizedEuclidean => Ok(norm_euclidean(u, v)),
        }
    }
}

impl std::fmt::Display for SimilarityMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn squared_norm(u: &[f32]) -> f64 {
    u.iter().map(|&a| (a as f64) * (a as f64)).sum()
}

/// `sqrt(a * b)` rather than `sqrt(a) * sqrt(b)` so that `u == v` and
/// `v == -u` give a cosine of exactly ±1.
fn angular_from_parts(dot: f64, nu2: f64, nv2: f64) -> Result<f64, SimilarityError> {
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(SimilarityError::ZeroVector { pair: None });
    }
    let cos = (dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0);
    Ok(1.0 - cos.acos() / std::f64::consts::PI)
}

/// Normalized cosine similarity `1 - arccos(cos(u, v)) / pi`, in `[0, 1]`.
pub fn norm_cosine(u: &Embedding, v: &Embedding) -> Result<f64, SimilarityError> {
    let (u, v) = (u.as_slice(), v.as_slice());
    angular_from_parts(dot(u, v), squared_norm(u), squared_norm(v))
}

/// Normalized Euclidean similarity `1 / (1 + ||u - v||)`, in `(0, 1]`.
pub fn norm_euclidean(u: &Embedding, v: &Embedding) -> f64 {
    let d2: f64 = u
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    1.0 / (1.0 + d2.sqrt())
}

/// Flat position of pair `(i, j)`, `i < j`, in row-major upper-triangle order.
pub fn condensed_index(i: usize, j: usize, n: usize) -> Result<usize, SimilarityError> {
    if i >= j {
        return Err(SimilarityError::IndexOrder { i, j });
    }
    if j >= n {
        return Err(SimilarityError::OutOfRange { i, j, n });
    }
    Ok(unchecked_index(i, j, n))
}

#[inline]
fn unchecked_index(i: usize, j: usize, n: usize) -> usize {
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

pub fn condensed_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedSimilarityMatrix {
    n_tests: usize,
    measure: SimilarityMeasure,
    data: Vec<f64>,
    pub build_time_ms: f64,
}

impl CondensedSimilarityMatrix {
    /// Wraps precomputed condensed data. Every entry must lie in `[0, 1]`.
    pub fn from_condensed(
        n_tests: usize,
        measure: SimilarityMeasure,
        data: Vec<f64>,
    ) -> Result<Self, SimilarityError> {
        if n_tests == 0 || data.len() != condensed_len(n_tests) {
            return Err(SimilarityError::CorruptFile {
                offset: 0,
                reason: format!(
                    "expected {} entries for {n_tests} tests, got {}",
                    condensed_len(n_tests),
                    data.len()
                ),
            });
        }
        if let Some(k) = data.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(SimilarityError::CorruptFile {
                offset: k as u64,
                reason: format!("entry {} outside [0, 1]", data[k]),
            });
        }
        Ok(Self {
            n_tests,
            measure,
            data,
            build_time_ms: 0.0,
        })
    }

    /// Builds a matrix from a full symmetric similarity function; handy for
    /// synthetic fixtures.
    pub fn from_fn(
        n_tests: usize,
        measure: SimilarityMeasure,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, SimilarityError> {
        let mut data = Vec::with_capacity(condensed_len(n_tests));
        for i in 0..n_tests {
            for j in i + 1..n_tests {
                data.push(f(i, j));
            }
        }
        Self::from_condensed(n_tests, measure, data)
    }

    pub fn n_tests(&self) -> usize {
        self.n_tests
    }

    pub fn measure(&self) -> SimilarityMeasure {
        self.measure
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Result<f64, SimilarityError> {
        if i == j {
            return Err(SimilarityError::DiagonalAccess(i));
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if b >= self.n_tests {
            return Err(SimilarityError::OutOfRange {
                i,
                j,
                n: self.n_tests,
            });
        }
        Ok(self.data[unchecked_index(a, b, self.n_tests)])
    }

    /// Symmetric lookup without bounds or diagonal checks; the caller
    /// guarantees `i != j` and both `< n_tests`.
    #[inline]
    pub fn sim(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i != j && i < self.n_tests && j < self.n_tests);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.data[unchecked_index(a, b, self.n_tests)]
    }

    /// Binary dump: `"LTMS" | u32 N | u8 measure | N(N-1)/2 x f64`, little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SimilarityError> {
        w.write_all(b"LTMS")?;
        w.write_all(&(self.n_tests as u32).to_le_bytes())?;
        w.write_all(&[self.measure.id()])?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SimilarityError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let corrupt = |offset: usize, reason: &str| SimilarityError::CorruptFile {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if bytes.len() < 9 {
            return Err(corrupt(bytes.len(), "truncated header"));
        }
        if &bytes[..4] != b"LTMS" {
            return Err(corrupt(0, "bad magic"));
        }
        let n = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        let measure =
            SimilarityMeasure::from_id(bytes[8]).ok_or_else(|| corrupt(8, "unknown measure id"))?;
        let body = &bytes[9..];
        if body.len() != condensed_len(n) * 8 {
            return Err(corrupt(
                9 + body.len().min(condensed_len(n) * 8),
                "body length mismatch",
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        Self::from_condensed(n, measure, data)
    }
}

/// Computes every pair of the suite with `measure` in `f64`. Rows are
/// computed in parallel; each slot is written exactly once so the result is
/// independent of scheduling.
pub fn build_matrix(
    set: &EmbeddingSet,
    suite: &VersionSuite,
    measure: SimilarityMeasure,
) -> Result<CondensedSimilarityMatrix, SimilarityError> {
    let start = Instant::now();
    let vectors = set.aligned(suite)?;
    let mut m = build_from_vectors(&vectors, measure)?;
    m.build_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(m)
}

pub fn build_from_vectors(
    vectors: &[&Embedding],
    measure: SimilarityMeasure,
) -> Result<CondensedSimilarityMatrix, SimilarityError> {
    let n = vectors.len();
    let norms: Vec<f64> = match measure {
        SimilarityMeasure::NormalizedCosine => vectors
            .par_iter()
            .map(|v| squared_norm(v.as_slice()))
            .collect(),
        SimilarityMeasure::NormalizedEuclidean => Vec::new(),
    };
    if measure == SimilarityMeasure::NormalizedCosine && n >= 2 {
        if let Some(i) = norms.iter().position(|&x| x == 0.0) {
            let j = if i == 0 { 1 } else { 0 };
            return Err(SimilarityError::ZeroVector {
                pair: Some((i.min(j), i.max(j))),
            });
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| match measure {
                    SimilarityMeasure::NormalizedCosine => {
                        let d = dot(vectors[i].as_slice(), vectors[j].as_slice());
                        angular_from_parts(d, norms[i], norms[j])
                            .map_err(|_| SimilarityError::ZeroVector { pair: Some((i, j)) })
                    }
                    SimilarityMeasure::NormalizedEuclidean => {
                        Ok(norm_euclidean(vectors[i], vectors[j]))
                    }
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let mut data = Vec::with_capacity(condensed_len(n));
    for row in rows {
        data.extend(row);
    }
    Ok(CondensedSimilarityMatrix {
        n_tests: n.max(1),
        measure,
        data,
        build_time_ms: 0.0,
    })
}
