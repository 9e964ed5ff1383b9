//! Vectors, raw records and the inner-product / norm kernels.
//!
//! Every inner product in the crate goes through [`dot`], which sums in a
//! fixed order (eight interleaved partial sums reduced by a fixed tree, then
//! the tail left to right). The order never depends on the caller, so the
//! serial engine, the parallel engine and the oracle all see bit-identical
//! values for the same pair of vectors.

use std::collections::HashSet;

use crate::error::{Error, Result};

const LANES: usize = 8;

/// A dense, finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(component) = components.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { record: 0, component });
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.0)
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

/// A raw `(id, vector)` pair as it comes out of a loader or generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub vector: Vector,
}

impl Record {
    pub fn new(id: u64, vector: Vector) -> Self {
        Self { id, vector }
    }

    /// Convenience constructor that validates `components`.
    pub fn from_components(id: u64, components: Vec<f64>) -> Result<Self> {
        Ok(Self::new(id, Vector::new(components)?))
    }
}

/// Inner product of two equal-length slices.
///
/// Lengths are only checked in debug builds; use [`inner_product`] at API
/// boundaries.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for lane in 0..LANES {
            acc[lane] += xa[lane] * xb[lane];
        }
    }
    let mut sum = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        sum += x * y;
    }
    sum
}

/// Checked inner product.
pub fn inner_product(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot(a, b))
}

#[inline]
pub fn euclidean_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Rounding-safe Cauchy–Schwarz upper bound for one dimensionality.
///
/// `upper(‖a‖, ‖b‖)` is guaranteed to be at least `dot(a, b)` as computed by
/// this module, even after accounting for the rounding error of [`dot`] and
/// of both norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBound {
    factor: f64,
}

impl NormBound {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            factor: 1.0 + (2 * dim + 8) as f64 * f64::EPSILON,
        }
    }

    #[inline]
    pub fn upper(&self, norm_a: f64, norm_b: f64) -> f64 {
        norm_a * norm_b * self.factor
    }
}

/// Validates a record set against a dimension: finite values, unique ids.
/// Returns the common dimension (or `expected` when the set is empty).
pub(crate) fn validate_records(records: &[Record], expected: Option<usize>) -> Result<Option<usize>> {
    let mut dim = expected;
    let mut seen = HashSet::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let found = record.vector.dim();
        match dim {
            Some(d) if d != found => {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
            None => dim = Some(found),
            _ => {}
        }
        if let Some(component) = record.vector.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { record: i, component });
        }
        if !seen.insert(record.id) {
            return Err(Error::DuplicateId(record.id));
        }
    }
    Ok(dim)
}
