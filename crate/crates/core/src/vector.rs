//! Feature vectors and cosine similarity.

use alloc::string::String;
use alloc::vec::Vec;

/// Tolerance on the unit norm of a stored [`FeatureVector`].
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VectorError {
    #[error("vector lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("vector has a non-finite component at {0}")]
    NonFinite(usize),
    #[error("vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("vector is empty")]
    Empty,
}

/// An L2-normalized image embedding tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    model_id: String,
    values: Vec<f32>,
}

fn check_finite(values: &[f32]) -> Result<(), VectorError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(VectorError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Euclidean norm with 64-bit accumulation.
pub fn norm(values: &[f32]) -> f64 {
    libm::sqrt(values.iter().map(|&v| v as f64 * v as f64).sum())
}

/// Dot product with 64-bit accumulation, summed in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl FeatureVector {
    /// Normalizes a raw model activation.
    pub fn from_raw(model_id: impl Into<String>, mut values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        check_finite(&values)?;
        let n = norm(&values);
        if n == 0.0 || !n.is_finite() {
            return Err(VectorError::ZeroVector);
        }
        for v in &mut values {
            *v = (*v as f64 / n) as f32;
        }
        Ok(Self { model_id: model_id.into(), values })
    }

    /// Wraps values that are already unit length, e.g. read back from an index.
    pub fn from_unit(model_id: impl Into<String>, values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        check_finite(&values)?;
        let n = norm(&values);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(VectorError::NotNormalized(n));
        }
        Ok(Self { model_id: model_id.into(), values })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// `a . b / (|a| |b|)`, accumulated in 64 bits.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}
