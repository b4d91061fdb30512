//! Flat parameter vectors.
//!
//! Models, client updates and gradients all share one representation: a
//! dense `f64` vector in a fixed layout defined by the model spec. Keeping
//! a single layout means aggregation, checkpointing and influence scoring
//! never have to translate between shapes.

use crate::error::{Error, Result};

/// A dense parameter (or update, or gradient) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    /// All-zero vector of the given length.
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// Element-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Element-wise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Self {
        ParamVector(self.0.iter().map(|a| a * c).collect())
    }

    /// In-place `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: f64) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
        Ok(())
    }

    /// Inner product.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm.
    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Narrows to `f32` for storage. Each entry rounds to nearest.
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&a| a as f32).collect()
    }

    /// Widens stored `f32` values back to `f64` (exact).
    pub fn from_f32(v: &[f32]) -> Self {
        ParamVector(v.iter().map(|&a| a as f64).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_round_trip() {
        let a = ParamVector(vec![1.0, 2.0, 3.0]);
        let b = ParamVector(vec![0.5, -1.0, 2.0]);
        assert_eq!(a.add(&b).unwrap().0, vec![1.5, 1.0, 5.0]);
        assert_eq!(a.sub(&b).unwrap().0, vec![0.5, 3.0, 1.0]);
        assert_eq!(a.scale(2.0).0, vec![2.0, 4.0, 6.0]);
        assert_eq!(a.dot(&b).unwrap(), 0.5 - 2.0 + 6.0);
    }

    #[test]
    fn norm_of_unit_vector() {
        let v = ParamVector(vec![0.6, 0.8]);
        assert!((v.l2_norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = ParamVector(vec![1.0]);
        let b = ParamVector(vec![1.0, 2.0]);
        assert!(a.dot(&b).is_err());
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn f32_narrowing_round_trips_through_f64() {
        let a = ParamVector(vec![0.1, -1.5, 1e-20, 3.7e8]);
        let narrowed = a.to_f32();
        let widened = ParamVector::from_f32(&narrowed);
        // Widening is exact, so narrowing again gives identical bits.
        assert_eq!(widened.to_f32(), narrowed);
    }
}
