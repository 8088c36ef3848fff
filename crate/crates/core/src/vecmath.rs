//! Dense vector primitives.

use std::ops::Deref;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Norms at or below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embedding<T>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        Embedding(values)
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Embedding(values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.as_f64()).collect()
    }

    /// Unit-norm copy of this vector.
    pub fn normalized(&self) -> Result<Self> {
        l2_normalize(&self.0).map(Embedding)
    }
}

impl<T> Deref for Embedding<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> AsRef<[T]> for Embedding<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar> From<Vec<T>> for Embedding<T> {
    fn from(values: Vec<T>) -> Self {
        Embedding(values)
    }
}

// Serialized through f64 so f32 catalogs share the same wire format.
impl<T: Scalar> Serialize for Embedding<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter().map(|v| v.as_f64()))
    }
}

impl<'de, T: Scalar> Deserialize<'de> for Embedding<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        Ok(Embedding::from_f64(&raw))
    }
}

/// Cosine similarity, kept within `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Similarity(f64);

impl Similarity {
    /// Wraps a raw score. Values are not clamped; callers that build scores
    /// from something other than [`cosine`] own their range.
    pub const fn new(value: f64) -> Self {
        Similarity(value)
    }

    pub const fn get(self) -> f64 {
        self.0
    }
}

impl From<Similarity> for f64 {
    fn from(s: Similarity) -> f64 {
        s.0
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum()
}

/// Returns `v / ‖v‖₂`.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = l2_norm(v);
    if !(norm > ZERO_NORM_EPS) {
        return Err(Error::ZeroVector {
            record: "vector".into(),
        });
    }
    Ok(v.iter()
        .map(|x| T::from_f64_lossy(x.as_f64() / norm))
        .collect())
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<Similarity> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if !(na > ZERO_NORM_EPS) || !(nb > ZERO_NORM_EPS) {
        return Err(Error::ZeroVector {
            record: "cosine operand".into(),
        });
    }
    Ok(Similarity((dot(a, b) / (na * nb)).clamp(-1.0, 1.0)))
}

/// `log Σ exp(x_i)` without overflow. Empty input gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        assert!(close(&l2_normalize(&[3.0, 4.0]).unwrap(), &[0.6, 0.8], 1e-15));
        assert_eq!(l2_normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(
            l2_normalize(&[-2.0, 0.0, 0.0]).unwrap(),
            vec![-1.0, 0.0, 0.0]
        );
        let n = l2_normalize(&[0.3, -1.7, 2.2, 9.0]).unwrap();
        assert!((l2_norm(&n) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            l2_normalize(&[0.0f64; 4]),
            Err(Error::ZeroVector { .. })
        ));
        assert!(l2_normalize(&[1e-13f64, 0.0]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap().get(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap().get(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap().get();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn f32_storage_accumulates_in_f64() {
        let v: Vec<f32> = (0..384).map(|i| ((i * 37) % 11) as f32 - 5.0).collect();
        let n = l2_normalize(&v).unwrap();
        assert!((l2_norm(&n) - 1.0).abs() < 1e-6);
        assert!((cosine(&n, &v).unwrap().get() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn embedding_serializes_as_plain_array() {
        let e = Embedding::<f32>::new(vec![0.5, -1.0]);
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, "[0.5,-1.0]");
        let back: Embedding<f32> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..24).prop_flat_map(|d| {
                (
                    prop::collection::vec(-10.0f64..10.0, d),
                    prop::collection::vec(-10.0f64..10.0, d),
                )
            })
        }

        proptest! {
            #[test]
            fn cosine_is_symmetric_and_bounded((a, b) in vec_pair()) {
                prop_assume!(l2_norm(&a) > 1e-6 && l2_norm(&b) > 1e-6);
                let ab = cosine(&a, &b).unwrap().get();
                let ba = cosine(&b, &a).unwrap().get();
                prop_assert!((ab - ba).abs() <= 1e-15);
                prop_assert!(ab.abs() <= 1.0 + 1e-9);
            }

            #[test]
            fn cosine_scale_invariant((a, _b) in vec_pair(), c in 0.01f64..100.0) {
                prop_assume!(l2_norm(&a) > 1e-6);
                let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
                prop_assert!((cosine(&a, &scaled).unwrap().get() - 1.0).abs() <= 1e-9);
            }

            #[test]
            fn unit_cosine_equals_dot((a, b) in vec_pair()) {
                prop_assume!(l2_norm(&a) > 1e-6 && l2_norm(&b) > 1e-6);
                let (ua, ub) = (l2_normalize(&a).unwrap(), l2_normalize(&b).unwrap());
                prop_assert!((cosine(&ua, &ub).unwrap().get() - dot(&ua, &ub)).abs() <= 1e-9);
            }

            #[test]
            fn normalize_is_idempotent((a, _b) in vec_pair()) {
                prop_assume!(l2_norm(&a) > 1e-6);
                let once = l2_normalize(&a).unwrap();
                let twice = l2_normalize(&once).unwrap();
                prop_assert!(close(&once, &twice, 1e-9));
            }
        }
    }
}
