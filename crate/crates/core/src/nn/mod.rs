//! Differentiable-network substrate.
//!
//! Networks are static graphs of primitive ops over a single flat
//! parameter vector with a stable layer ordering. Forward passes write
//! every node output into a per-call cache, so a shared network can serve
//! concurrent evaluations; backward passes replay the graph in reverse and
//! accumulate into a caller-owned gradient buffer. Everything is generic
//! over `f32`/`f64`: training runs in `f32`, finite-difference checks
//! instantiate `f64`.

pub mod backbone;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod segnet;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Element type of network parameters and activations.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum<Self> + 'static {
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    fn to_f64c(self) -> f64;

    fn write_le(values: &[Self], out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Option<Vec<Self>>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    fn to_f64c(self) -> f64 {
        self as f64
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 4 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    fn to_f64c(self) -> f64 {
        self
    }

    fn write_le(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Option<Vec<Self>> {
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                })
                .collect(),
        )
    }
}

/// Flattened view of all trainable parameters of a network, in the
/// network's stable layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<F>(pub Vec<F>);

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![F::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.0
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = (*a - *b).to_f64c();
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Sequential allocator assigning each layer a range in the flat
/// parameter vector.
#[derive(Debug, Default)]
pub struct ParamAlloc {
    len: usize,
}

impl ParamAlloc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, n: usize) -> std::ops::Range<usize> {
        let start = self.len;
        self.len += n;
        start..self.len
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Largest divisor of `channels` that is at most 8, used as the group
/// count for group normalization.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}
