//! Named flat views over model parameters.
//!
//! Optimisers, gradient checks and checkpoints all walk parameters through
//! these views. Tensor order is fixed by each model's traversal, so two
//! models with the same configuration list the same names in the same order.

use ndarray::{Array1, Array2};

/// Returns `a` in row-major layout, copying only if needed. Matrix
/// products may hand back column-major results.
pub fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

impl<'a> TensorRef<'a> {
    pub fn matrix(name: String, m: &'a Array2<f64>) -> Self {
        Self {
            name,
            shape: m.shape().to_vec(),
            data: m.as_slice().expect("parameters are stored in standard layout"),
        }
    }

    pub fn vector(name: String, v: &'a Array1<f64>) -> Self {
        Self {
            name,
            shape: vec![v.len()],
            data: v.as_slice().expect("parameters are stored in standard layout"),
        }
    }
}

pub struct TensorMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

impl<'a> TensorMut<'a> {
    pub fn matrix(name: String, m: &'a mut Array2<f64>) -> Self {
        Self {
            name,
            data: m.as_slice_mut().expect("parameters are stored in standard layout"),
        }
    }

    pub fn vector(name: String, v: &'a mut Array1<f64>) -> Self {
        Self {
            name,
            data: v.as_slice_mut().expect("parameters are stored in standard layout"),
        }
    }
}

/// A collection of trainable tensors. Gradients use the same type.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`, tensor by tensor. Both sides must share a layout.
    fn accumulate(&mut self, other: &Self) {
        let src = other.tensors();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "parameter layouts differ");
        for (d, s) in dst.into_iter().zip(src) {
            for (a, b) in d.data.iter_mut().zip(s.data) {
                *a += b;
            }
        }
    }

    /// Order-sensitive fingerprint of every scalar's bit pattern (FNV-1a).
    fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for b in t.name.bytes() {
                hash = (hash ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
            for v in t.data {
                for b in v.to_bits().to_le_bytes() {
                    hash = (hash ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }
}
