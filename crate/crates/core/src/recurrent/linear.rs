use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::params::{standard, TensorMut, TensorRef};
use crate::{Error, Result};

/// Affine map applied to every frame: `y = W x + b`, `W` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-bound..bound)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Rows of `x` are frames.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut y = standard(x.dot(&self.w.t()));
        y += &self.b;
        Ok(y)
    }

    /// Returns `(grads, d_x)` for upstream gradient `d_y`.
    pub fn backward(&self, x: ArrayView2<f64>, d_y: ArrayView2<f64>) -> (Linear, Array2<f64>) {
        let grads = Linear {
            w: standard(d_y.t().dot(&x)),
            b: d_y.sum_axis(Axis(0)),
        };
        (grads, standard(d_y.dot(&self.w)))
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef::matrix(format!("{prefix}.w"), &self.w));
        out.push(TensorRef::vector(format!("{prefix}.b"), &self.b));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        let Linear { w, b } = self;
        out.push(TensorMut::matrix(format!("{prefix}.w"), w));
        out.push(TensorMut::vector(format!("{prefix}.b"), b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_and_backward_by_hand() {
        let l = Linear {
            w: array![[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]],
            b: array![0.5, 0.0, -1.0],
        };
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = l.forward(x.view()).unwrap();
        assert_eq!(y, array![[3.5, -1.0, 3.0], [2.5, 0.0, 5.0]]);
        let dy = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let (g, dx) = l.backward(x.view(), dy.view());
        assert_eq!(g.w, array![[1.0, 1.0], [0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(g.b, array![1.0, 0.0, 1.0]);
        assert_eq!(dx, array![[1.0, 2.0], [3.0, 1.0]]);
        assert!(l.forward(array![[1.0]].view()).is_err());
    }
}
