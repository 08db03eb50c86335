use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{Parameters, TensorMut, TensorRef};
use crate::separation::{kmeans, KMeansConfig};
use crate::{Error, Result};

/// Smallest allowed diagonal variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Frames used to seed the mixture with k-means.
const INIT_SUBSAMPLE: usize = 5000;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Ubm {
    pub weights: Array1<f64>,
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

impl Ubm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components();
        if k == 0 || self.means.nrows() != k || self.variances.dim() != self.means.dim() {
            return Err(Error::Shape("inconsistent mixture dimensions".into()));
        }
        if self.weights.iter().any(|&w| w < 0.0) || (self.weights.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::Data("mixture weights must be non-negative and sum to 1".into()));
        }
        if self.variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Data("mixture variances must be positive".into()));
        }
        Ok(())
    }

    /// `T x K` matrix of `log(w_k) + log N(x_t; m_k, diag v_k)`.
    fn log_joint(&self, frames: ArrayView2<f64>) -> Array2<f64> {
        let k = self.components();
        let consts: Vec<f64> = (0..k)
            .map(|c| {
                self.weights[c].ln()
                    - 0.5
                        * self
                            .variances
                            .row(c)
                            .iter()
                            .map(|v| (2.0 * PI * v).ln())
                            .sum::<f64>()
            })
            .collect();
        let mut out = Array2::zeros((frames.nrows(), k));
        for (t, x) in frames.rows().into_iter().enumerate() {
            for c in 0..k {
                let m = self.means.row(c);
                let v = self.variances.row(c);
                let mut q = 0.0;
                for d in 0..x.len() {
                    let diff = x[d] - m[d];
                    q += diff * diff / v[d];
                }
                out[[t, c]] = consts[c] - 0.5 * q;
            }
        }
        out
    }

    /// Posterior component probabilities per frame (rows sum to one) and the
    /// total log-likelihood of `frames`.
    pub fn responsibilities(&self, frames: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
        if frames.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "frames have {} dims, mixture has {}",
                frames.ncols(),
                self.feature_dim()
            )));
        }
        let mut post = self.log_joint(frames);
        let mut total = 0.0;
        for mut row in post.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|l| (l - lse).exp());
            total += lse;
        }
        Ok((post, total))
    }

    pub fn log_likelihood(&self, frames: ArrayView2<f64>) -> Result<f64> {
        Ok(self.responsibilities(frames)?.1)
    }
}

impl Parameters for Ubm {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            TensorRef::vector("ubm.weights".into(), &self.weights),
            TensorRef::matrix("ubm.means".into(), &self.means),
            TensorRef::matrix("ubm.variances".into(), &self.variances),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Ubm {
            weights,
            means,
            variances,
        } = self;
        vec![
            TensorMut::vector("ubm.weights".into(), weights),
            TensorMut::matrix("ubm.means".into(), means),
            TensorMut::matrix("ubm.variances".into(), variances),
        ]
    }
}

fn m_step(frames: ArrayView2<f64>, post: &Array2<f64>) -> Ubm {
    let n = frames.nrows() as f64;
    let occ = post.sum_axis(Axis(0));
    let first = post.t().dot(&frames);
    let second = post.t().dot(&frames.mapv(|x| x * x));
    let k = occ.len();
    let d = frames.ncols();
    let global_mean = frames.mean_axis(Axis(0)).expect("non-empty");
    let mut means = Array2::zeros((k, d));
    let mut variances = Array2::zeros((k, d));
    let mut floored = 0;
    for c in 0..k {
        for j in 0..d {
            let (m, v) = if occ[c] > 0.0 {
                let m = first[[c, j]] / occ[c];
                (m, second[[c, j]] / occ[c] - m * m)
            } else {
                (global_mean[j], 1.0)
            };
            means[[c, j]] = m;
            if v < VARIANCE_FLOOR {
                floored += 1;
            }
            variances[[c, j]] = v.max(VARIANCE_FLOOR);
        }
    }
    if floored > 0 {
        log::warn!("variance floor applied to {floored} mixture dimensions");
    }
    let mut weights = occ / n;
    let total = weights.sum();
    weights /= total;
    Ubm {
        weights,
        means,
        variances,
    }
}

/// EM training of a `k`-component diagonal GMM, seeded by k-means on a
/// random subsample. Returns the model and the log-likelihood evaluated at
/// the start of every iteration and after the last.
pub fn train_ubm(frames: ArrayView2<f64>, k: usize, iters: usize, seed: u64) -> Result<(Ubm, Vec<f64>)> {
    let n = frames.nrows();
    if k == 0 || n < 2 * k {
        return Err(Error::Data(format!("{n} frames are too few for {k} components")));
    }
    if frames.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("non-finite feature frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subset: Vec<usize> = if n > INIT_SUBSAMPLE {
        let mut idx = sample(&mut rng, n, INIT_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sub = frames.select(Axis(0), &subset);
    let init = kmeans(sub.view(), k, seed, &KMeansConfig { restarts: 1, max_iter: 20 })?;
    let mut hard = Array2::zeros((sub.nrows(), k));
    for (t, &l) in init.labels.iter().enumerate() {
        hard[[t, l]] = 1.0;
    }
    let mut ubm = m_step(sub.view(), &hard);
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let (post, ll) = ubm.responsibilities(frames)?;
        history.push(ll);
        ubm = m_step(frames, &post);
    }
    history.push(ubm.log_likelihood(frames)?);
    if history.iter().any(|l| !l.is_finite()) {
        return Err(Error::Divergence("mixture log-likelihood is not finite".into()));
    }
    Ok((ubm, history))
}
