use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ubm::Ubm;
use super::IVector;
use crate::params::{Parameters, TensorMut, TensorRef};
use crate::{Error, Result};

/// Ridge added to a posterior precision that fails to factor.
const JITTER: f64 = 1e-8;

/// Zeroth-order occupancies and first-order statistics centred on the UBM
/// means, laid out component by component.
#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    pub n: Array1<f64>,
    pub f: Array1<f64>,
}

impl BaumWelchStats {
    pub fn frames(&self) -> f64 {
        self.n.sum()
    }
}

/// Sufficient statistics of `frames` (already VAD-filtered) under `ubm`.
pub fn baum_welch_stats(ubm: &Ubm, frames: ArrayView2<f64>) -> Result<BaumWelchStats> {
    if frames.nrows() == 0 {
        return Err(Error::Data("empty utterance".into()));
    }
    let (post, _) = ubm.responsibilities(frames)?;
    let n = post.sum_axis(ndarray::Axis(0));
    let first = post.t().dot(&frames);
    let (k, d) = (ubm.components(), ubm.feature_dim());
    let mut f = Array1::zeros(k * d);
    for c in 0..k {
        for j in 0..d {
            f[c * d + j] = first[[c, j]] - n[c] * ubm.means[[c, j]];
        }
    }
    Ok(BaumWelchStats { n, f })
}

/// Low-rank total-variability matrix, `K*d x dw`.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariability {
    pub t: Array2<f64>,
}

impl TotalVariability {
    pub fn dim(&self) -> usize {
        self.t.ncols()
    }
}

impl Parameters for TotalVariability {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![TensorRef::matrix("tv.t".into(), &self.t)]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![TensorMut::matrix("tv.t".into(), &mut self.t)]
    }
}

/// Pieces of the posterior of `w` for one utterance.
struct Posterior {
    precision: DMatrix<f64>,
    linear: DVector<f64>,
    cov: DMatrix<f64>,
    mean: DVector<f64>,
}

/// `T_k^T Sigma_k^-1 T_k` for every component.
fn component_products(ubm: &Ubm, tv: &TotalVariability) -> Vec<DMatrix<f64>> {
    let d = ubm.feature_dim();
    let dw = tv.dim();
    (0..ubm.components())
        .map(|c| {
            let mut m = DMatrix::zeros(dw, dw);
            for j in 0..d {
                let row = tv.t.row(c * d + j);
                let inv = 1.0 / ubm.variances[[c, j]];
                for p in 0..dw {
                    for q in 0..dw {
                        m[(p, q)] += row[p] * inv * row[q];
                    }
                }
            }
            m
        })
        .collect()
}

fn posterior(ubm: &Ubm, tv: &TotalVariability, products: &[DMatrix<f64>], stats: &BaumWelchStats) -> Result<Posterior> {
    let d = ubm.feature_dim();
    let dw = tv.dim();
    if stats.n.len() != ubm.components() || stats.f.len() != tv.t.nrows() {
        return Err(Error::Shape("statistics do not match the models".into()));
    }
    let mut precision = DMatrix::identity(dw, dw);
    for (c, prod) in products.iter().enumerate() {
        precision += prod * stats.n[c];
    }
    let mut linear = DVector::zeros(dw);
    for (i, row) in tv.t.rows().into_iter().enumerate() {
        let scaled = stats.f[i] / ubm.variances[[i / d, i % d]];
        for p in 0..dw {
            linear[p] += row[p] * scaled;
        }
    }
    let cov = match precision.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            log::warn!("posterior precision not positive definite, adding jitter");
            let jittered = &precision + DMatrix::identity(dw, dw) * JITTER;
            jittered
                .cholesky()
                .ok_or_else(|| Error::Divergence("posterior precision is singular".into()))?
                .inverse()
        }
    };
    let mean = &cov * &linear;
    Ok(Posterior {
        precision,
        linear,
        cov,
        mean,
    })
}

/// Marginal log-likelihood of the statistics up to terms that do not
/// depend on `T`: `-0.5 ln|L| + 0.5 b^T L^-1 b`.
fn likelihood_term(p: &Posterior) -> f64 {
    let logdet = p
        .precision
        .clone()
        .cholesky()
        .map(|ch| 2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
        .unwrap_or(f64::NAN);
    -0.5 * logdet + 0.5 * p.linear.dot(&p.mean)
}

/// EM for the factor model `M = m + T w`, `w ~ N(0, I)`. Returns the
/// matrix and the likelihood proxy before each iteration and after the last.
pub fn train_tv(ubm: &Ubm, stats: &[BaumWelchStats], dw: usize, iters: usize, seed: u64) -> Result<(TotalVariability, Vec<f64>)> {
    if dw == 0 {
        return Err(Error::Config("i-vector dimension must be positive".into()));
    }
    if stats.len() < dw {
        return Err(Error::Data(format!("{} utterances are too few for dimension {dw}", stats.len())));
    }
    let (k, d) = (ubm.components(), ubm.feature_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 0.1;
    let t = Array2::from_shape_fn((k * d, dw), |(i, _)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale * ubm.variances[[i / d, i % d]].sqrt()
    });
    let mut tv = TotalVariability { t };
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let products = component_products(ubm, &tv);
        let mut acc_c = DMatrix::<f64>::zeros(k * d, dw);
        let mut acc_a = vec![DMatrix::<f64>::zeros(dw, dw); k];
        let mut ll = 0.0;
        for s in stats {
            let p = posterior(ubm, &tv, &products, s)?;
            ll += likelihood_term(&p);
            let second = &p.cov + &p.mean * p.mean.transpose();
            for c in 0..k {
                acc_a[c] += &second * s.n[c];
            }
            for i in 0..k * d {
                for q in 0..dw {
                    acc_c[(i, q)] += s.f[i] * p.mean[q];
                }
            }
        }
        history.push(ll);
        let mut next = Array2::zeros((k * d, dw));
        for c in 0..k {
            let inv = acc_a[c]
                .clone()
                .cholesky()
                .map(|ch| ch.inverse())
                .or_else(|| (&acc_a[c] + DMatrix::identity(dw, dw) * JITTER).try_inverse())
                .ok_or_else(|| Error::Divergence("singular total-variability accumulator".into()))?;
            for j in 0..d {
                let i = c * d + j;
                let row = acc_c.row(i) * &inv;
                for q in 0..dw {
                    next[[i, q]] = row[q];
                }
            }
        }
        tv.t = next;
    }
    let products = component_products(ubm, &tv);
    let mut ll = 0.0;
    for s in stats {
        ll += likelihood_term(&posterior(ubm, &tv, &products, s)?);
    }
    history.push(ll);
    if !tv.t.iter().all(|x| x.is_finite()) {
        return Err(Error::Divergence("total-variability matrix is not finite".into()));
    }
    Ok((tv, history))
}

/// Posterior mean `(I + T^T Sigma^-1 N T)^-1 T^T Sigma^-1 F`.
pub fn extract_ivector(ubm: &Ubm, tv: &TotalVariability, stats: &BaumWelchStats) -> Result<IVector> {
    let products = component_products(ubm, tv);
    let p = posterior(ubm, tv, &products, stats)?;
    Ok(IVector {
        w: p.mean.iter().copied().collect(),
    })
}
