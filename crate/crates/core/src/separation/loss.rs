use ndarray::{s, Array2, ArrayView2};

use crate::signal::Spectrogram;
use crate::{Error, Result};

/// One-hot dominant-source labels, one row per time-frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub u: Array2<f64>,
}

impl TargetMatrix {
    pub fn from_labels(labels: &[usize], sources: usize) -> Result<Self> {
        let mut u = Array2::zeros((labels.len(), sources));
        for (row, &l) in labels.iter().enumerate() {
            if l >= sources {
                return Err(Error::Data(format!("label {l} out of range for {sources} sources")));
            }
            u[[row, l]] = 1.0;
        }
        Ok(Self { u })
    }

    pub fn num_sources(&self) -> usize {
        self.u.ncols()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.u
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&x| x == 1.0).unwrap_or(0))
            .collect()
    }

    /// Rows for frames `start..end` of a `bins`-wide layout.
    pub fn frames(&self, bins: usize, start: usize, end: usize) -> Self {
        Self {
            u: self.u.slice(s![start * bins..end * bins, ..]).to_owned(),
        }
    }
}

/// Labels every bin with the source of largest energy; ties go to the
/// lowest source index.
pub fn build_targets(sources: &[Spectrogram]) -> Result<TargetMatrix> {
    let first = sources
        .first()
        .ok_or_else(|| Error::Data("no source spectrograms".into()))?;
    if sources.iter().any(|s| !s.same_layout(first)) {
        return Err(Error::Shape("source spectrograms differ in shape".into()));
    }
    let (t, f) = first.bins.dim();
    let mut u = Array2::zeros((t * f, sources.len()));
    for ti in 0..t {
        for fi in 0..f {
            let mut best = 0;
            let mut best_e = first.bins[[ti, fi]].norm_sqr();
            for (si, spec) in sources.iter().enumerate().skip(1) {
                let e = spec.bins[[ti, fi]].norm_sqr();
                if e > best_e {
                    best = si;
                    best_e = e;
                }
            }
            u[[ti * f + fi, best]] = 1.0;
        }
    }
    Ok(TargetMatrix { u })
}

fn frobenius_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

/// Squared Frobenius norm summed in ascending order, so any reordering of
/// the entries gives a bitwise identical result.
fn frobenius_sq_sorted(m: &Array2<f64>) -> f64 {
    let mut sq: Vec<f64> = m.iter().map(|x| x * x).collect();
    sq.sort_by(f64::total_cmp);
    sq.iter().sum()
}

/// `||V V^T - U U^T||_F^2` through `D x D`, `D x S` and `S x S` products,
/// and its gradient `4 (V (V^T V) - U (U^T V))` with respect to `V`.
pub fn dc_loss(v: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if v.nrows() != u.nrows() {
        return Err(Error::Shape(format!(
            "embedding has {} rows, targets have {}",
            v.nrows(),
            u.nrows()
        )));
    }
    let vtv = v.t().dot(&v);
    let vtu = v.t().dot(&u);
    let utu = u.t().dot(&u);
    let loss = frobenius_sq(&vtv) - 2.0 * frobenius_sq_sorted(&vtu) + frobenius_sq_sorted(&utu);
    let mut grad = v.dot(&vtv);
    grad -= &u.dot(&vtu.t());
    grad *= 4.0;
    Ok((loss.max(0.0), crate::params::standard(grad)))
}
