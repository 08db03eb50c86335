use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Per-bin unit-norm embeddings, row `t * F + f` for frame `t`, bin `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingField {
    pub v: Array2<f64>,
    pub frames: usize,
    pub bins: usize,
    /// Rows whose projection had zero norm and were replaced by `e_0`.
    pub degenerate: usize,
}

impl EmbeddingField {
    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    /// Wraps rows that are already unit length.
    pub fn from_rows(v: Array2<f64>, frames: usize, bins: usize) -> Result<Self> {
        if v.nrows() != frames * bins {
            return Err(Error::Shape(format!(
                "{} embedding rows for {frames}x{bins} bins",
                v.nrows()
            )));
        }
        if let Some(n) = v
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .find(|n| (n - 1.0).abs() > 1e-6)
        {
            return Err(Error::Data(format!("embedding row has norm {n}")));
        }
        Ok(Self {
            v,
            frames,
            bins,
            degenerate: 0,
        })
    }
}

/// Norms of the raw projection rows, kept for the backward pass. A zero
/// entry marks a degenerate row.
#[derive(Debug, Clone)]
pub struct EmbedCache {
    pub norms: Vec<f64>,
}

/// Reshapes a `T x (F*D)` projection into `T*F` rows of width `D` and
/// normalises every row.
pub fn embed(projected: ArrayView2<f64>, bins: usize, dim: usize) -> Result<(EmbeddingField, EmbedCache)> {
    let frames = projected.nrows();
    if dim == 0 || projected.ncols() != bins * dim {
        return Err(Error::Shape(format!(
            "projection width {} is not {bins} bins x {dim} dims",
            projected.ncols()
        )));
    }
    let mut v = projected
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((frames * bins, dim))
        .expect("row-major reshape");
    let mut norms = Vec::with_capacity(frames * bins);
    let mut degenerate = 0;
    for mut row in v.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 && n.is_finite() {
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        } else {
            row.fill(0.0);
            row[0] = 1.0;
            norms.push(0.0);
            degenerate += 1;
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} zero-norm embedding rows replaced by a basis vector");
    }
    Ok((
        EmbeddingField {
            v,
            frames,
            bins,
            degenerate,
        },
        EmbedCache { norms },
    ))
}

/// Gradient on the raw projection given the gradient on the normalised
/// rows. Degenerate rows pass no gradient.
pub fn embed_backward(field: &EmbeddingField, cache: &EmbedCache, d_v: ArrayView2<f64>) -> Result<Array2<f64>> {
    if d_v.dim() != field.v.dim() {
        return Err(Error::Shape("embedding gradient shape differs from field".into()));
    }
    let mut d_z = d_v.to_owned();
    for ((mut dz, v), &n) in d_z.axis_iter_mut(Axis(0)).zip(field.v.rows()).zip(&cache.norms) {
        if n == 0.0 {
            dz.fill(0.0);
            continue;
        }
        let proj = v.dot(&dz);
        dz.zip_mut_with(&v, |g, &vi| *g = (*g - vi * proj) / n);
    }
    Ok(d_z
        .into_shape_with_order((field.frames, field.bins * field.dim()))
        .expect("row-major reshape"))
}
