use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::Spectrogram;
use crate::{Error, Result};

/// Standard deviation assigned to a bin whose training variance is zero.
pub const NORM_EPSILON: f64 = 1e-8;

/// Network input: one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub values: Array2<f64>,
    pub normalized: bool,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `max(log10|Y|, floor)` per bin, then per-bin standardisation when stats are given.
pub fn log_features(spec: &Spectrogram, floor: f64, stats: Option<&NormStats>) -> Result<FeatureSequence> {
    if !floor.is_finite() {
        return Err(Error::Config("log floor must be finite".into()));
    }
    let mut values = spec.bins.mapv(|c| c.norm().log10().max(floor));
    if let Some(stats) = stats {
        if stats.dim() != values.ncols() {
            return Err(Error::Shape(format!(
                "normalisation stats have {} bins, spectrogram has {}",
                stats.dim(),
                values.ncols()
            )));
        }
        for mut row in values.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(FeatureSequence {
        values,
        normalized: stats.is_some(),
    })
}

/// Per-bin mean and (population) standard deviation pooled over every frame
/// of every sequence, accumulated with Welford's update.
pub fn compute_norm_stats<'a, I>(features: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a FeatureSequence>,
{
    let mut count = 0usize;
    let mut mean: Vec<f64> = Vec::new();
    let mut m2: Vec<f64> = Vec::new();
    for seq in features {
        if mean.is_empty() {
            mean = vec![0.0; seq.dim()];
            m2 = vec![0.0; seq.dim()];
        } else if seq.dim() != mean.len() {
            return Err(Error::Shape(format!(
                "feature dimension {} differs from {}",
                seq.dim(),
                mean.len()
            )));
        }
        for row in seq.values.rows() {
            count += 1;
            let n = count as f64;
            for ((x, mu), acc) in row.iter().zip(mean.iter_mut()).zip(m2.iter_mut()) {
                let delta = x - *mu;
                *mu += delta / n;
                *acc += delta * (x - *mu);
            }
        }
    }
    if count == 0 {
        return Err(Error::Data("cannot compute normalisation stats of an empty collection".into()));
    }
    let mut degenerate = 0;
    let std = m2
        .iter()
        .map(|&acc| {
            let s = (acc / count as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                degenerate += 1;
                NORM_EPSILON
            }
        })
        .collect();
    if degenerate > 0 {
        log::warn!("{degenerate} feature bins have zero variance; std set to {NORM_EPSILON}");
    }
    Ok(NormStats { mean, std })
}

/// Per-source soft or binary masks, `S x T x F`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Array3<f64>,
}

impl MaskSet {
    /// Checks non-negativity and the per-bin partition of unity.
    pub fn new(masks: Array3<f64>) -> Result<Self> {
        if masks.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::Data("mask values must lie in [0, 1]".into()));
        }
        let sums = masks.sum_axis(Axis(0));
        if let Some(bad) = sums.iter().find(|s| (**s - 1.0).abs() > 1e-6) {
            return Err(Error::Data(format!("masks sum to {bad} in some bin, expected 1")));
        }
        Ok(Self { masks })
    }

    pub fn num_sources(&self) -> usize {
        self.masks.len_of(Axis(0))
    }
}

/// Hadamard product of each mask with the mixture spectrum.
pub fn apply_masks(masks: &MaskSet, mixture: &Spectrogram) -> Result<Vec<Spectrogram>> {
    let (_, t, f) = masks.masks.dim();
    if (t, f) != mixture.bins.dim() {
        return Err(Error::Shape(format!(
            "mask shape {t}x{f} does not match spectrogram {:?}",
            mixture.bins.dim()
        )));
    }
    Ok(masks
        .masks
        .outer_iter()
        .map(|m| {
            let mut bins = mixture.bins.clone();
            bins.zip_mut_with(&m, |y, &w| *y *= w);
            mixture.with_bins(bins)
        })
        .collect())
}
