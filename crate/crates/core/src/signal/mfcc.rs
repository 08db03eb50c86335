use std::f64::consts::PI;

use ndarray::Array2;

use super::{stft, Waveform, WindowKind};
use crate::{Error, Result};

/// Energy floor applied to mel band energies before the logarithm.
const MEL_ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfccConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub mel_filters: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_len: 256,
            hop: 64,
            mel_filters: 23,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters spaced evenly on the mel scale from 0 Hz to Nyquist,
/// each normalised to unit total weight so a flat spectrum gives equal band
/// energies.
fn mel_filterbank(filters: usize, frame_len: usize, sample_rate: u32) -> Array2<f64> {
    let bins = frame_len / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (filters + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / frame_len as f64;
    let mut bank = Array2::zeros((filters, bins));
    for m in 0..filters {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = bin_hz(k);
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
        let total: f64 = bank.row(m).sum();
        if total > 0.0 {
            bank.row_mut(m).mapv_inplace(|w| w / total);
        }
    }
    bank
}

/// Log mel-band energies followed by an orthonormal DCT-II; returns the
/// first `num_coeffs` coefficients for every frame.
pub fn mfcc(wave: &Waveform, num_coeffs: usize, cfg: &MfccConfig) -> Result<Array2<f64>> {
    if num_coeffs == 0 || num_coeffs > cfg.mel_filters {
        return Err(Error::Config(format!(
            "num_coeffs {num_coeffs} must be in 1..={}",
            cfg.mel_filters
        )));
    }
    let spec = stft(wave, cfg.frame_len, cfg.hop, WindowKind::Hann)?;
    let bank = mel_filterbank(cfg.mel_filters, cfg.frame_len, wave.sample_rate);
    let power = spec.bins.mapv(|c| c.norm_sqr());
    let energies = power.dot(&bank.t());
    let m = cfg.mel_filters as f64;
    let dct = Array2::from_shape_fn((num_coeffs, cfg.mel_filters), |(k, n)| {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        scale * (PI * k as f64 * (n as f64 + 0.5) / m).cos()
    });
    let log_e = energies.mapv(|e| e.max(MEL_ENERGY_FLOOR).ln());
    Ok(log_e.dot(&dct.t()))
}

/// Per-row energy in dB, `10 log10(sum of squares)`.
pub fn frame_energies_db(features: &Array2<f64>) -> Vec<f64> {
    features
        .rows()
        .into_iter()
        .map(|r| 10.0 * (r.iter().map(|x| x * x).sum::<f64>() + 1e-30).log10())
        .collect()
}

/// Marks a frame as speech when its energy is within `threshold_db` of the
/// loudest frame. Never returns an all-false mask: if nothing passes, every
/// frame is kept.
pub fn energy_vad(features: &Array2<f64>, threshold_db: f64) -> Vec<bool> {
    let energies = frame_energies_db(features);
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut keep: Vec<bool> = energies.iter().map(|&e| e > max - threshold_db).collect();
    if !keep.iter().any(|&k| k) {
        keep.iter_mut().for_each(|k| *k = true);
    }
    keep
}
