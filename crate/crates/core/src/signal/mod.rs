//! Time-frequency analysis and feature extraction.
//!
//! Everything in here is a pure function of its inputs. The default framing is
//! a 32 ms square-root Hann window with an 8 ms hop at 8 kHz, which gives
//! 129 frequency bins and satisfies the constant-overlap-add condition for
//! analysis followed by synthesis with the same window.

mod features;
mod mfcc;
mod stft;
pub mod wav;

use serde::{Deserialize, Serialize};

pub use features::{
    apply_masks, compute_norm_stats, log_features, FeatureSequence, MaskSet, NormStats,
    NORM_EPSILON,
};
pub use mfcc::{energy_vad, frame_energies_db, mfcc, MfccConfig};
pub use stft::{istft_overlap_add, stft, Spectrogram, WindowKind};
pub use wav::{quantized, read_wav, write_wav, write_wav_f32};

/// Sample rate of every waveform the toolkit reads or writes.
pub const SAMPLE_RATE: u32 = 8000;

/// Lower bound applied to decimal log-magnitudes.
pub const LOG_FLOOR: f64 = -300.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}

/// Framing and feature settings shared by training, separation and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub log_floor: f64,
    pub vad_threshold_db: f64,
    pub mfcc_coeffs: usize,
    pub mel_filters: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            frame_len: 256,
            hop: 64,
            window: WindowKind::SqrtHann,
            log_floor: LOG_FLOOR,
            vad_threshold_db: 40.0,
            mfcc_coeffs: 13,
            mel_filters: 23,
        }
    }
}

impl SignalConfig {
    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.sample_rate == 0 {
            return Err(crate::Error::Config("sample_rate must be positive".into()));
        }
        if self.hop == 0 || self.frame_len < self.hop {
            return Err(crate::Error::Config(format!(
                "need frame_len >= hop > 0, got frame_len={} hop={}",
                self.frame_len, self.hop
            )));
        }
        if self.frame_len % 2 != 0 {
            return Err(crate::Error::Config("frame_len must be even".into()));
        }
        if !self.log_floor.is_finite() {
            return Err(crate::Error::Config("log_floor must be finite".into()));
        }
        if self.mfcc_coeffs == 0 || self.mfcc_coeffs > self.mel_filters {
            return Err(crate::Error::Config(
                "mfcc_coeffs must be in 1..=mel_filters".into(),
            ));
        }
        Ok(())
    }

    pub fn mfcc_config(&self) -> MfccConfig {
        MfccConfig {
            frame_len: self.frame_len,
            hop: self.hop,
            mel_filters: self.mel_filters,
        }
    }
}
