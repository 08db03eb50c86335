use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic square-root Hann, used for both analysis and synthesis.
    SqrtHann,
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let hann = |n: usize| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
        match self {
            WindowKind::SqrtHann => (0..len).map(|n| hann(n).sqrt()).collect(),
            WindowKind::Hann => (0..len).map(hann).collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// Complex short-time spectrum, `T` frames by `frame_len / 2 + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Array2<Complex64>,
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub window: WindowKind,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.ncols()
    }

    /// Same framing, new bin values.
    pub fn with_bins(&self, bins: Array2<Complex64>) -> Self {
        Self {
            bins,
            frame_len: self.frame_len,
            hop: self.hop,
            sample_rate: self.sample_rate,
            window: self.window,
        }
    }

    pub fn same_layout(&self, other: &Spectrogram) -> bool {
        self.bins.dim() == other.bins.dim()
            && self.frame_len == other.frame_len
            && self.hop == other.hop
            && self.window == other.window
    }

    fn check(&self) -> Result<()> {
        if self.hop == 0 || self.frame_len < self.hop {
            return Err(Error::Shape(format!(
                "inconsistent framing: frame_len={} hop={}",
                self.frame_len, self.hop
            )));
        }
        if self.num_bins() != self.frame_len / 2 + 1 {
            return Err(Error::Shape(format!(
                "{} bins do not match frame_len {}",
                self.num_bins(),
                self.frame_len
            )));
        }
        Ok(())
    }
}

pub fn stft(wave: &Waveform, frame_len: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    if hop == 0 || frame_len < hop {
        return Err(Error::Shape(format!(
            "need frame_len >= hop > 0, got frame_len={frame_len} hop={hop}"
        )));
    }
    if wave.len() < frame_len {
        return Err(Error::TooShort {
            needed: frame_len,
            got: wave.len(),
        });
    }
    let frames = 1 + (wave.len() - frame_len) / hop;
    let bins = frame_len / 2 + 1;
    let win = window.coefficients(frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame_len);
    let mut out = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for t in 0..frames {
        let seg = &wave.samples[t * hop..t * hop + frame_len];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (dst, src) in out.row_mut(t).iter_mut().zip(&buf) {
            *dst = *src;
        }
    }
    Ok(Spectrogram {
        bins: out,
        frame_len,
        hop,
        sample_rate: wave.sample_rate,
        window,
    })
}

/// Weighted overlap-add resynthesis.
///
/// Each inverse frame is multiplied by the synthesis window and the sum is
/// divided by the accumulated squared window, so any window/hop pair whose
/// squared window overlaps to a constant reconstructs its input exactly away
/// from the first and last `frame_len - hop` samples.
pub fn istft_overlap_add(spec: &Spectrogram) -> Result<Waveform> {
    spec.check()?;
    let n = spec.frame_len;
    let frames = spec.num_frames();
    let len = n + frames.saturating_sub(1) * spec.hop;
    let win = spec.window.coefficients(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let half = spec.num_bins();
    for t in 0..frames {
        let row = spec.bins.row(t);
        for k in 0..half {
            buf[k] = row[k];
        }
        for k in half..n {
            buf[k] = row[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * spec.hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * win[i];
            norm[start + i] += win[i] * win[i];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-10 {
            *o /= w;
        } else {
            *o = 0.0;
        }
    }
    Ok(Waveform::new(out, spec.sample_rate))
}
