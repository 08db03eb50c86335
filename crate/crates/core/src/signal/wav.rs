//! Mono WAV I/O at the toolkit's fixed sample rate: 16-bit PCM for corpora,
//! 32-bit float for separated sources.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let reject = |reason: String| Error::AudioFormat {
        path: path.to_path_buf(),
        reason,
    };
    if spec.channels != 1 {
        return Err(reject(format!("{} channels, expected mono", spec.channels)));
    }
    let float = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => false,
        (hound::SampleFormat::Float, 32) => true,
        (format, bits) => {
            return Err(reject(format!(
                "{format:?} {bits}-bit samples, expected 16-bit PCM or 32-bit float"
            )))
        }
    };
    if spec.sample_rate != SAMPLE_RATE {
        return Err(reject(format!(
            "sample rate {} Hz, expected {SAMPLE_RATE} Hz (resampling is not supported)",
            spec.sample_rate
        )));
    }
    let samples = if float {
        reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?
    } else {
        reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / FULL_SCALE))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Quantises to 16 bits with clipping at full scale.
pub fn quantize(sample: f64) -> i16 {
    (sample * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// The value a sample will have after a write/read round trip.
pub fn quantized(sample: f64) -> f64 {
    quantize(sample) as f64 / FULL_SCALE
}

fn create(path: &Path, wave: &Waveform, bits: u16, format: hound::SampleFormat) -> Result<hound::WavWriter<std::io::BufWriter<std::fs::File>>> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::AudioFormat {
            path: path.to_path_buf(),
            reason: format!("refusing to write {} Hz audio", wave.sample_rate),
        });
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: bits,
        sample_format: format,
    };
    hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })
}

/// Writes 16-bit PCM, clipping at full scale.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let mut writer = create(path, wave, 16, hound::SampleFormat::Int)?;
    for &s in &wave.samples {
        writer.write_sample(quantize(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes 32-bit float samples without clipping.
pub fn write_wav_f32(path: &Path, wave: &Waveform) -> Result<()> {
    let mut writer = create(path, wave, 32, hound::SampleFormat::Float)?;
    for &s in &wave.samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}
