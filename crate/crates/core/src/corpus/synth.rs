use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::signal::{quantized, Waveform, SAMPLE_RATE};

/// Reference vowel formants (F1, F2, F3) in Hz before speaker scaling.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [440.0, 1020.0, 2240.0],
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
];

const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];

/// Samples between envelope updates.
const CONTROL_STEP: usize = 32;

/// Target RMS of a synthesised utterance.
pub const UTTERANCE_RMS: f64 = 0.1;

/// A randomised source-filter voice.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub f0_min: f64,
    pub f0_max: f64,
    /// Per-vowel formant frequencies after speaker scaling.
    pub formants: Vec<[f64; 3]>,
    /// Spectral tilt of the glottal source in dB per octave (negative).
    pub tilt_db_per_octave: f64,
    /// Relative level of the aspiration noise mixed into voiced frames.
    pub breathiness: f64,
}

impl Voice {
    /// A voice with F0 centred somewhere in 90..230 Hz and vocal-tract
    /// scaling in 0.85..1.2.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let centre = rng.random_range(90.0..230.0);
        let spread = rng.random_range(1.15..1.35);
        Self::with_pitch(centre / spread, centre * spread, rng)
    }

    pub fn with_pitch<R: Rng>(f0_min: f64, f0_max: f64, rng: &mut R) -> Self {
        let scale = rng.random_range(0.85..1.2);
        let formants = VOWELS
            .iter()
            .map(|v| {
                let mut f = [0.0; 3];
                for i in 0..3 {
                    f[i] = (v[i] * scale * rng.random_range(0.92..1.08)).min(3800.0);
                }
                f
            })
            .collect();
        Self {
            f0_min,
            f0_max,
            formants,
            tilt_db_per_octave: rng.random_range(-13.0..-9.0),
            breathiness: rng.random_range(0.01..0.05),
        }
    }
}

struct Segment {
    len: usize,
    f0: f64,
    vowel: usize,
    level: f64,
}

fn envelope(freq: f64, formants: &[f64; 3], tilt: f64) -> f64 {
    let mut e = 0.0;
    for (i, &fi) in formants.iter().enumerate() {
        let x = (freq - fi) / BANDWIDTHS[i];
        e += 1.0 / (1.0 + x * x) / (i + 1) as f64;
    }
    let octaves = (freq / 100.0).max(1e-3).log2();
    e * 10f64.powf(tilt * octaves / 20.0)
}

/// Voiced phone-like segments of 50-200 ms with pauses, rendered by
/// additive synthesis under a formant envelope, normalised to
/// [`UTTERANCE_RMS`] and rounded to 16-bit values.
pub fn synth_utterance<R: Rng>(voice: &Voice, seconds: f64, rng: &mut R) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let total = (seconds * fs).round() as usize;
    let mut segments = Vec::new();
    let mut filled = 0;
    while filled < total {
        let len = ((rng.random_range(0.05..0.2) * fs) as usize).min(total - filled);
        let pause = rng.random::<f64>() < 0.1;
        segments.push(Segment {
            len,
            f0: rng.random_range(voice.f0_min..voice.f0_max),
            vowel: rng.random_range(0..voice.formants.len()),
            level: if pause { 0.0 } else { rng.random_range(0.5..1.0) },
        });
        filled += len;
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let glide = (-1.0 / (0.015 * fs)).exp();
    let mut out = Vec::with_capacity(total);
    let mut f0 = segments[0].f0;
    let mut level = segments[0].level;
    let mut formants = voice.formants[segments[0].vowel];
    let mut phase = 0.0;
    let mut amps: Vec<f64> = Vec::new();
    for seg in &segments {
        let target = voice.formants[seg.vowel];
        for n in 0..seg.len {
            f0 = glide * f0 + (1.0 - glide) * seg.f0;
            level = glide * level + (1.0 - glide) * seg.level;
            for i in 0..3 {
                formants[i] = glide * formants[i] + (1.0 - glide) * target[i];
            }
            if n % CONTROL_STEP == 0 || amps.is_empty() {
                let harmonics = ((fs / 2.0 - 100.0) / f0).floor().max(1.0) as usize;
                amps = (1..=harmonics)
                    .map(|k| envelope(k as f64 * f0, &formants, voice.tilt_db_per_octave))
                    .collect();
            }
            phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
            let harmonic_sum: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                .sum();
            let aspiration = voice.breathiness * noise.sample(rng);
            out.push(level * (harmonic_sum + aspiration));
        }
    }
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / out.len().max(1) as f64).sqrt();
    let mut gain = if rms > 0.0 { UTTERANCE_RMS / rms } else { 1.0 };
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs())) * gain;
    if peak > 0.9 {
        gain *= 0.9 / peak;
    }
    // A faint noise floor keeps every bin above the log floor.
    let floor = UTTERANCE_RMS * 1e-3;
    let samples = out
        .into_iter()
        .map(|x| quantized(x * gain + floor * noise.sample(rng)))
        .collect();
    Waveform::new(samples, SAMPLE_RATE)
}
