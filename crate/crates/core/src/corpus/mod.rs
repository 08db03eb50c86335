//! Two-speaker mixtures: construction, a synthetic speaker corpus,
//! CSV manifests and ingestion of user-supplied WAV collections.

mod manifest;
mod synth;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use manifest::{
    ingest_wav_corpus, load_manifest, plan_mixtures, save_manifest, synth_speaker_corpus, DatasetManifest, ManifestRow,
    Split, Utterance,
};
pub use synth::{synth_utterance, Voice, UTTERANCE_RMS};

use crate::signal::Waveform;
use crate::{Error, Result};

/// A mixture and the gained, truncated sources that sum to it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    pub sources: Vec<Waveform>,
    pub gains_db: Vec<f64>,
    pub speaker_ids: Vec<String>,
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Scales each utterance by its gain, truncates all of them to the shortest
/// and sums them.
pub fn mix_utterances(utterances: &[&Waveform], gains_db: &[f64], speaker_ids: &[String]) -> Result<MixtureSample> {
    if utterances.is_empty() || utterances.len() != gains_db.len() || speaker_ids.len() != utterances.len() {
        return Err(Error::Data("need one gain and one speaker id per utterance".into()));
    }
    let rate = utterances[0].sample_rate;
    if utterances.iter().any(|u| u.sample_rate != rate) {
        return Err(Error::Data("utterances differ in sample rate".into()));
    }
    let len = utterances.iter().map(|u| u.len()).min().unwrap_or(0);
    let sources: Vec<Waveform> = utterances
        .iter()
        .zip(gains_db)
        .map(|(u, &g)| {
            let scale = db_to_amplitude(g);
            Waveform::new(u.samples[..len].iter().map(|x| x * scale).collect(), rate)
        })
        .collect();
    let mixture = (0..len).map(|n| sources.iter().map(|s| s.samples[n]).sum()).collect();
    Ok(MixtureSample {
        mixture: Waveform::new(mixture, rate),
        sources,
        gains_db: gains_db.to_vec(),
        speaker_ids: speaker_ids.to_vec(),
    })
}

/// Independent uniform gain per utterance.
pub fn random_gains<R: Rng>(count: usize, min_db: f64, max_db: f64, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| rng.random_range(min_db..=max_db)).collect()
}

/// Mixes a deterministic sub-seed out of a master seed and a path of
/// indices (SplitMix64 finaliser).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut z = master;
    for &p in path {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub test_speakers: usize,
    pub train_mixtures: usize,
    pub valid_mixtures: usize,
    pub test_mixtures: usize,
    pub min_gain_db: f64,
    pub max_gain_db: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_speakers: 20,
            utterances_per_speaker: 8,
            test_speakers: 4,
            train_mixtures: 50,
            valid_mixtures: 10,
            test_mixtures: 10,
            min_gain_db: 0.0,
            max_gain_db: 5.0,
            min_seconds: 1.0,
            max_seconds: 3.0,
        }
    }
}

impl CorpusConfig {
    /// Full-scale split sizes for users who bring their own recordings.
    pub fn full_scale() -> Self {
        Self {
            num_speakers: 119,
            test_speakers: 16,
            train_mixtures: 20_000,
            valid_mixtures: 5_000,
            test_mixtures: 3_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_speakers < self.test_speakers + 2 || self.test_speakers < 2 {
            return Err(Error::Config(
                "need at least two test speakers and two training speakers".into(),
            ));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::Config("utterances_per_speaker must be positive".into()));
        }
        if !(self.min_gain_db <= self.max_gain_db) || !(0.0 < self.min_seconds && self.min_seconds <= self.max_seconds) {
            return Err(Error::Config("gain and duration ranges must be ordered".into()));
        }
        Ok(())
    }
}
