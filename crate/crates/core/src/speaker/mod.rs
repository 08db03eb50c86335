//! Speaker factors for conditioning the separation network: a diagonal
//! GMM background model, Baum-Welch statistics, a total-variability
//! subspace and i-vector extraction.

mod tv;
mod ubm;

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use tv::{baum_welch_stats, extract_ivector, train_tv, BaumWelchStats, TotalVariability};
pub use ubm::{train_ubm, Ubm, VARIANCE_FLOOR};

use crate::corpus::{DatasetManifest, Split};
use crate::signal::{energy_vad, mfcc, read_wav, FeatureSequence, SignalConfig, Waveform};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IVector {
    pub w: Vec<f64>,
}

impl IVector {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerConfig {
    pub components: usize,
    pub ivector_dim: usize,
    pub ubm_iters: usize,
    pub tv_iters: usize,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            components: 16,
            ivector_dim: 10,
            ubm_iters: 10,
            tv_iters: 5,
        }
    }
}

/// VAD-filtered MFCC frames of one utterance.
pub fn speaker_features(wave: &Waveform, cfg: &SignalConfig) -> Result<Array2<f64>> {
    let c = mfcc(wave, cfg.mfcc_coeffs, &cfg.mfcc_config())?;
    let keep = energy_vad(&c, cfg.vad_threshold_db);
    let rows: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    Ok(c.select(Axis(0), &rows))
}

/// Appends every i-vector, in the given order, to each frame.
pub fn condition_inputs(features: &FeatureSequence, ivectors: &[IVector]) -> Result<FeatureSequence> {
    let Some(first) = ivectors.first() else {
        return Ok(features.clone());
    };
    if ivectors.iter().any(|w| w.dim() != first.dim()) {
        return Err(Error::Shape("i-vectors differ in dimension".into()));
    }
    let flat: Vec<f64> = ivectors.iter().flat_map(|w| w.w.iter().copied()).collect();
    let t = features.num_frames();
    let tail = Array2::from_shape_fn((t, flat.len()), |(_, j)| flat[j]);
    Ok(FeatureSequence {
        values: concatenate(Axis(1), &[features.values.view(), tail.view()]).expect("rows agree"),
        normalized: features.normalized,
    })
}

/// One row of an i-vector manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct IVectorRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub ivector: IVector,
}

/// Writes `utterance_id,speaker_id,w_1..w_dw` with a header.
pub fn write_ivector_csv(path: &Path, records: &[IVectorRecord]) -> Result<()> {
    let dw = records.first().map_or(0, |r| r.ivector.dim());
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec!["utterance_id".to_string(), "speaker_id".to_string()];
    header.extend((1..=dw).map(|i| format!("w_{i}")));
    out.write_record(&header)?;
    for r in records {
        if r.ivector.dim() != dw {
            return Err(Error::Shape("i-vectors differ in dimension".into()));
        }
        let mut row = vec![r.utterance_id.clone(), r.speaker_id.clone()];
        row.extend(r.ivector.w.iter().map(|x| format!("{x:?}")));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_ivector_csv(path: &Path) -> Result<Vec<IVectorRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Data(format!("{}: row {} is too short", path.display(), line + 1)));
        }
        let w = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), line + 1)))?;
        out.push(IVectorRecord {
            utterance_id: rec[0].to_string(),
            speaker_id: rec[1].to_string(),
            ivector: IVector { w },
        });
    }
    Ok(out)
}

fn manifest_features(manifest: &DatasetManifest, split: Option<Split>, signal: &SignalConfig) -> Result<Vec<(String, String, Array2<f64>)>> {
    manifest
        .utterances(split)
        .into_par_iter()
        .map(|(path, speaker)| {
            let wave = read_wav(&manifest.resolve(&path))?;
            let feats = speaker_features(&wave, signal)?;
            Ok((path, speaker, feats))
        })
        .collect()
}

/// Fits the UBM on the pooled frames of the training utterances, then the
/// total-variability matrix on their per-utterance statistics.
pub fn train_speaker_models(
    manifest: &DatasetManifest,
    signal: &SignalConfig,
    cfg: &SpeakerConfig,
    seed: u64,
) -> Result<(Ubm, TotalVariability)> {
    let feats = manifest_features(manifest, Some(Split::Train), signal)?;
    let views: Vec<ArrayView2<f64>> = feats.iter().filter(|f| f.2.nrows() > 0).map(|f| f.2.view()).collect();
    if views.is_empty() {
        return Err(Error::Data("no voiced training frames for the UBM".into()));
    }
    let pooled = concatenate(Axis(0), &views).expect("feature widths agree");
    let (ubm, _) = train_ubm(pooled.view(), cfg.components, cfg.ubm_iters, seed)?;
    let stats = views
        .par_iter()
        .map(|v| baum_welch_stats(&ubm, *v))
        .collect::<Result<Vec<_>>>()?;
    let (tv, _) = train_tv(&ubm, &stats, cfg.ivector_dim, cfg.tv_iters, seed)?;
    Ok((ubm, tv))
}

/// One i-vector per distinct source recording, keyed by its manifest path.
/// Recordings without voiced frames get the zero vector.
pub fn extract_manifest_ivectors(
    manifest: &DatasetManifest,
    signal: &SignalConfig,
    ubm: &Ubm,
    tv: &TotalVariability,
) -> Result<Vec<IVectorRecord>> {
    manifest_features(manifest, None, signal)?
        .into_par_iter()
        .map(|(path, speaker, feats)| {
            let ivector = if feats.nrows() == 0 {
                IVector::zeros(tv.dim())
            } else {
                extract_ivector(ubm, tv, &baum_welch_stats(ubm, feats.view())?)?
            };
            Ok(IVectorRecord {
                utterance_id: path,
                speaker_id: speaker,
                ivector,
            })
        })
        .collect()
}
