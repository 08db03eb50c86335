use std::collections::HashMap;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::corpus::{DatasetManifest, ManifestRow, Split};
use crate::separation::{analysis, build_targets, TargetMatrix};
use crate::signal::{compute_norm_stats, log_features, FeatureSequence, NormStats, SignalConfig};
use crate::speaker::IVector;
use crate::{Error, Result};

/// One training sequence: raw (un-normalised) log-magnitude features,
/// dominant-source targets and the i-vectors of its speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Array2<f64>,
    pub targets: TargetMatrix,
    pub ivectors: Option<Vec<IVector>>,
}

impl Example {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn bins(&self) -> usize {
        self.features.ncols()
    }
}

/// I-vectors of the sources of `row`, ordered by speaker id.
pub fn ordered_ivectors(row: &ManifestRow, map: &HashMap<String, IVector>) -> Result<Vec<IVector>> {
    let mut order: Vec<usize> = (0..row.speaker_ids.len()).collect();
    order.sort_by(|&a, &b| row.speaker_ids[a].cmp(&row.speaker_ids[b]));
    order
        .into_iter()
        .map(|i| {
            map.get(&row.source_paths[i])
                .cloned()
                .ok_or_else(|| Error::Data(format!("no i-vector for {}", row.source_paths[i])))
        })
        .collect()
}

/// Features, targets and i-vectors (ordered by speaker id) for one
/// manifest row. `ivectors` maps source paths to their i-vectors.
pub fn prepare_example(
    manifest: &DatasetManifest,
    row: &ManifestRow,
    signal: &SignalConfig,
    ivectors: Option<&HashMap<String, IVector>>,
) -> Result<Example> {
    let sample = manifest.load_sample(row)?;
    let (mix_spec, _) = analysis(&sample.mixture, signal)?;
    let sources = sample
        .sources
        .iter()
        .map(|w| analysis(w, signal).map(|(s, _)| s))
        .collect::<Result<Vec<_>>>()?;
    let targets = build_targets(&sources)?;
    let features = log_features(&mix_spec, signal.log_floor, None)?.values;
    let ivectors = ivectors.map(|map| ordered_ivectors(row, map)).transpose()?;
    Ok(Example {
        id: row.mixture_id.clone(),
        features,
        targets,
        ivectors,
    })
}

/// Training and validation examples with the training-set normalisation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub norm: NormStats,
}

pub fn prepare_dataset(
    manifest: &DatasetManifest,
    signal: &SignalConfig,
    ivectors: Option<&HashMap<String, IVector>>,
) -> Result<Dataset> {
    let load = |split: Split| -> Result<Vec<Example>> {
        let rows: Vec<&ManifestRow> = manifest.rows_in(split).collect();
        rows.par_iter()
            .map(|r| prepare_example(manifest, r, signal, ivectors))
            .collect()
    };
    let train = load(Split::Train)?;
    let valid = load(Split::Valid)?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data("training needs non-empty train and valid splits".into()));
    }
    let seqs: Vec<FeatureSequence> = train
        .iter()
        .map(|e| FeatureSequence {
            values: e.features.clone(),
            normalized: false,
        })
        .collect();
    let norm = compute_norm_stats(&seqs)?;
    Ok(Dataset { train, valid, norm })
}

/// Non-overlapping `frames`-long slices of every example; remainders are
/// dropped and examples shorter than one slice are skipped.
pub fn make_curriculum_segments(examples: &[Example], frames: usize) -> Result<Vec<Example>> {
    if frames == 0 {
        return Err(Error::Config("segment length must be positive".into()));
    }
    let mut out = Vec::new();
    for e in examples {
        let bins = e.bins();
        for k in 0..e.frames() / frames {
            let (a, b) = (k * frames, (k + 1) * frames);
            out.push(Example {
                id: format!("{}#{k}", e.id),
                features: e.features.slice(s![a..b, ..]).to_owned(),
                targets: e.targets.frames(bins, a, b),
                ivectors: e.ivectors.clone(),
            });
        }
    }
    Ok(out)
}

/// Adds zero-mean Gaussian noise of standard deviation `std`.
pub fn add_input_noise<R: Rng>(features: &Array2<f64>, std: f64, rng: &mut R) -> Result<Array2<f64>> {
    if !(std >= 0.0) {
        return Err(Error::Config(format!("noise std {std} must be non-negative")));
    }
    if std == 0.0 {
        return Ok(features.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    Ok(features.mapv(|x| x + normal.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example(frames: usize) -> Example {
        let labels: Vec<usize> = (0..frames * 3).map(|i| (i / 2) % 2).collect();
        Example {
            id: "m".into(),
            features: Array2::from_shape_fn((frames, 3), |(t, f)| (t * 3 + f) as f64),
            targets: TargetMatrix::from_labels(&labels, 2).unwrap(),
            ivectors: None,
        }
    }

    #[test]
    fn segments_floor_and_slice() {
        let segs = make_curriculum_segments(&[example(250)], 100).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].features[[0, 0]], 300.0);
        let full = example(250);
        assert_eq!(segs[1].targets.u, full.targets.u.slice(s![300..600, ..]));
        assert!(make_curriculum_segments(&[example(99)], 100).unwrap().is_empty());
        assert!(make_curriculum_segments(&[example(5)], 0).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let x = Array2::zeros((1000, 1000));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = add_input_noise(&x, 0.2, &mut rng).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.sum() / n;
        let std = (noisy.mapv(|v| (v - mean) * (v - mean)).sum() / n).sqrt();
        assert!((std - 0.2).abs() < 0.002, "{std}");
        let again = add_input_noise(&x, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(noisy, again);
        assert_eq!(add_input_noise(&noisy, 0.0, &mut rng).unwrap(), noisy);
        assert!(add_input_noise(&x, -1.0, &mut rng).is_err());
    }
}
