use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, Split};
use crate::separation::{separate, SeparationModel};
use crate::signal::Waveform;
use crate::speaker::IVector;
use crate::training::ordered_ivectors;
use crate::{Error, Result};

/// Reported SI-SDR values are clamped to this magnitude in dB.
pub const SDR_CAP_DB: f64 = 60.0;

/// Scale-invariant SDR of `estimate` against `reference`, in dB, clamped to
/// `[-SDR_CAP_DB, SDR_CAP_DB]`.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.samples.iter().map(|x| x * x).sum();
    if ref_energy == 0.0 {
        return Err(Error::Data("reference signal is all zero".into()));
    }
    let dot: f64 = estimate.samples.iter().zip(&reference.samples).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let mut target = 0.0;
    let mut error = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let t = alpha * r;
        target += t * t;
        error += (e - t) * (e - t);
    }
    let db = if error == 0.0 {
        SDR_CAP_DB
    } else if target == 0.0 {
        -SDR_CAP_DB
    } else {
        10.0 * (target / error).log10()
    };
    Ok(db.clamp(-SDR_CAP_DB, SDR_CAP_DB))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureScore {
    pub mixture_id: String,
    /// `permutation[s]` is the estimate matched to reference `s`.
    pub permutation: Vec<usize>,
    pub sdr_db: Vec<f64>,
    pub mixture_sdr_db: Vec<f64>,
    /// Mean over sources of `sdr_db - mixture_sdr_db`.
    pub improvement_db: f64,
}

/// Scores estimates under the source permutation with the highest mean
/// SI-SDR (first such permutation on ties).
pub fn score_mixture(id: &str, estimates: &[Waveform], references: &[Waveform], mixture: &Waveform) -> Result<MixtureScore> {
    if estimates.len() != references.len() || references.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    let n = references.len();
    let mut table = vec![vec![0.0; n]; n];
    for (r, reference) in references.iter().enumerate() {
        for (e, estimate) in estimates.iter().enumerate() {
            table[r][e] = si_sdr(estimate, reference)?;
        }
    }
    let best = permutations(n)
        .into_iter()
        .map(|p| {
            let mean = (0..n).map(|r| table[r][p[r]]).sum::<f64>() / n as f64;
            (p, mean)
        })
        .fold(None::<(Vec<usize>, f64)>, |acc, cand| match acc {
            Some(a) if a.1 >= cand.1 => Some(a),
            _ => Some(cand),
        })
        .expect("at least one permutation");
    let sdr_db: Vec<f64> = (0..n).map(|r| table[r][best.0[r]]).collect();
    let mixture_sdr_db = references.iter().map(|r| si_sdr(mixture, r)).collect::<Result<Vec<_>>>()?;
    let improvement_db = sdr_db.iter().zip(&mixture_sdr_db).map(|(a, b)| a - b).sum::<f64>() / n as f64;
    Ok(MixtureScore {
        mixture_id: id.to_string(),
        permutation: best.0,
        sdr_db,
        mixture_sdr_db,
        improvement_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub mixtures: Vec<MixtureScore>,
    pub mean_improvement_db: f64,
    pub std_improvement_db: f64,
}

impl SdrReport {
    pub fn from_scores(mixtures: Vec<MixtureScore>) -> Self {
        let n = mixtures.len().max(1) as f64;
        let mean = mixtures.iter().map(|m| m.improvement_db).sum::<f64>() / n;
        let var = mixtures.iter().map(|m| (m.improvement_db - mean).powi(2)).sum::<f64>() / n;
        Self {
            mixtures,
            mean_improvement_db: mean,
            std_improvement_db: var.sqrt(),
        }
    }
}

/// Separates every mixture of `split` and scores it against its gained
/// sources. Conditioned models look up i-vectors by source path.
pub fn evaluate_separation(
    model: &SeparationModel,
    manifest: &DatasetManifest,
    split: Split,
    ivectors: Option<&HashMap<String, IVector>>,
    seed: u64,
) -> Result<SdrReport> {
    let mut scores = Vec::new();
    for row in manifest.rows_in(split) {
        let sample = manifest.load_sample(row)?;
        let iv = match ivectors {
            Some(map) if model.ivector_dim > 0 => Some(ordered_ivectors(row, map)?),
            _ => None,
        };
        let estimates = separate(model, &sample.mixture, sample.sources.len(), iv.as_deref(), seed)?;
        scores.push(score_mixture(&row.mixture_id, &estimates, &sample.sources, &sample.mixture)?);
    }
    if scores.is_empty() {
        return Err(Error::Data(format!("no {split} mixtures to evaluate")));
    }
    Ok(SdrReport::from_scores(scores))
}
