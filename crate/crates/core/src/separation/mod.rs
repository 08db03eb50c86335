//! Deep-clustering separation: per-bin embeddings trained so that bins
//! dominated by the same source point the same way, then k-means masks.

mod embed;
mod kmeans;
mod loss;
mod model;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

pub use embed::{embed, embed_backward, EmbedCache, EmbeddingField};
pub use kmeans::{kmeans, wcss_of, ClusterAssignment, KMeansConfig};
pub use loss::{build_targets, dc_loss, TargetMatrix};
pub use model::{
    analysis, separate, separate_with_embeddings, synthesis, DcCache, DcNetwork, Framing, SeparationModel,
};

use crate::signal::MaskSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationConfig {
    pub embedding_dim: usize,
    pub num_sources: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 20,
            num_sources: 2,
            kmeans_restarts: 5,
            kmeans_max_iter: 100,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.num_sources == 0 || self.kmeans_restarts == 0 {
            return Err(Error::Config(
                "embedding_dim, num_sources and kmeans_restarts must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
        }
    }
}

/// Binary masks: bin `(t, f)` belongs wholly to the cluster of row `t * F + f`.
pub fn masks_from_clusters(labels: &[usize], sources: usize, frames: usize, bins: usize) -> Result<MaskSet> {
    if labels.len() != frames * bins {
        return Err(Error::Shape(format!(
            "{} labels for {frames}x{bins} bins",
            labels.len()
        )));
    }
    let mut masks = Array3::zeros((sources, frames, bins));
    for (row, &l) in labels.iter().enumerate() {
        if l >= sources {
            return Err(Error::Data(format!("cluster label {l} out of range")));
        }
        masks[[l, row / bins, row % bins]] = 1.0;
    }
    MaskSet::new(masks)
}
