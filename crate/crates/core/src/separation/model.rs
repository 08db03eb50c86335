use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::embed::{embed, embed_backward, EmbedCache, EmbeddingField};
use super::kmeans::{kmeans, ClusterAssignment, KMeansConfig};
use super::loss::{dc_loss, TargetMatrix};
use super::{masks_from_clusters, SeparationConfig};
use crate::params::{Parameters, TensorMut, TensorRef};
use crate::recurrent::{blstm_forward, bptt_backward, Linear, LstmStack, ModelConfig, StackCache};
use crate::signal::{apply_masks, istft_overlap_add, log_features, stft, NormStats, SignalConfig, Spectrogram, Waveform};
use crate::speaker::{condition_inputs, IVector};
use crate::{Error, Result};

/// Trainable part of the separation network.
#[derive(Debug, Clone, PartialEq)]
pub struct DcNetwork {
    pub stack: LstmStack,
    pub head: Linear,
}

impl DcNetwork {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let stack = LstmStack::init(cfg, rng);
        let head = Linear::init(cfg.stack_output_dim(), cfg.output_dim, rng);
        Self { stack, head }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            stack: self.stack.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl Parameters for DcNetwork {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = self.stack.tensors();
        self.head.tensors("head", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let DcNetwork { stack, head } = self;
        let mut out = stack.tensors_mut();
        head.tensors_mut("head", &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct DcCache {
    pub stack: StackCache,
    pub hidden: Array2<f64>,
    pub embed: EmbedCache,
}

/// Everything needed to run separation on a new mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationModel {
    pub model: ModelConfig,
    pub signal: SignalConfig,
    pub separation: SeparationConfig,
    /// Per-speaker i-vector width appended to the input; zero disables it.
    pub ivector_dim: usize,
    pub norm: NormStats,
    pub net: DcNetwork,
}

impl SeparationModel {
    /// Builds a freshly initialised model. `model.input_dim` and
    /// `model.output_dim` are derived from the other settings.
    pub fn init<R: Rng>(
        mut model: ModelConfig,
        signal: SignalConfig,
        separation: SeparationConfig,
        ivector_dim: usize,
        norm: NormStats,
        rng: &mut R,
    ) -> Result<Self> {
        let bins = signal.num_bins();
        model.input_dim = bins + separation.num_sources * ivector_dim;
        model.output_dim = bins * separation.embedding_dim;
        let net = DcNetwork::init(&model, rng);
        let out = Self {
            model,
            signal,
            separation,
            ivector_dim,
            norm,
            net,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.signal.validate()?;
        self.separation.validate()?;
        let bins = self.signal.num_bins();
        if self.norm.dim() != bins {
            return Err(Error::Shape(format!("norm stats cover {} bins, need {bins}", self.norm.dim())));
        }
        if self.model.input_dim != bins + self.separation.num_sources * self.ivector_dim {
            return Err(Error::Shape("model input width does not match features".into()));
        }
        if self.model.output_dim != bins * self.separation.embedding_dim
            || self.net.head.out_dim() != self.model.output_dim
            || self.net.head.in_dim() != self.model.stack_output_dim()
        {
            return Err(Error::Shape("projection head does not match configuration".into()));
        }
        self.net.stack.validate(&self.model)
    }

    /// Same parameters run with a different leak constant.
    pub fn with_leak(&self, a: f64) -> Result<Self> {
        let mut out = self.clone();
        out.model.leak.a = a;
        out.validate()?;
        Ok(out)
    }

    pub fn bins(&self) -> usize {
        self.signal.num_bins()
    }

    /// Normalised log-magnitude features of `spec`, with i-vectors appended
    /// when the model is conditioned.
    pub fn inputs(&self, spec: &Spectrogram, ivectors: Option<&[IVector]>) -> Result<Array2<f64>> {
        let feats = log_features(spec, self.signal.log_floor, Some(&self.norm))?;
        self.condition(feats.values, ivectors)
    }

    /// Appends i-vectors to already normalised features.
    pub fn condition(&self, features: Array2<f64>, ivectors: Option<&[IVector]>) -> Result<Array2<f64>> {
        match (self.ivector_dim, ivectors) {
            (0, None) => Ok(features),
            (0, Some(_)) => Err(Error::Config("model is not i-vector conditioned".into())),
            (_, None) => Err(Error::Config("model needs i-vectors for every mixture".into())),
            (dw, Some(iv)) => {
                if iv.len() != self.separation.num_sources || iv.iter().any(|w| w.dim() != dw) {
                    return Err(Error::Shape(format!(
                        "expected {} i-vectors of width {dw}",
                        self.separation.num_sources
                    )));
                }
                let seq = crate::signal::FeatureSequence {
                    values: features,
                    normalized: true,
                };
                Ok(condition_inputs(&seq, iv)?.values)
            }
        }
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<(EmbeddingField, DcCache)> {
        let (hidden, stack) = blstm_forward(&self.model, &self.net.stack, inputs)?;
        let projected = self.net.head.forward(hidden.view())?;
        let (field, embed) = embed(projected.view(), self.bins(), self.separation.embedding_dim)?;
        Ok((field, DcCache { stack, hidden, embed }))
    }

    pub fn embed(&self, inputs: ArrayView2<f64>) -> Result<EmbeddingField> {
        Ok(self.forward(inputs)?.0)
    }

    /// Loss divided by `(T F)^2`.
    pub fn loss(&self, inputs: ArrayView2<f64>, targets: &TargetMatrix) -> Result<f64> {
        let field = self.embed(inputs)?;
        let (loss, _) = dc_loss(field.v.view(), targets.u.view())?;
        Ok(loss / (field.v.nrows() as f64).powi(2))
    }

    /// Normalised loss and its gradient for every trainable parameter.
    pub fn loss_and_gradient(&self, inputs: ArrayView2<f64>, targets: &TargetMatrix) -> Result<(f64, DcNetwork)> {
        let (field, cache) = self.forward(inputs)?;
        let (loss, d_v) = dc_loss(field.v.view(), targets.u.view())?;
        let scale = 1.0 / (field.v.nrows() as f64).powi(2);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("loss is {loss}")));
        }
        let d_z = embed_backward(&field, &cache.embed, (d_v * scale).view())?;
        let (head, d_hidden) = self.net.head.backward(cache.hidden.view(), d_z.view());
        let (stack, _) = bptt_backward(&self.net.stack, &cache.stack, d_hidden.view())?;
        Ok((loss * scale, DcNetwork { stack, head }))
    }
}

/// Sample bookkeeping for the padded analysis used by [`analysis`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub pad_front: usize,
    pub len: usize,
}

/// STFT of `wave` after zero padding so that every original sample lies in
/// the fully overlapped interior, where synthesis is exact.
pub fn analysis(wave: &Waveform, cfg: &SignalConfig) -> Result<(Spectrogram, Framing)> {
    if wave.sample_rate != cfg.sample_rate {
        return Err(Error::Data(format!(
            "sample rate {} differs from configured {}",
            wave.sample_rate, cfg.sample_rate
        )));
    }
    if wave.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let pad_front = cfg.frame_len - cfg.hop;
    let tail = (cfg.hop - (cfg.frame_len + wave.len()) % cfg.hop) % cfg.hop;
    let pad_back = pad_front + tail;
    let mut samples = vec![0.0; pad_front];
    samples.extend_from_slice(&wave.samples);
    samples.extend(std::iter::repeat_n(0.0, pad_back));
    let spec = stft(&Waveform::new(samples, wave.sample_rate), cfg.frame_len, cfg.hop, cfg.window)?;
    Ok((
        spec,
        Framing {
            pad_front,
            len: wave.len(),
        },
    ))
}

/// Inverse of [`analysis`], trimmed back to the original samples.
pub fn synthesis(spec: &Spectrogram, framing: Framing) -> Result<Waveform> {
    let full = istft_overlap_add(spec)?;
    let end = framing.pad_front + framing.len;
    if full.len() < end {
        return Err(Error::Shape("spectrogram too short for framing".into()));
    }
    Ok(Waveform::new(full.samples[framing.pad_front..end].to_vec(), full.sample_rate))
}

/// Clusters `field` and masks `mixture` with the resulting partition.
pub fn separate_with_embeddings(
    mixture: &Spectrogram,
    field: &EmbeddingField,
    sources: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<(Vec<Spectrogram>, ClusterAssignment)> {
    if (field.frames, field.bins) != mixture.bins.dim() {
        return Err(Error::Shape("embedding field does not match the mixture".into()));
    }
    let clusters = kmeans(field.v.view(), sources, seed, cfg)?;
    let masks = masks_from_clusters(&clusters.labels, sources, field.frames, field.bins)?;
    Ok((apply_masks(&masks, mixture)?, clusters))
}

/// Full pipeline: features, embeddings, k-means, masking and overlap-add.
/// Returns `sources` waveforms of the mixture's length.
pub fn separate(
    model: &SeparationModel,
    mixture: &Waveform,
    sources: usize,
    ivectors: Option<&[IVector]>,
    seed: u64,
) -> Result<Vec<Waveform>> {
    if sources == 0 {
        return Err(Error::Config("need at least one source".into()));
    }
    if !mixture.is_finite() {
        return Err(Error::Data("mixture has non-finite samples".into()));
    }
    if sources == 1 {
        return Ok(vec![mixture.clone()]);
    }
    let (spec, framing) = analysis(mixture, &model.signal)?;
    let inputs = model.inputs(&spec, ivectors)?;
    let field = model.embed(inputs.view())?;
    let (parts, _) = separate_with_embeddings(&spec, &field, sources, seed, &model.separation.kmeans())?;
    parts.iter().map(|p| synthesis(p, framing)).collect()
}
