use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::corpus::derive_seed;
use crate::params::Parameters;
use crate::recurrent::{blstm_forward, bptt_backward, leak_to_lifetime, CellVariant, LeakConfig, ModelConfig};
use crate::separation::DcNetwork;
use crate::training::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::{Error, Result};

/// Delayed-recall task: one of `tokens` symbols is shown at frame 0 and
/// must be named at frame `delay`, which carries a query marker. Every
/// input value carries Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub tokens: usize,
    pub hidden: usize,
    pub noise_std: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_samples: usize,
    /// Frame period used only to report lifetimes in seconds.
    pub hop_seconds: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            tokens: 4,
            hidden: 16,
            noise_std: 0.2,
            train_steps: 300,
            batch_size: 16,
            learning_rate: 0.01,
            test_samples: 500,
            hop_seconds: 0.008,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tokens < 2 || self.hidden == 0 || self.batch_size == 0 || self.test_samples == 0 {
            return Err(Error::Config("probe needs >= 2 tokens and positive sizes".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.learning_rate > 0.0) || !(self.hop_seconds > 0.0) {
            return Err(Error::Config("probe noise, learning rate and hop must be valid".into()));
        }
        Ok(())
    }

    fn model(&self, variant: CellVariant, a: f64) -> ModelConfig {
        ModelConfig {
            input_dim: self.tokens + 1,
            layers: 1,
            units_per_direction: self.hidden,
            bidirectional: false,
            variant,
            leak: LeakConfig {
                a,
                hop_seconds: self.hop_seconds,
            },
            output_dim: self.tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub variant: CellVariant,
    pub a: f64,
    /// Lifetime in frames, `-1 / ln(a)`.
    pub tau_frames: f64,
    pub delay: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub chance: f64,
    /// Two-sided exact binomial test of the accuracy against chance.
    pub p_value: f64,
}

/// Two-sided exact binomial test: total probability of outcomes no more
/// likely than `successes` under success rate `p`.
pub fn binomial_two_sided(successes: u64, trials: u64, p: f64) -> Result<f64> {
    let dist = Binomial::new(p, trials).map_err(|e| Error::Config(e.to_string()))?;
    let observed = dist.pmf(successes);
    let tol = observed * (1.0 + 1e-7);
    let total: f64 = (0..=trials).map(|k| dist.pmf(k)).filter(|&q| q <= tol).sum();
    Ok(total.min(1.0))
}

fn sample<R: Rng>(cfg: &ProbeConfig, delay: usize, noise: &Normal<f64>, rng: &mut R) -> (Array2<f64>, usize) {
    let token = rng.random_range(0..cfg.tokens);
    let mut x = Array2::from_shape_simple_fn((delay + 1, cfg.tokens + 1), || noise.sample(rng));
    x[[0, token]] += 1.0;
    x[[delay, cfg.tokens]] += 1.0;
    (x, token)
}

fn softmax(z: &Array1<f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

fn logits(cfg: &ModelConfig, net: &DcNetwork, x: &Array2<f64>) -> Result<Array1<f64>> {
    let (hidden, _) = blstm_forward(cfg, &net.stack, x.view())?;
    let last = hidden.slice(s![hidden.nrows() - 1.., ..]);
    Ok(net.head.forward(last)?.row(0).to_owned())
}

/// Cross-entropy gradient of one example, read out at the last frame.
fn example_gradient(cfg: &ModelConfig, net: &DcNetwork, x: &Array2<f64>, token: usize) -> Result<DcNetwork> {
    let (hidden, cache) = blstm_forward(cfg, &net.stack, x.view())?;
    let t = hidden.nrows() - 1;
    let last = hidden.slice(s![t.., ..]);
    let z = net.head.forward(last)?.row(0).to_owned();
    let mut d_z = softmax(&z);
    d_z[token] -= 1.0;
    let d_z = d_z.insert_axis(ndarray::Axis(0));
    let (head, d_last) = net.head.backward(last, d_z.view());
    let mut d_hidden = Array2::zeros(hidden.dim());
    d_hidden.slice_mut(s![t.., ..]).assign(&d_last);
    let (stack, _) = bptt_backward(&net.stack, &cache, d_hidden.view())?;
    Ok(DcNetwork { stack, head })
}

/// Trains a fresh unidirectional network on the recall task at one delay
/// and measures its accuracy on held-out samples.
pub fn probe_cell(cfg: &ProbeConfig, variant: CellVariant, a: f64, delay: usize, seed: u64) -> Result<ProbeRow> {
    cfg.validate()?;
    let model = cfg.model(variant, a);
    model.validate()?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7072, delay as u64, 0]));
    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7072, delay as u64, 1]));
    let mut test_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7072, delay as u64, 2]));
    let mut net = DcNetwork::init(&model, &mut init_rng);
    let mut state = AdamState::new(&net);
    let adam = AdamConfig::default();
    for _ in 0..cfg.train_steps {
        let mut grad = net.zeros_like();
        for _ in 0..cfg.batch_size {
            let (x, token) = sample(cfg, delay, &noise, &mut data_rng);
            grad.accumulate(&example_gradient(&model, &net, &x, token)?);
        }
        grad.scale(1.0 / cfg.batch_size as f64);
        clip_global_norm(&mut grad, 5.0);
        adam_step(&mut net, &grad, &mut state, &adam, cfg.learning_rate);
    }
    let mut correct = 0u64;
    for _ in 0..cfg.test_samples {
        let (x, token) = sample(cfg, delay, &noise, &mut test_rng);
        let z = logits(&model, &net, &x)?;
        let guess = z
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
            .0;
        if guess == token {
            correct += 1;
        }
    }
    let chance = 1.0 / cfg.tokens as f64;
    Ok(ProbeRow {
        variant,
        a,
        tau_frames: leak_to_lifetime(a, 1.0),
        delay,
        seed,
        accuracy: correct as f64 / cfg.test_samples as f64,
        chance,
        p_value: binomial_two_sided(correct, cfg.test_samples as u64, chance)?,
    })
}

/// Recall accuracy of `variant` with leak `a` for every delay in `delays`.
pub fn memory_probe(cfg: &ProbeConfig, variant: CellVariant, a: f64, delays: &[usize], seed: u64) -> Result<Vec<ProbeRow>> {
    delays.iter().map(|&d| probe_cell(cfg, variant, a, d, seed)).collect()
}
