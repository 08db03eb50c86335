//! Two-stage training of the separation network: Adam on short segments
//! with noisy inputs, then full mixtures at a lower rate, each stage
//! stopped early on the validation loss.

mod adam;
mod data;

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use data::{
    add_input_noise, make_curriculum_segments, ordered_ivectors, prepare_dataset, prepare_example, Dataset, Example,
};

use crate::corpus::derive_seed;
use crate::params::Parameters;
use crate::separation::{DcNetwork, SeparationModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_learning_rate: f64,
    pub stage2_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Segment length of the first stage; zero skips that stage.
    pub curriculum_segment_frames: usize,
    pub input_noise_std: f64,
    pub validations_per_epoch: usize,
    pub early_stop_patience: usize,
    pub stage1_max_epochs: usize,
    /// Zero skips the full-mixture stage.
    pub stage2_max_epochs: usize,
    /// Global gradient-norm limit; zero disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_learning_rate: 1e-3,
            stage2_learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            curriculum_segment_frames: 100,
            input_noise_std: 0.2,
            validations_per_epoch: 3,
            early_stop_patience: 9,
            stage1_max_epochs: 30,
            stage2_max_epochs: 10,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.early_stop_patience == 0 || self.batch_size == 0 || self.validations_per_epoch == 0 {
            return Err(Error::Config(
                "patience, batch_size and validations_per_epoch must be positive".into(),
            ));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(Error::Config("input_noise_std must be non-negative".into()));
        }
        if !(self.stage1_learning_rate > 0.0 && self.stage2_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub best_valid_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss of the last stage run.
    pub model: SeparationModel,
    pub best_valid_loss: f64,
    pub log: Vec<LogEntry>,
    /// Fingerprint of the stage-one result and of the stage-two starting
    /// point; equal whenever both stages run.
    pub handoff: Option<(u64, u64)>,
    pub skipped_updates: u64,
}

/// Tracks the best validation loss and counts validations that fail to
/// improve on it.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            bad: 0,
        }
    }

    /// Records a validation loss; returns whether it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad = 0;
            true
        } else {
            self.bad += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad >= self.patience
    }
}

fn inputs(model: &SeparationModel, e: &Example) -> Result<Array2<f64>> {
    let mut x = e.features.clone();
    for mut row in x.rows_mut() {
        for (f, v) in row.iter_mut().enumerate() {
            *v = (*v - model.norm.mean[f]) / model.norm.std[f];
        }
    }
    model.condition(x, e.ivectors.as_deref())
}

/// Mean normalised loss over `examples`, without input noise.
pub fn mean_loss(model: &SeparationModel, examples: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for e in examples {
        total += model.loss(inputs(model, e)?.view(), &e.targets)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Batches of similar length: shuffle, sort by length with the shuffled
/// position as tie-break, cut into batches, shuffle the batch order.
fn length_buckets(examples: &[Example], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(rng);
    let rank: Vec<usize> = {
        let mut r = vec![0; idx.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos;
        }
        r
    };
    idx.sort_by_key(|&i| (examples[i].frames(), rank[i]));
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

struct StageSpec<'a> {
    stage: u8,
    train: &'a [Example],
    valid: &'a [Example],
    lr: f64,
    max_epochs: usize,
}

struct Trainer<'a, W: Write> {
    cfg: &'a TrainConfig,
    log_sink: Option<W>,
    log: Vec<LogEntry>,
    step: u64,
    start: Instant,
    skipped: u64,
}

impl<W: Write> Trainer<'_, W> {
    fn emit(&mut self, entry: LogEntry) -> Result<()> {
        if let Some(w) = self.log_sink.as_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        log::info!(
            "stage {} epoch {} step {}: train {:.5} valid {:.5}",
            entry.stage,
            entry.epoch,
            entry.step,
            entry.train_loss,
            entry.valid_loss
        );
        self.log.push(entry);
        Ok(())
    }

    fn run_stage(&mut self, model: &mut SeparationModel, spec: StageSpec) -> Result<f64> {
        if spec.train.is_empty() || spec.valid.is_empty() {
            return Err(Error::Data(format!("stage {} has no training or validation sequences", spec.stage)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[0x7472, spec.stage as u64]));
        let adam = self.cfg.adam();
        let mut state = AdamState::new(&model.net);
        let mut stopper = EarlyStopping::new(self.cfg.early_stop_patience);
        let mut best_net: DcNetwork = model.net.clone();
        let mut running = (0.0, 0usize);
        'epochs: for epoch in 0..spec.max_epochs {
            let batches = length_buckets(spec.train, self.cfg.batch_size, &mut rng);
            let nb = batches.len();
            let checkpoints: Vec<usize> = (1..=self.cfg.validations_per_epoch)
                .map(|k| (k * nb).div_ceil(self.cfg.validations_per_epoch))
                .collect();
            for (b, batch) in batches.iter().enumerate() {
                let mut grads = model.net.zeros_like();
                for &i in batch {
                    let e = &spec.train[i];
                    let mut x = inputs(model, e)?;
                    let bins = model.bins();
                    let noisy = add_input_noise(&x.slice(s![.., ..bins]).to_owned(), self.cfg.input_noise_std, &mut rng)?;
                    x.slice_mut(s![.., ..bins]).assign(&noisy);
                    let (loss, g) = model.loss_and_gradient(x.view(), &e.targets)?;
                    if !loss.is_finite() {
                        return Err(Error::Divergence(format!("training loss {loss} on {}", e.id)));
                    }
                    running.0 += loss;
                    running.1 += 1;
                    grads.accumulate(&g);
                }
                grads.scale(1.0 / batch.len() as f64);
                if self.cfg.grad_clip > 0.0 {
                    clip_global_norm(&mut grads, self.cfg.grad_clip);
                }
                if !adam_step(&mut model.net, &grads, &mut state, &adam, spec.lr) {
                    self.skipped += 1;
                }
                self.step += 1;
                if checkpoints.contains(&(b + 1)) {
                    let valid = mean_loss(model, spec.valid)?;
                    if !valid.is_finite() {
                        return Err(Error::Divergence(format!("validation loss {valid}")));
                    }
                    if stopper.observe(valid) {
                        best_net = model.net.clone();
                    }
                    let entry = LogEntry {
                        step: self.step,
                        stage: spec.stage,
                        epoch,
                        train_loss: running.0 / running.1.max(1) as f64,
                        valid_loss: valid,
                        best_valid_loss: stopper.best,
                        wall_time_s: self.start.elapsed().as_secs_f64(),
                    };
                    running = (0.0, 0);
                    self.emit(entry)?;
                    if stopper.should_stop() {
                        break 'epochs;
                    }
                }
            }
        }
        model.net = best_net;
        Ok(stopper.best)
    }
}

/// Trains `model` in place of a copy and returns the best-validation
/// parameters. The JSON-lines log goes to `log_sink` when given.
pub fn train<W: Write>(
    model: &SeparationModel,
    cfg: &TrainConfig,
    data: &Dataset,
    log_sink: Option<W>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if model.norm != data.norm {
        return Err(Error::Config("model normalisation differs from the dataset's".into()));
    }
    let mut model = model.clone();
    let mut trainer = Trainer {
        cfg,
        log_sink,
        log: Vec::new(),
        step: 0,
        start: Instant::now(),
        skipped: 0,
    };
    let mut best = f64::INFINITY;
    let mut stage1_hash = None;
    if cfg.curriculum_segment_frames > 0 && cfg.stage1_max_epochs > 0 {
        let train = make_curriculum_segments(&data.train, cfg.curriculum_segment_frames)?;
        let valid = make_curriculum_segments(&data.valid, cfg.curriculum_segment_frames)?;
        best = trainer.run_stage(
            &mut model,
            StageSpec {
                stage: 1,
                train: &train,
                valid: &valid,
                lr: cfg.stage1_learning_rate,
                max_epochs: cfg.stage1_max_epochs,
            },
        )?;
        stage1_hash = Some(model.net.fingerprint());
    }
    let mut handoff = None;
    if cfg.stage2_max_epochs > 0 {
        if let Some(h) = stage1_hash {
            handoff = Some((h, model.net.fingerprint()));
        }
        best = trainer.run_stage(
            &mut model,
            StageSpec {
                stage: 2,
                train: &data.train,
                valid: &data.valid,
                lr: cfg.stage2_learning_rate,
                max_epochs: cfg.stage2_max_epochs,
            },
        )?;
    }
    Ok(TrainOutcome {
        model,
        best_valid_loss: best,
        log: trainer.log,
        handoff,
        skipped_updates: trainer.skipped,
    })
}
