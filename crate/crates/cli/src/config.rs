//! Run configuration: one TOML file with a section per module.

use std::path::Path;

use anyhow::{bail, Context};
use leakyspan::corpus::CorpusConfig;
use leakyspan::evaluation::{ProbeConfig, SweepConfig};
use leakyspan::recurrent::{CellVariant, LeakConfig, ModelConfig};
use leakyspan::separation::SeparationConfig;
use leakyspan::signal::SignalConfig;
use leakyspan::speaker::SpeakerConfig;
use leakyspan::training::TrainConfig;
use leakyspan::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for corpus synthesis, initialisation and clustering.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub signal: SignalConfig,
    pub model: ModelSection,
    pub separation: SeparationConfig,
    pub train: TrainConfig,
    pub speaker: SpeakerConfig,
    pub sweep: SweepConfig,
    pub probe: ProbeConfig,
    pub probe_grid: ProbeGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            signal: SignalConfig::default(),
            model: ModelSection::default(),
            separation: SeparationConfig::default(),
            train: TrainConfig::default(),
            speaker: SpeakerConfig::default(),
            sweep: SweepConfig::default(),
            probe: ProbeConfig::default(),
            probe_grid: ProbeGrid::default(),
        }
    }
}

/// Recurrent stack of the separation network. Input and output widths
/// follow from the signal and separation sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub units_per_direction: usize,
    pub bidirectional: bool,
    pub variant: CellVariant,
    pub a: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 2,
            units_per_direction: 64,
            bidirectional: true,
            variant: CellVariant::BlueCut,
            a: 1.0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, signal: &SignalConfig, sep: &SeparationConfig) -> ModelConfig {
        let bins = signal.num_bins();
        ModelConfig {
            input_dim: bins,
            layers: self.layers,
            units_per_direction: self.units_per_direction,
            bidirectional: self.bidirectional,
            variant: self.variant,
            leak: LeakConfig {
                a: self.a,
                hop_seconds: signal.hop_seconds(),
            },
            output_dim: bins * sep.embedding_dim,
        }
    }
}

/// Cells of the memory probe: every lifetime crossed with every delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeGrid {
    pub variant: CellVariant,
    /// Lifetimes in frames; `0` and `inf` are allowed.
    pub tau_frames: Vec<f64>,
    pub delays: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            variant: CellVariant::BlueCut,
            tau_frames: vec![0.0, 10.0, f64::INFINITY],
            delays: vec![0, 1, 2, 5, 10, 20, 50],
            seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides in order and validates the result.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> leakyspan::Result<()> {
        self.corpus.validate()?;
        self.signal.validate()?;
        self.separation.validate()?;
        self.train.validate()?;
        self.sweep.validate()?;
        self.probe.validate()?;
        self.model_config().validate()?;
        if self.probe_grid.tau_frames.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config("probe_grid.tau_frames must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.model_config(&self.signal, &self.separation)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string(self).context("serialising the configuration")
    }
}

/// Sets `section.key = value`; the value is read as a TOML literal and
/// falls back to a bare string.
fn apply_override(tree: &mut toml::Table, item: &str) -> anyhow::Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        return Err(Error::Config(format!("override {item:?} is not key=value")).into());
    };
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {part} is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
