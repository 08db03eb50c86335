use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sdr::{evaluate_separation, SdrReport};
use crate::corpus::{derive_seed, DatasetManifest, Split};
use crate::recurrent::{leak_to_lifetime, lifetime_to_leak, CellVariant, ModelConfig};
use crate::separation::{SeparationConfig, SeparationModel};
use crate::signal::SignalConfig;
use crate::speaker::IVector;
use crate::training::{train, Dataset, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Lifetimes in seconds; `0` and `inf` are allowed.
    pub tau_grid: Vec<f64>,
    pub variants: Vec<CellVariant>,
    pub conditioning: Vec<bool>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            tau_grid: vec![0.0, 0.025, 0.1, 0.3, f64::INFINITY],
            variants: CellVariant::ALL.to_vec(),
            conditioning: vec![false],
            seeds: vec![0, 1, 2],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.variants.is_empty() || self.conditioning.is_empty() {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        if self.seeds.len() < 3 {
            return Err(Error::Config(format!("sweep needs at least 3 seeds, got {}", self.seeds.len())));
        }
        if self.tau_grid.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::Config("lifetimes must be non-negative".into()));
        }
        Ok(())
    }

    /// Every (variant, lifetime, conditioning, seed) job in a fixed order.
    pub fn cells(&self, hop_seconds: f64) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &variant in &self.variants {
            for &tau in &self.tau_grid {
                let a = lifetime_to_leak(tau, hop_seconds);
                for &conditioned in &self.conditioning {
                    for &seed in &self.seeds {
                        out.push(SweepCell {
                            variant,
                            a,
                            tau_s: leak_to_lifetime(a, hop_seconds),
                            conditioned,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: CellVariant,
    pub a: f64,
    pub tau_s: f64,
    pub conditioned: bool,
    pub seed: u64,
}

impl SweepCell {
    fn key(&self) -> (String, u64, bool, u64) {
        (self.variant.name().to_string(), self.a.to_bits(), self.conditioned, self.seed)
    }
}

/// Everything shared by the training jobs of an experiment.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentContext<'a> {
    pub manifest: &'a DatasetManifest,
    pub data: &'a Dataset,
    /// Dataset with i-vectors attached, and the i-vectors by source path.
    pub conditioned: Option<(&'a Dataset, &'a HashMap<String, IVector>)>,
    /// Template; variant, leak and input/output widths are set per job.
    pub model: &'a ModelConfig,
    pub signal: &'a SignalConfig,
    pub separation: &'a SeparationConfig,
    pub train: &'a TrainConfig,
}

#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub model: SeparationModel,
    pub report: SdrReport,
}

/// Trains one model for `cell` and scores it on the test split.
pub fn train_and_evaluate(ctx: &ExperimentContext<'_>, cell: &SweepCell) -> Result<TrainedCell> {
    let (data, ivectors) = if cell.conditioned {
        let (d, m) = ctx
            .conditioned
            .ok_or_else(|| Error::Config("conditioned job without i-vectors".into()))?;
        (d, Some(m))
    } else {
        (ctx.data, None)
    };
    let ivector_dim = match ivectors {
        Some(m) => m
            .values()
            .next()
            .map(IVector::dim)
            .ok_or_else(|| Error::Data("empty i-vector table".into()))?,
        None => 0,
    };
    let mut model_cfg = ctx.model.clone();
    model_cfg.variant = cell.variant;
    model_cfg.leak.a = cell.a;
    model_cfg.leak.hop_seconds = ctx.signal.hop_seconds();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cell.seed, &[0x696e6974]));
    let init = SeparationModel::init(
        model_cfg,
        ctx.signal.clone(),
        ctx.separation.clone(),
        ivector_dim,
        data.norm.clone(),
        &mut rng,
    )?;
    let train_cfg = TrainConfig {
        seed: cell.seed,
        ..ctx.train.clone()
    };
    let outcome = train::<std::io::Sink>(&init, &train_cfg, data, None)?;
    let report = evaluate_separation(&outcome.model, ctx.manifest, Split::Test, ivectors, cell.seed)?;
    Ok(TrainedCell {
        model: outcome.model,
        report,
    })
}

/// One CSV row: a cell and its outcome. Failed cells keep their error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: CellVariant,
    pub a: f64,
    pub tau_s: f64,
    pub ivector_conditioning: bool,
    pub seed: u64,
    pub sdr_improvement_db: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn cell(&self) -> SweepCell {
        SweepCell {
            variant: self.variant,
            a: self.a,
            tau_s: self.tau_s,
            conditioned: self.ivector_conditioning,
            seed: self.seed,
        }
    }
}

fn run_cell(ctx: &ExperimentContext<'_>, cell: &SweepCell) -> SweepRow {
    let result = train_and_evaluate(ctx, cell);
    if let Err(e) = &result {
        log::warn!("sweep cell {cell:?} failed: {e}");
    }
    SweepRow {
        variant: cell.variant,
        a: cell.a,
        tau_s: cell.tau_s,
        ivector_conditioning: cell.conditioned,
        seed: cell.seed,
        sdr_improvement_db: result.as_ref().ok().map(|r| r.report.mean_improvement_db),
        error: result.err().map(|e| e.to_string()),
    }
}

/// Runs every cell of the grid not already completed in `done`, at most
/// `jobs` at a time. Failures are recorded in the row and do not stop the
/// sweep. Returns all rows, old and new, merged by cell.
pub fn sweep_leak(ctx: &ExperimentContext<'_>, cfg: &SweepConfig, done: &[SweepRow], jobs: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let finished: BTreeMap<_, _> = done
        .iter()
        .filter(|r| r.error.is_none())
        .map(|r| (r.cell().key(), r.clone()))
        .collect();
    let todo: Vec<SweepCell> = cfg
        .cells(ctx.signal.hop_seconds())
        .into_iter()
        .filter(|c| !finished.contains_key(&c.key()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let fresh: Vec<SweepRow> = pool.install(|| todo.par_iter().map(|c| run_cell(ctx, c)).collect());
    Ok(merge_rows(done, &fresh))
}

/// Later rows replace earlier ones with the same cell; output is sorted
/// by cell.
pub fn merge_rows(old: &[SweepRow], new: &[SweepRow]) -> Vec<SweepRow> {
    let mut map = BTreeMap::new();
    for r in old.iter().chain(new) {
        map.insert(r.cell().key(), r.clone());
    }
    let mut rows: Vec<SweepRow> = map.into_values().collect();
    rows.sort_by(|x, y| {
        (x.variant.name(), x.ivector_conditioning, x.a, x.seed)
            .partial_cmp(&(y.variant.name(), y.ivector_conditioning, y.a, y.seed))
            .expect("leak values are finite")
    });
    rows
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "variant",
    "a",
    "tau_s",
    "ivector_conditioning",
    "seed",
    "sdr_improvement_db",
    "error",
];

fn float(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            float(r.a),
            float(r.tau_s),
            r.ivector_conditioning.to_string(),
            r.seed.to_string(),
            r.sdr_improvement_db.map(float).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(SWEEP_COLUMNS) {
        return Err(Error::Data(format!("{}: unexpected sweep columns", path.display())));
    }
    let bad = |what: &str| Error::Data(format!("{}: bad {what}", path.display()));
    let num = |s: &str| -> std::result::Result<f64, std::num::ParseFloatError> {
        if s == "inf" {
            Ok(f64::INFINITY)
        } else {
            s.parse()
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(SweepRow {
            variant: rec[0].parse()?,
            a: num(&rec[1]).map_err(|_| bad("a"))?,
            tau_s: num(&rec[2]).map_err(|_| bad("tau_s"))?,
            ivector_conditioning: rec[3].parse().map_err(|_| bad("ivector_conditioning"))?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
            sdr_improvement_db: match &rec[5] {
                "" => None,
                s => Some(num(s).map_err(|_| bad("sdr_improvement_db"))?),
            },
            error: (!rec[6].is_empty()).then(|| rec[6].to_string()),
        });
    }
    Ok(rows)
}

/// Mean and spread over seeds of one (variant, a, conditioning) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub variant: CellVariant,
    pub a: f64,
    /// `null` in JSON for an infinite lifetime.
    pub tau_s: Option<f64>,
    pub ivector_conditioning: bool,
    pub mean_sdr_improvement_db: Option<f64>,
    pub std_sdr_improvement_db: Option<f64>,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: BTreeMap<(&str, u64, bool), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.variant.name(), r.a.to_bits(), r.ivector_conditioning))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let vals: Vec<f64> = g.iter().filter_map(|r| r.sdr_improvement_db).collect();
            let n = vals.len() as f64;
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / n);
            let std = mean.map(|m| (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt());
            SweepSummary {
                variant: g[0].variant,
                a: g[0].a,
                tau_s: g[0].tau_s.is_finite().then_some(g[0].tau_s),
                ivector_conditioning: g[0].ivector_conditioning,
                mean_sdr_improvement_db: mean,
                std_sdr_improvement_db: std,
                seeds_ok: vals.len(),
                seeds_failed: g.len() - vals.len(),
            }
        })
        .collect()
}

/// SDR improvements of the train/test leak mismatch for one seed. Every
/// model is a BlueCut network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRow {
    pub seed: u64,
    /// Trained with a=0, tested with a=0.
    pub leak_train_leak_test_db: f64,
    /// Trained with a=1, tested with a=0.
    pub no_leak_train_leak_test_db: f64,
    /// Trained with a=1, tested with a=1.
    pub no_leak_train_no_leak_test_db: f64,
}

/// Builds a mismatch row from already trained a=1 and a=0 models.
pub fn mismatch_from_models(
    ctx: &ExperimentContext<'_>,
    no_leak: &TrainedCell,
    leak: &TrainedCell,
    seed: u64,
) -> Result<MismatchRow> {
    if no_leak.model.model.leak.a != 1.0 || leak.model.model.leak.a != 0.0 {
        return Err(Error::Config("mismatch needs one a=1 and one a=0 model".into()));
    }
    let ivectors = ctx.conditioned.map(|c| c.1);
    let overridden = no_leak.model.with_leak(0.0)?;
    let mismatched = evaluate_separation(&overridden, ctx.manifest, Split::Test, ivectors, seed)?;
    Ok(MismatchRow {
        seed,
        leak_train_leak_test_db: leak.report.mean_improvement_db,
        no_leak_train_leak_test_db: mismatched.mean_improvement_db,
        no_leak_train_no_leak_test_db: no_leak.report.mean_improvement_db,
    })
}

/// Trains BlueCut models with a=1 and a=0 per seed and evaluates the a=1
/// model with its leak forced to zero.
pub fn mismatch_experiment(ctx: &ExperimentContext<'_>, seeds: &[u64], conditioned: bool, jobs: usize) -> Result<Vec<MismatchRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cell = |a: f64| SweepCell {
                    variant: CellVariant::BlueCut,
                    a,
                    tau_s: leak_to_lifetime(a, ctx.signal.hop_seconds()),
                    conditioned,
                    seed,
                };
                let no_leak = train_and_evaluate(ctx, &cell(1.0))?;
                let leak = train_and_evaluate(ctx, &cell(0.0))?;
                mismatch_from_models(ctx, &no_leak, &leak, seed)
            })
            .collect()
    })
}
