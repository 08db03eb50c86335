use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use leakyspan::checkpoint::{load_separation_model, load_tv, load_ubm, save_separation_model, save_tv, save_ubm};
use leakyspan::corpus::{ingest_wav_corpus, load_manifest, synth_speaker_corpus};
use leakyspan::evaluation::{
    evaluate_separation, memory_probe, mismatch_experiment, read_sweep_csv, summarize, sweep_leak, write_sweep_csv,
    ExperimentContext, ProbeRow,
};
use leakyspan::recurrent::{count_params, lifetime_to_leak, CellVariant, ModelConfig};
use leakyspan::separation::{separate, SeparationModel};
use leakyspan::signal::{read_wav, write_wav_f32};
use leakyspan::speaker::{
    extract_manifest_ivectors, read_ivector_csv, train_speaker_models, write_ivector_csv, IVector,
};
use leakyspan::training::{prepare_dataset, train};
use leakyspan::Error;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Command, Common, Preset};

const CONFIG_FILE: &str = "config.toml";
const MODEL_FILE: &str = "model.ckpt";
const UBM_FILE: &str = "ubm.ckpt";
const TV_FILE: &str = "tv.ckpt";

pub fn run(common: &Common, command: Command) -> anyhow::Result<()> {
    let mut cfg = RunConfig::resolve(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let jobs = common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting the worker pool")?;
    match command {
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml()?);
            Ok(())
        }
        Command::PrepareCorpus { out, from_wav } => {
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let manifest = match from_wav {
                Some(src) => ingest_wav_corpus(&src, &out, &cfg.corpus, cfg.seed)?,
                None => synth_speaker_corpus(&out, &cfg.corpus, cfg.seed)?,
            };
            info!("wrote {} mixtures to {}", manifest.rows.len(), out.display());
            Ok(())
        }
        Command::Train { manifest, out, ivectors } => {
            let manifest = load_manifest(&manifest)?;
            let ivectors = ivectors.as_deref().map(load_ivector_map).transpose()?;
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let data = prepare_dataset(&manifest, &cfg.signal, ivectors.as_ref())?;
            let ivector_dim = ivector_width(ivectors.as_ref())?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let init = SeparationModel::init(
                cfg.model_config(),
                cfg.signal.clone(),
                cfg.separation.clone(),
                ivector_dim,
                data.norm.clone(),
                &mut rng,
            )?;
            let log_path = out.join("train_log.jsonl");
            let log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let outcome = train(&init, &cfg.train, &data, Some(BufWriter::new(log)))?;
            save_separation_model(&out.join(MODEL_FILE), &outcome.model)?;
            #[derive(Serialize)]
            struct Summary {
                best_valid_loss: f64,
                validations: usize,
                skipped_updates: u64,
            }
            write_json(
                &out.join("summary.json"),
                &Summary {
                    best_valid_loss: outcome.best_valid_loss,
                    validations: outcome.log.len(),
                    skipped_updates: outcome.skipped_updates,
                },
            )?;
            info!("best validation loss {:.6}", outcome.best_valid_loss);
            Ok(())
        }
        Command::Separate {
            model,
            input,
            out,
            sources,
            ivectors,
            utterances,
        } => {
            let model = load_separation_model(&model)?;
            let mixture = read_wav(&input)?;
            let sources = sources.unwrap_or(cfg.separation.num_sources);
            let conditioning = match &ivectors {
                Some(path) => {
                    let map = load_ivector_map(path)?;
                    let picked = utterances
                        .iter()
                        .map(|u| {
                            map.get(u)
                                .cloned()
                                .ok_or_else(|| Error::Data(format!("{}: no i-vector for {u}", path.display())))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Some(picked)
                }
                None => None,
            };
            if model.ivector_dim > 0 && conditioning.is_none() {
                bail!(Error::Config("this model needs --ivectors and --utterances".into()));
            }
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let parts = separate(&model, &mixture, sources, conditioning.as_deref(), cfg.seed)?;
            for (k, part) in parts.iter().enumerate() {
                write_wav_f32(&out.join(format!("source_{k}.wav")), part)?;
            }
            info!("wrote {} sources to {}", parts.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            model,
            manifest,
            out,
            split,
            ivectors,
        } => {
            let model = load_separation_model(&model)?;
            let manifest = load_manifest(&manifest)?;
            let ivectors = ivectors.as_deref().map(load_ivector_map).transpose()?;
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let report = evaluate_separation(&model, &manifest, split.into(), ivectors.as_ref(), cfg.seed)?;
            write_json_lines(&out.join("scores.jsonl"), &report.mixtures)?;
            #[derive(Serialize)]
            struct Summary {
                mixtures: usize,
                mean_improvement_db: f64,
                std_improvement_db: f64,
            }
            let summary = Summary {
                mixtures: report.mixtures.len(),
                mean_improvement_db: report.mean_improvement_db,
                std_improvement_db: report.std_improvement_db,
            };
            write_json(&out.join("summary.json"), &summary)?;
            println!(
                "SI-SDR improvement {:.3} dB (std {:.3}) over {} mixtures",
                summary.mean_improvement_db, summary.std_improvement_db, summary.mixtures
            );
            Ok(())
        }
        Command::SweepLeak {
            manifest,
            out,
            ivectors,
            dry_run,
            resume,
        } => {
            let cells = cfg.sweep.cells(cfg.signal.hop_seconds());
            if dry_run {
                println!("variant,a,tau_s,ivector_conditioning,seed");
                for c in &cells {
                    println!("{},{},{},{},{}", c.variant.name(), c.a, c.tau_s, c.conditioned, c.seed);
                }
                println!("# {} jobs", cells.len());
                return Ok(());
            }
            let (manifest, out) = (manifest.expect("required by clap"), out.expect("required by clap"));
            let manifest = load_manifest(&manifest)?;
            let needs_ivectors = cfg.sweep.conditioning.contains(&true);
            let ivectors = match (&ivectors, needs_ivectors) {
                (Some(p), true) => Some(load_ivector_map(p)?),
                (None, true) => bail!(Error::Config("sweep.conditioning includes true; pass --ivectors".into())),
                _ => None,
            };
            prepare_output(&out, common.force, resume)?;
            let csv_path = out.join("sweep.csv");
            let done = if resume && csv_path.exists() {
                read_sweep_csv(&csv_path)?
            } else {
                Vec::new()
            };
            write_config(&out, &cfg)?;
            let data = prepare_dataset(&manifest, &cfg.signal, None)?;
            let conditioned_data = ivectors
                .as_ref()
                .map(|m| prepare_dataset(&manifest, &cfg.signal, Some(m)))
                .transpose()?;
            let model = cfg.model_config();
            let ctx = ExperimentContext {
                manifest: &manifest,
                data: &data,
                conditioned: conditioned_data.as_ref().zip(ivectors.as_ref()),
                model: &model,
                signal: &cfg.signal,
                separation: &cfg.separation,
                train: &cfg.train,
            };
            info!("running {} sweep jobs on {jobs} threads", cells.len());
            let rows = sweep_leak(&ctx, &cfg.sweep, &done, jobs)?;
            write_sweep_csv(&csv_path, &rows)?;
            let summary = summarize(&rows);
            write_json_lines(&out.join("summary.jsonl"), &summary)?;
            for s in &summary {
                println!(
                    "{:<9} a={:<10.6} cond={:<5} mean={} ok={} failed={}",
                    s.variant.name(),
                    s.a,
                    s.ivector_conditioning,
                    s.mean_sdr_improvement_db.map_or("n/a".into(), |v| format!("{v:.3} dB")),
                    s.seeds_ok,
                    s.seeds_failed
                );
            }
            Ok(())
        }
        Command::Mismatch { manifest, out, ivectors } => {
            let manifest = load_manifest(&manifest)?;
            let ivectors = ivectors.as_deref().map(load_ivector_map).transpose()?;
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let data = prepare_dataset(&manifest, &cfg.signal, ivectors.as_ref())?;
            let model = cfg.model_config();
            let ctx = ExperimentContext {
                manifest: &manifest,
                data: &data,
                conditioned: ivectors.as_ref().map(|m| (&data, m)),
                model: &model,
                signal: &cfg.signal,
                separation: &cfg.separation,
                train: &cfg.train,
            };
            let rows = mismatch_experiment(&ctx, &cfg.sweep.seeds, ivectors.is_some(), jobs)?;
            write_json_lines(&out.join("mismatch.jsonl"), &rows)?;
            for r in &rows {
                println!(
                    "seed {}: leak/leak {:.3} dB, no-leak/leak {:.3} dB, no-leak/no-leak {:.3} dB",
                    r.seed, r.leak_train_leak_test_db, r.no_leak_train_leak_test_db, r.no_leak_train_no_leak_test_db
                );
            }
            Ok(())
        }
        Command::ProbeMemory { out } => {
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let grid = &cfg.probe_grid;
            let jobs: Vec<(f64, u64)> = grid
                .tau_frames
                .iter()
                .flat_map(|&t| grid.seeds.iter().map(move |&s| (t, s)))
                .collect();
            let rows: Vec<Vec<ProbeRow>> = jobs
                .par_iter()
                .map(|&(tau, seed)| memory_probe(&cfg.probe, grid.variant, lifetime_to_leak(tau, 1.0), &grid.delays, seed))
                .collect::<Result<_, _>>()?;
            let rows: Vec<ProbeRow> = rows.into_iter().flatten().collect();
            let mut text = String::from("variant,a,tau_frames,delay,seed,accuracy,chance,p_value\n");
            for r in &rows {
                writeln!(
                    text,
                    "{},{:?},{},{},{},{:?},{:?},{:e}",
                    r.variant.name(),
                    r.a,
                    if r.tau_frames.is_infinite() { "inf".to_string() } else { format!("{:?}", r.tau_frames) },
                    r.delay,
                    r.seed,
                    r.accuracy,
                    r.chance,
                    r.p_value
                )?;
            }
            let path = out.join("probe.csv");
            std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
            print!("{text}");
            Ok(())
        }
        Command::CountParams { preset } => {
            let base = match preset {
                Preset::Large => ModelConfig::large_preset(CellVariant::Basic, 1.0),
                Preset::Config => cfg.model_config(),
            };
            print!("{}", param_table(&base));
            Ok(())
        }
        Command::TrainUbm { manifest, out } => {
            let manifest = load_manifest(&manifest)?;
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let (ubm, tv) = train_speaker_models(&manifest, &cfg.signal, &cfg.speaker, cfg.seed)?;
            save_ubm(&out.join(UBM_FILE), &ubm)?;
            save_tv(&out.join(TV_FILE), &tv)?;
            info!("{} components, i-vector dimension {}", ubm.components(), tv.dim());
            Ok(())
        }
        Command::ExtractIvectors {
            manifest,
            speaker_model,
            out,
        } => {
            let manifest = load_manifest(&manifest)?;
            let ubm = load_ubm(&speaker_model.join(UBM_FILE))?;
            let tv = load_tv(&speaker_model.join(TV_FILE))?;
            prepare_output(&out, common.force, false)?;
            write_config(&out, &cfg)?;
            let records = extract_manifest_ivectors(&manifest, &cfg.signal, &ubm, &tv)?;
            write_ivector_csv(&out.join("ivectors.csv"), &records)?;
            info!("wrote {} i-vectors", records.len());
            Ok(())
        }
    }
}

/// Stack-plus-head counts for every variant with and without the forget
/// gate, followed by the inter-variant differences.
pub fn param_table(base: &ModelConfig) -> String {
    let count = |variant: CellVariant, a: f64| {
        let mut m = base.clone();
        m.variant = variant;
        m.leak.a = a;
        count_params(&m, true)
    };
    let mut out = String::from("variant,a>0,a=0,difference\n");
    for v in CellVariant::ALL {
        let (with, without) = (count(v, 1.0), count(v, 0.0));
        out.push_str(&format!("{},{with},{without},{}\n", v.name(), with - without));
    }
    let basic = count(CellVariant::Basic, 1.0);
    let red = count(CellVariant::RedCut, 1.0);
    let blue = count(CellVariant::BlueCut, 1.0);
    out.push_str(&format!("basic-red_cut,{},,\n", basic - red));
    out.push_str(&format!("red_cut-blue_cut,{},,\n", red - blue));
    out
}

/// Creates `dir`; a non-empty directory is refused unless forced or
/// resumed.
fn prepare_output(dir: &Path, force: bool, resume: bool) -> anyhow::Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force && !resume {
            bail!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            );
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_ivector_map(path: &Path) -> anyhow::Result<HashMap<String, IVector>> {
    Ok(read_ivector_csv(path)?
        .into_iter()
        .map(|r| (r.utterance_id, r.ivector))
        .collect())
}

fn ivector_width(map: Option<&HashMap<String, IVector>>) -> anyhow::Result<usize> {
    match map {
        None => Ok(0),
        Some(m) => Ok(m
            .values()
            .next()
            .map(IVector::dim)
            .ok_or_else(|| Error::Data("empty i-vector table".into()))?),
    }
}

