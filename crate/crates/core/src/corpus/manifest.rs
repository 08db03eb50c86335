use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::synth::{synth_utterance, Voice};
use super::{derive_seed, mix_utterances, random_gains, CorpusConfig, MixtureSample};
use crate::signal::{read_wav, write_wav};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// A single-speaker recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub mixture_id: String,
    pub split: Split,
    pub mixture_path: String,
    pub source_paths: Vec<String>,
    pub gains_db: Vec<f64>,
    pub speaker_ids: Vec<String>,
}

/// Mixture table. Relative paths resolve against `base_dir`, the
/// directory holding the manifest file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

const SEP: char = ';';
const HEADER: [&str; 6] = ["mixture_id", "split", "mixture_path", "source_paths", "gains_db", "speaker_ids"];

impl DatasetManifest {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn speakers_in(&self, split: Split) -> BTreeSet<&str> {
        self.rows_in(split)
            .flat_map(|r| r.speaker_ids.iter().map(String::as_str))
            .collect()
    }

    /// Structural checks plus the rule that no test speaker appears in any
    /// other split.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.rows {
            if r.mixture_id.is_empty() || !ids.insert(r.mixture_id.as_str()) {
                return Err(Error::Data(format!("missing or duplicate mixture id {:?}", r.mixture_id)));
            }
            let n = r.source_paths.len();
            if n < 2 || r.gains_db.len() != n || r.speaker_ids.len() != n {
                return Err(Error::Data(format!(
                    "mixture {}: need matching source, gain and speaker lists of length >= 2",
                    r.mixture_id
                )));
            }
            if r.gains_db.iter().any(|g| !g.is_finite()) {
                return Err(Error::Data(format!("mixture {}: non-finite gain", r.mixture_id)));
            }
        }
        let test = self.speakers_in(Split::Test);
        let seen: BTreeSet<&str> = self
            .speakers_in(Split::Train)
            .union(&self.speakers_in(Split::Valid))
            .copied()
            .collect();
        let overlap: Vec<&str> = test.intersection(&seen).copied().collect();
        if !overlap.is_empty() {
            return Err(Error::Data(format!(
                "test speakers also appear in training data: {}",
                overlap.join(", ")
            )));
        }
        Ok(())
    }

    /// Reads the source recordings of `row` and rebuilds the mixture
    /// exactly from them and the stored gains.
    pub fn load_sample(&self, row: &ManifestRow) -> Result<MixtureSample> {
        let waves = row
            .source_paths
            .iter()
            .map(|p| read_wav(&self.resolve(p)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = waves.iter().collect();
        mix_utterances(&refs, &row.gains_db, &row.speaker_ids)
    }

    /// Distinct source recordings with their speakers, in first-use order.
    pub fn utterances(&self, split: Option<Split>) -> Vec<(String, String)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| split.is_none_or(|s| r.split == s)) {
            for (p, s) in r.source_paths.iter().zip(&r.speaker_ids) {
                if seen.insert(p.clone()) {
                    out.push((p.clone(), s.clone()));
                }
            }
        }
        out
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(&SEP.to_string())
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in &manifest.rows {
        let gains: Vec<String> = r.gains_db.iter().map(|g| format!("{g:?}")).collect();
        w.write_record([
            r.mixture_id.as_str(),
            r.split.name(),
            r.mixture_path.as_str(),
            &join(&r.source_paths),
            &gains.join(&SEP.to_string()),
            &join(&r.speaker_ids),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Csv(e),
    })?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::Data(format!(
            "{}: expected columns {}",
            path.display(),
            HEADER.join(",")
        )));
    }
    let bad = |line: usize, what: String| Error::Data(format!("{} row {line}: {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        if rec.len() != HEADER.len() {
            return Err(bad(line, format!("{} fields", rec.len())));
        }
        let split = rec[1].parse::<Split>().map_err(|e| bad(line, e.to_string()))?;
        let list = |s: &str| s.split(SEP).map(str::to_string).collect::<Vec<_>>();
        let gains = rec[4]
            .split(SEP)
            .map(|g| g.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(line, format!("gain: {e}")))?;
        rows.push(ManifestRow {
            mixture_id: rec[0].to_string(),
            split,
            mixture_path: rec[2].to_string(),
            source_paths: list(&rec[3]),
            gains_db: gains,
            speaker_ids: list(&rec[5]),
        });
    }
    let manifest = DatasetManifest {
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        rows,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Draws mixtures for every split: two distinct speakers of the split, one
/// random recording of each, independent gains. The last
/// `cfg.test_speakers` speakers in sorted order are held out for testing.
pub fn plan_mixtures(utterances: &[Utterance], cfg: &CorpusConfig, seed: u64) -> Result<Vec<ManifestRow>> {
    let mut by_speaker: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in utterances {
        by_speaker.entry(&u.speaker_id).or_default().push(u);
    }
    let speakers: Vec<&str> = by_speaker.keys().copied().collect();
    if speakers.len() < cfg.test_speakers + 2 || cfg.test_speakers < 2 {
        return Err(Error::Data(format!(
            "{} speakers cannot provide {} held-out test speakers and two training speakers",
            speakers.len(),
            cfg.test_speakers
        )));
    }
    let (seen, held_out) = speakers.split_at(speakers.len() - cfg.test_speakers);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6d6978]));
    let mut rows = Vec::new();
    for (split, count, pool) in [
        (Split::Train, cfg.train_mixtures, seen),
        (Split::Valid, cfg.valid_mixtures, seen),
        (Split::Test, cfg.test_mixtures, held_out),
    ] {
        for i in 0..count {
            let pair: Vec<&&str> = pool.choose_multiple(&mut rng, 2).collect();
            let picks: Vec<&Utterance> = pair
                .iter()
                .map(|s| *by_speaker[**s].choose(&mut rng).expect("speaker has recordings"))
                .collect();
            let id = format!("{split}_{i:05}");
            rows.push(ManifestRow {
                mixture_path: format!("mixtures/{split}/{id}.wav"),
                mixture_id: id,
                split,
                source_paths: picks.iter().map(|u| u.path.clone()).collect(),
                gains_db: random_gains(2, cfg.min_gain_db, cfg.max_gain_db, &mut rng),
                speaker_ids: picks.iter().map(|u| u.speaker_id.clone()).collect(),
            });
        }
    }
    Ok(rows)
}

/// Writes each mixture as a WAV file at its `mixture_path`.
fn materialize(manifest: &DatasetManifest) -> Result<()> {
    manifest.rows.par_iter().try_for_each(|row| {
        let sample = manifest.load_sample(row)?;
        let path = manifest.resolve(&row.mixture_path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_wav(&path, &sample.mixture)
    })
}

/// Synthesises a speaker corpus under `out_dir`: one directory of
/// recordings per speaker, materialised mixtures and `manifest.csv`.
pub fn synth_speaker_corpus(out_dir: &Path, cfg: &CorpusConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    let voices: Vec<Voice> = (0..cfg.num_speakers)
        .map(|s| Voice::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, s as u64]))))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.num_speakers)
        .flat_map(|s| (0..cfg.utterances_per_speaker).map(move |u| (s, u)))
        .collect();
    let utterances = jobs
        .par_iter()
        .map(|&(s, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, s as u64, u as u64]));
            let secs = rng.random_range(cfg.min_seconds..=cfg.max_seconds);
            let wave = synth_utterance(&voices[s], secs, &mut rng);
            let speaker_id = format!("spk{s:02}");
            let id = format!("{speaker_id}_u{u:02}");
            let rel = format!("utterances/{speaker_id}/{id}.wav");
            let path = out_dir.join(&rel);
            std::fs::create_dir_all(path.parent().expect("nested path"))
                .map_err(|e| Error::io(out_dir, e))?;
            write_wav(&path, &wave)?;
            Ok(Utterance {
                id,
                speaker_id,
                path: rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        base_dir: out_dir.to_path_buf(),
        rows: plan_mixtures(&utterances, cfg, seed)?,
    };
    materialize(&manifest)?;
    save_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

/// Builds a corpus from `src_dir/<speaker>/*.wav`. Every recording is
/// format-checked; mixtures and `manifest.csv` are written under `out_dir`.
pub fn ingest_wav_corpus(src_dir: &Path, out_dir: &Path, cfg: &CorpusConfig, seed: u64) -> Result<DatasetManifest> {
    let src = src_dir.canonicalize().map_err(|e| Error::io(src_dir, e))?;
    let mut utterances = Vec::new();
    let mut speakers: Vec<PathBuf> = std::fs::read_dir(&src)
        .map_err(|e| Error::io(&src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    speakers.sort();
    for dir in &speakers {
        let speaker_id = dir.file_name().expect("directory name").to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for f in files {
            read_wav(&f)?;
            utterances.push(Utterance {
                id: f.file_stem().expect("file name").to_string_lossy().into_owned(),
                speaker_id: speaker_id.clone(),
                path: f.to_string_lossy().into_owned(),
            });
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = if utterances.is_empty() {
        log::warn!("no recordings found under {}", src.display());
        DatasetManifest {
            base_dir: out_dir.to_path_buf(),
            rows: Vec::new(),
        }
    } else {
        let m = DatasetManifest {
            base_dir: out_dir.to_path_buf(),
            rows: plan_mixtures(&utterances, cfg, seed)?,
        };
        materialize(&m)?;
        m
    };
    save_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, split: Split, speakers: [&str; 2]) -> ManifestRow {
        ManifestRow {
            mixture_id: id.into(),
            split,
            mixture_path: format!("m/{id}.wav"),
            source_paths: vec!["a.wav".into(), "b.wav".into()],
            gains_db: vec![0.5, 4.25],
            speaker_ids: speakers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn test_speaker_in_train_rejected() {
        let m = DatasetManifest {
            base_dir: PathBuf::new(),
            rows: vec![row("x", Split::Train, ["a", "b"]), row("y", Split::Test, ["b", "c"])],
        };
        assert!(m.validate().is_err());
        let ok = DatasetManifest {
            base_dir: PathBuf::new(),
            rows: vec![row("x", Split::Train, ["a", "b"]), row("y", Split::Test, ["d", "c"])],
        };
        ok.validate().unwrap();
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            base_dir: dir.path().to_path_buf(),
            rows: vec![
                row("x", Split::Train, ["a", "b"]),
                row("v", Split::Valid, ["b", "a"]),
                row("y", Split::Test, ["d", "c"]),
            ],
        };
        let p = dir.path().join("manifest.csv");
        save_manifest(&p, &m).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn malformed_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        std::fs::write(&p, "mixture_id,split,mixture_path,source_paths,gains_db,speaker_ids\nx,train,m.wav,a;b,0;zz,s;t\n").unwrap();
        assert!(load_manifest(&p).is_err());
        std::fs::write(&p, "mixture_id,split,mixture_path,source_paths,gains_db,speaker_ids\nx,dev,m.wav,a;b,0;1,s;t\n").unwrap();
        assert!(load_manifest(&p).is_err());
    }

    #[test]
    fn empty_directory_gives_empty_manifest() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let m = ingest_wav_corpus(src.path(), out.path(), &CorpusConfig::default(), 0).unwrap();
        assert!(m.rows.is_empty());
        assert!(load_manifest(&out.path().join("manifest.csv")).unwrap().rows.is_empty());
    }
}
