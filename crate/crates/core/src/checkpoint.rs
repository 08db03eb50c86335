//! Self-describing binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `LKSPCKPT` |
//! | 4     | format version (`u32`, currently 1) |
//! | 8     | header length `H` in bytes (`u64`) |
//! | H     | UTF-8 JSON header |
//! | rest  | `f64` values of every tensor, back to back, in header order |
//!
//! The header is `{"kind": .., "meta": .., "tensors": [{"name", "shape",
//! "offset"}]}` where `offset` counts scalars from the start of the data
//! block and tensors are row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::params::Parameters;
use crate::recurrent::ModelConfig;
use crate::separation::{DcNetwork, SeparationConfig, SeparationModel};
use crate::signal::{NormStats, SignalConfig};
use crate::speaker::{TotalVariability, Ubm};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LKSPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("bad {} metadata: {e}", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    /// Copies stored values into `params`; names and sizes must match.
    pub fn load_into<P: Parameters>(&self, params: &mut P) -> Result<()> {
        let targets = params.tensors_mut();
        if targets.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.tensors.len(),
                targets.len()
            )));
        }
        for (dst, entry) in targets.into_iter().zip(&self.tensors) {
            let len: usize = entry.shape.iter().product();
            if dst.name != entry.name || dst.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {} ({len} values) does not match {} ({} values)",
                    entry.name,
                    dst.name,
                    dst.data.len()
                )));
            }
            dst.data.copy_from_slice(&self.data[entry.offset..entry.offset + len]);
        }
        Ok(())
    }
}

pub fn write_checkpoint<M: Serialize, P: Parameters>(path: &Path, kind: &str, meta: &M, params: &P) -> Result<()> {
    let mut offset = 0;
    let tensors: Vec<TensorEntry> = params
        .tensors()
        .iter()
        .map(|t| {
            let e = TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.data.len();
            e
        })
        .collect();
    let header = Header {
        kind: kind.to_string(),
        meta: serde_json::to_value(meta)?,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for t in params.tensors() {
        for v in t.data {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let io = |e| Error::io(path, e);
    let mut inp = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut word = [0u8; 4];
    inp.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut long = [0u8; 8];
    inp.read_exact(&mut long).map_err(io)?;
    let len = u64::from_le_bytes(long) as usize;
    let mut json = vec![0u8; len];
    inp.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut raw = Vec::new();
    inp.read_to_end(&mut raw).map_err(io)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Checkpoint("truncated data block".into()));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let needed = header
        .tensors
        .iter()
        .map(|t| t.offset + t.shape.iter().product::<usize>())
        .max()
        .unwrap_or(0);
    if needed > data.len() {
        return Err(Error::Checkpoint(format!(
            "data block holds {} values, header needs {needed}",
            data.len()
        )));
    }
    Ok(Checkpoint {
        kind: header.kind,
        meta: header.meta,
        tensors: header.tensors,
        data,
    })
}

pub const SEPARATION_KIND: &str = "separation_model";
pub const UBM_KIND: &str = "ubm";
pub const TV_KIND: &str = "total_variability";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeparationMeta {
    model: ModelConfig,
    signal: SignalConfig,
    separation: SeparationConfig,
    ivector_dim: usize,
    norm: NormStats,
}

pub fn save_separation_model(path: &Path, model: &SeparationModel) -> Result<()> {
    let meta = SeparationMeta {
        model: model.model.clone(),
        signal: model.signal.clone(),
        separation: model.separation.clone(),
        ivector_dim: model.ivector_dim,
        norm: model.norm.clone(),
    };
    write_checkpoint(path, SEPARATION_KIND, &meta, &model.net)
}

pub fn load_separation_model(path: &Path) -> Result<SeparationModel> {
    let ck = read_checkpoint(path)?;
    ck.expect_kind(SEPARATION_KIND)?;
    let meta: SeparationMeta = ck.meta()?;
    let mut net = DcNetwork::init(&meta.model, &mut ChaCha8Rng::seed_from_u64(0));
    ck.load_into(&mut net)?;
    let model = SeparationModel {
        model: meta.model,
        signal: meta.signal,
        separation: meta.separation,
        ivector_dim: meta.ivector_dim,
        norm: meta.norm,
        net,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GmmMeta {
    components: usize,
    feature_dim: usize,
}

pub fn save_ubm(path: &Path, ubm: &Ubm) -> Result<()> {
    let meta = GmmMeta {
        components: ubm.components(),
        feature_dim: ubm.feature_dim(),
    };
    write_checkpoint(path, UBM_KIND, &meta, ubm)
}

pub fn load_ubm(path: &Path) -> Result<Ubm> {
    let ck = read_checkpoint(path)?;
    ck.expect_kind(UBM_KIND)?;
    let meta: GmmMeta = ck.meta()?;
    let mut ubm = Ubm {
        weights: ndarray::Array1::zeros(meta.components),
        means: Array2::zeros((meta.components, meta.feature_dim)),
        variances: Array2::zeros((meta.components, meta.feature_dim)),
    };
    ck.load_into(&mut ubm)?;
    ubm.validate()?;
    Ok(ubm)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct TvMeta {
    rows: usize,
    dim: usize,
}

pub fn save_tv(path: &Path, tv: &TotalVariability) -> Result<()> {
    let meta = TvMeta {
        rows: tv.t.nrows(),
        dim: tv.dim(),
    };
    write_checkpoint(path, TV_KIND, &meta, tv)
}

pub fn load_tv(path: &Path) -> Result<TotalVariability> {
    let ck = read_checkpoint(path)?;
    ck.expect_kind(TV_KIND)?;
    let meta: TvMeta = ck.meta()?;
    let mut tv = TotalVariability {
        t: Array2::zeros((meta.rows, meta.dim)),
    };
    ck.load_into(&mut tv)?;
    Ok(tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recurrent::{CellVariant, LeakConfig};
    use ndarray::array;

    #[test]
    fn separation_model_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = ModelConfig {
            input_dim: 0,
            layers: 2,
            units_per_direction: 3,
            bidirectional: true,
            variant: CellVariant::BlueCut,
            leak: LeakConfig { a: 0.0, hop_seconds: 0.008 },
            output_dim: 0,
        };
        let signal = SignalConfig {
            frame_len: 8,
            hop: 2,
            ..SignalConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = SeparationModel::init(cfg, signal, SeparationConfig::default(), 2, NormStats::identity(5), &mut rng).unwrap();
        save_separation_model(&path, &m).unwrap();
        let back = load_separation_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.net.fingerprint(), m.net.fingerprint());
        assert!(load_ubm(&path).is_err());
    }

    #[test]
    fn speaker_models_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ubm = Ubm {
            weights: array![0.25, 0.75],
            means: array![[0.0, 1.0], [2.0, 3.0]],
            variances: array![[1.0, 0.5], [0.25, 2.0]],
        };
        save_ubm(&dir.path().join("u"), &ubm).unwrap();
        assert_eq!(load_ubm(&dir.path().join("u")).unwrap(), ubm);
        let tv = TotalVariability {
            t: array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]],
        };
        save_tv(&dir.path().join("t"), &tv).unwrap();
        assert_eq!(load_tv(&dir.path().join("t")).unwrap(), tv);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, b"not a checkpoint at all").unwrap();
        assert!(matches!(read_checkpoint(&p), Err(Error::Checkpoint(_))));
        assert!(matches!(read_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
