//! Self-describing binary checkpoint archives.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (spec, seeds, epoch, masks, array table), then little-endian `f32` data
//! for every parameter followed by every buffer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelSpec};
use crate::prune::{MaskFile, MaskSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KDPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    model_seed: u64,
    run_seed: u64,
    epoch: usize,
    masks: MaskFile,
    params: Vec<ArrayEntry>,
    buffers: Vec<ArrayEntry>,
}

/// A model restored from disk with its mask and bookkeeping.
#[derive(Debug, Clone)]
pub struct LoadedCheckpoint {
    pub model: Model,
    pub masks: MaskSet,
    pub epoch: usize,
    pub run_seed: u64,
}

fn corrupt(path: &Path, what: impl Into<String>) -> Error {
    Error::Checkpoint(format!("{}: {}", path.display(), what.into()))
}

pub fn save_checkpoint(path: &Path, model: &Model, masks: &MaskSet, epoch: usize, run_seed: u64) -> Result<()> {
    let store = model.store();
    let header = Header {
        spec: model.spec().clone(),
        model_seed: model.seed(),
        run_seed,
        epoch,
        masks: masks.to_file(),
        params: store
            .params()
            .iter()
            .map(|p| ArrayEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        buffers: store
            .buffers()
            .iter()
            .map(|b| ArrayEntry {
                name: b.name.clone(),
                shape: vec![b.value.len()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u64::<LittleEndian>(json.len() as u64)?;
        w.write_all(&json)?;
        for v in store.params().iter().flat_map(|p| &p.value).chain(store.buffers().iter().flat_map(|b| &b.value)) {
            w.write_f32::<LittleEndian>(*v)?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_array(r: &mut impl Read, len: usize, path: &Path) -> Result<Vec<f32>> {
    let mut out = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut out)
        .map_err(|e| corrupt(path, format!("truncated data: {e}")))?;
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut r = BufReader::new(File::open(path).map_err(|e| corrupt(path, e.to_string()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt(path, "file too short"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt(path, "not a checkpoint archive"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| corrupt(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(path, e.to_string()))?;
    let mut model = build_model(&header.spec, header.model_seed)?;
    {
        let store = model.store_mut();
        if store.params().len() != header.params.len() || store.buffers().len() != header.buffers.len() {
            return Err(corrupt(path, "array table does not match the architecture"));
        }
        for (p, e) in store.params_mut().iter_mut().zip(&header.params) {
            if p.name != e.name || p.shape != e.shape {
                return Err(corrupt(path, format!("parameter {} does not match {}", e.name, p.name)));
            }
            p.value = read_array(&mut r, p.value.len(), path)?;
        }
        for (b, e) in store.buffers_mut().iter_mut().zip(&header.buffers) {
            if b.name != e.name || e.shape != [b.value.len()] {
                return Err(corrupt(path, format!("buffer {} does not match {}", e.name, b.name)));
            }
            b.value = read_array(&mut r, b.value.len(), path)?;
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(corrupt(path, format!("{} trailing bytes", rest.len())));
    }
    let masks = MaskSet::from_file(&header.masks)?;
    model.apply_mask(&masks)?;
    Ok(LoadedCheckpoint {
        model,
        masks,
        epoch: header.epoch,
        run_seed: header.run_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::prune::{extract_mask, rank_channels, PruneConfig, Strategy};

    #[test]
    fn round_trip_preserves_bits_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut model = build_model(&ModelSpec::wide_resnet(10, 1, 10), 3).unwrap();
        let masks = MaskSet::for_model(&model);
        let cfg = PruneConfig::new(0.25, 1, Strategy::SpSad);
        let masks = extract_mask(&rank_channels(&model, &masks).unwrap(), &masks, &cfg).unwrap().masks;
        model.apply_mask(&masks).unwrap();
        model.store_mut().buffers_mut()[0].value[0] = 0.125;
        save_checkpoint(&path, &model, &masks, 7, 42).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.fingerprint(), model.fingerprint());
        assert_eq!(back.masks, masks);
        assert_eq!((back.epoch, back.run_seed), (7, 42));
        assert_eq!(back.model.spec(), model.spec());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        let model = build_model(&ModelSpec::tabular_mlp(3, 1, 4), 0).unwrap();
        save_checkpoint(&path, &model, &MaskSet::for_model(&model), 0, 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, b"garbage!garbage!").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
