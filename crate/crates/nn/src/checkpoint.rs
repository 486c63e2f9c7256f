//! Weight checkpoints: magic "RWT1", length-prefixed config JSON, then the
//! parameters as named f32 arrays in registration order, all little-endian.
//!
//! Loading rebuilds the model from the embedded config and overwrites every
//! parameter; a checkpoint must cover the parameter set exactly. Values are
//! stored narrowed to f32, so save -> load -> save is byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{RefidConfig, RefidModel};

pub const WEIGHT_MAGIC: &[u8; 4] = b"RWT1";

pub fn encode_model(model: &RefidModel) -> Vec<u8> {
    let cfg_json = serde_json::to_vec(model.cfg()).expect("config serializes");
    let store = model.store();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg_json);
    for id in 0..store.len() {
        let name = store.name(id).as_bytes();
        let tensor = store.tensor(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &tensor.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<RefidModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != WEIGHT_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"RWT1\"")));
    }
    let json_len = cur.u32("config length")? as usize;
    let at = cur.pos as u64;
    let json = cur.take(json_len, "config JSON")?;
    let cfg: RefidConfig = serde_json::from_slice(json)
        .map_err(|e| Error::format(at, format!("config JSON: {e}")))?;
    let mut model = RefidModel::new(cfg)?;
    let expected = model.store().len();
    let mut seen = vec![false; expected];

    while !cur.at_end() {
        let at = cur.pos as u64;
        let name_len = cur.u32("array name length")? as usize;
        if name_len > 4096 {
            return Err(Error::format(at, format!("implausible name length {name_len}")));
        }
        let name = std::str::from_utf8(cur.take(name_len, "array name")?)
            .map_err(|_| Error::format(at, "array name is not UTF-8".to_string()))?
            .to_string();
        let id = model
            .store()
            .id_of(&name)
            .ok_or_else(|| Error::format(at, format!("unknown parameter {name:?}")))?;
        if seen[id] {
            return Err(Error::format(at, format!("parameter {name:?} appears twice")));
        }
        let rank = cur.u32("shape rank")? as usize;
        if rank > 8 {
            return Err(Error::format(at, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        if shape != model.store().tensor(id).shape {
            return Err(Error::format(
                at,
                format!(
                    "parameter {name:?} has shape {:?}, model expects {:?}",
                    shape,
                    model.store().tensor(id).shape
                ),
            ));
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(4 * numel, "array data")?;
        let dst = &mut model.store_mut().tensor_mut(id).data;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            dst[k] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        seen[id] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::format(
            bytes.len() as u64,
            format!("parameter {:?} missing from checkpoint", model.store().name(missing)),
        ));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &RefidModel) -> Result<()> {
    evikit_core::io::atomic_write(path, &encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RefidModel> {
    decode_model(&std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated reading {what}: need {n} bytes, have {}", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> RefidModel {
        RefidModel::new(RefidConfig {
            scales: 2,
            base_channels: 4,
            n_interp: 1,
            residual_blocks_per_evr: 1,
            image_residual_blocks: 0,
            ..RefidConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let model = toy_model();
        let bytes = encode_model(&model);
        let loaded = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&loaded), bytes);
    }

    #[test]
    fn round_trip_preserves_forward_behavior_to_f32() {
        let model = toy_model();
        let loaded = decode_model(&encode_model(&model)).unwrap();
        for id in 0..model.store().len() {
            let a = model.store().tensor(id);
            let b = loaded.store().tensor(id);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= x.abs() * 1e-6 + 1e-9);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.rwt1");
        let model = toy_model();
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(encode_model(&loaded), encode_model(&model));
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut bytes = encode_model(&toy_model());
        bytes[0] = b'X';
        match decode_model(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_model(&toy_model());
        for cut in [3, 6, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode_model(&bytes[..cut]),
                Err(Error::Format { .. })
            ));
        }
    }

    #[test]
    fn missing_tail_parameter_is_rejected() {
        let model = toy_model();
        let bytes = encode_model(&model);
        // Drop the last array entirely: find where the head parameters end
        // by re-encoding a model and walking the arrays.
        let last = model.store().len() - 1;
        let name = model.store().name(last);
        let tensor = model.store().tensor(last);
        let tail = 4 + name.len() + 4 + 4 * tensor.shape.len() + 4 * tensor.numel();
        match decode_model(&bytes[..bytes.len() - tail]) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("missing"), "{message}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_parameter_name_is_rejected() {
        let model = toy_model();
        let mut bytes = encode_model(&model);
        // First array name starts right after the config block.
        let json_len =
            u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let name_at = 8 + json_len + 4;
        bytes[name_at] = b'z';
        match decode_model(&bytes) {
            Err(Error::Format { message, .. }) => {
                assert!(message.contains("unknown parameter"), "{message}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
