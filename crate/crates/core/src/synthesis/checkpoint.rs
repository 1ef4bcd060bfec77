//! Single-file model checkpoint.
//!
//! Layout (little endian):
//! `b"LGENMODL"`, `u32` format version, `u8` element width (4 = f32, 8 = f64),
//! `u32` length + UTF-8 JSON of the [`GeneratorConfig`], `u32` array count, then per
//! array: `u16` name length, name, `u8` rank, `u32` per dimension, raw elements.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Real;

use super::{GeneratorConfig, GeneratorModel};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LGENMODL";

pub fn save_model<T: Real>(path: impl AsRef<Path>, model: &GeneratorModel<T>) -> Result<()> {
    let mut out = Vec::with_capacity(model.params().len() * T::BYTES + 4096);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let config = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let entries = model.layout().entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &model.params()[e.range()] {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::Corrupt { path: self.path.to_path_buf(), detail: detail.into() }
    }
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<GeneratorModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(r.corrupt("not a generator checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let width = r.u8()? as usize;
    if width != T::BYTES {
        return Err(Error::InvalidConfig(format!(
            "checkpoint stores {width}-byte elements, requested {}-byte",
            T::BYTES
        )));
    }
    let config_len = r.u32()? as usize;
    let config: GeneratorConfig =
        serde_json::from_slice(r.take(config_len)?).map_err(|e| r.corrupt(format!("config: {e}")))?;
    config.validate()?;
    let layout = super::build_architecture(&config).0;
    let count = r.u32()? as usize;
    if count != layout.entries().len() {
        return Err(r.corrupt(format!("{count} arrays, architecture has {}", layout.entries().len())));
    }
    let mut params = vec![T::zero(); layout.total()];
    for e in layout.entries() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| r.corrupt("array name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != e.name || shape != e.shape {
            return Err(r.corrupt(format!("array {name} {shape:?} does not match expected {} {:?}", e.name, e.shape)));
        }
        let raw = r.take(e.len() * T::BYTES)?;
        for (dst, chunk) in params[e.range()].iter_mut().zip(raw.chunks_exact(T::BYTES)) {
            *dst = T::read_le(chunk);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes after the last array"));
    }
    GeneratorModel::from_params(config, params)
}

/// Load and require the stored architecture to equal `expected`'s.
pub fn load_model_expecting<T: Real>(path: impl AsRef<Path>, expected: &GeneratorConfig) -> Result<GeneratorModel<T>> {
    let model = load_model::<T>(path)?;
    if !model.config().same_architecture(expected) {
        return Err(Error::InvalidConfig(format!(
            "checkpoint architecture {:?} differs from requested {:?}",
            arch(model.config()),
            arch(expected)
        )));
    }
    Ok(model)
}

fn arch(c: &GeneratorConfig) -> [usize; 5] {
    [c.patch_size, c.input_channels, c.latent_channels, c.levels, c.base_width]
}
