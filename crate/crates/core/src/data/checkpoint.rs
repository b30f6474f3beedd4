//! Binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "RSHZ" version
//! body:  config_len config_text  count  { name_len name  n c h w  f32 * n*c*h*w }
//! crc32(body)
//! ```
//!
//! The config text is the canonical `key = value` form of [`NetConfig`];
//! tensors follow parameter registration order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autograd::ParamStore;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::network::{Net, NetConfig};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"RSHZ";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(cfg: &NetConfig, store: &ParamStore<f32>) -> Vec<u8> {
    let mut body = Vec::new();
    let put = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    let text = cfg.to_key_values().to_text();
    put(&mut body, text.len());
    body.extend_from_slice(text.as_bytes());
    put(&mut body, store.len());
    for (_, p) in store.iter() {
        put(&mut body, p.name.len());
        body.extend_from_slice(p.name.as_bytes());
        for d in p.value.shape().dims() {
            put(&mut body, d);
        }
        for v in p.value.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedCheckpoint(format!("truncated {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::MalformedCheckpoint(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetConfig, ParamStore<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::MalformedCheckpoint(format!(
            "{} bytes is too short for a header",
            bytes.len()
        )));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::MalformedCheckpoint("missing checksum".into()));
    }
    let (body, tail) = bytes[8..].split_at(bytes.len() - 12);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let cfg = NetConfig::from_key_values(&KeyValues::parse(r.text("config")?)?)?;
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.text("tensor name")?.to_string();
        let dims = [r.u32("shape")?, r.u32("shape")?, r.u32("shape")?, r.u32("shape")?];
        let shape = Shape::from(dims);
        let bytes = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::MalformedCheckpoint(format!("`{name}` shape {shape} is too large")))?;
        let raw = r.take(bytes, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store
            .add(name, Tensor::from_vec(shape, data)?)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    }
    if r.pos != body.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok((cfg, store))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes a sibling temporary file, syncs it, then renames over `path`.
pub fn save_checkpoint(path: &Path, cfg: &NetConfig, store: &ParamStore<f32>) -> Result<()> {
    let bytes = encode_checkpoint(cfg, store);
    let tmp = temp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetConfig, ParamStore<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and rebuilds the network it was saved from, checking
/// that every parameter name and shape matches.
pub fn load_model(path: &Path) -> Result<(Net, ParamStore<f32>)> {
    let (cfg, store) = load_checkpoint(path)?;
    let (fresh, net) = Net::build::<f32>(&cfg, 0)?;
    let layout = |s: &ParamStore<f32>| {
        s.iter()
            .map(|(_, p)| (p.name.clone(), p.value.shape()))
            .collect::<Vec<_>>()
    };
    if layout(&fresh) != layout(&store) {
        return Err(Error::MalformedCheckpoint(
            "parameters do not match the stored network config".into(),
        ));
    }
    Ok((net, store))
}
