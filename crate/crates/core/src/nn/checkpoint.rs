//! Model checkpoint container shared by the encoder, synthesizer and
//! vocoder.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! magic[4] version config_len config_utf8[config_len]
//! param_count { name_len name_utf8 rows cols f32[rows*cols] }*
//! ```
//!
//! The config block is `key=value` lines.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::params::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 4],
    pub version: u32,
    pub config: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(magic: [u8; 4], config: BTreeMap<String, String>, params: ParamStore) -> Self {
        Self {
            magic,
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint config lacks `{key}`")))
    }

    pub fn config_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.config_value(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("checkpoint config `{key}` has bad value `{raw}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        put_u32(&mut out, self.version);
        let mut block = String::new();
        for (k, v) in &self.config {
            block.push_str(k);
            block.push('=');
            block.push_str(&v.replace('\\', "\\\\").replace('\n', "\\n"));
            block.push('\n');
        }
        put_u32(&mut out, block.len() as u32);
        out.extend_from_slice(block.as_bytes());
        put_u32(&mut out, self.params.len() as u32);
        for (name, m) in self.params.iter() {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, m.nrows() as u32);
            put_u32(&mut out, m.ncols() as u32);
            for v in m.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(expected_magic: [u8; 4], bytes: &[u8]) -> Result<Self> {
        let label = String::from_utf8_lossy(&expected_magic).into_owned();
        let mut r = Reader { bytes, at: 0, label: &label };
        if r.take(4)? != expected_magic {
            return Err(Error::Format(format!("not a {label} checkpoint")));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("{label} checkpoint version {version}")));
        }
        let config_len = r.u32()? as usize;
        let block = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Format(format!("{label} config block is not UTF-8")))?;
        let mut config = BTreeMap::new();
        for line in block.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("{label} config line `{line}` lacks `=`")))?;
            config.insert(k.to_string(), unescape(v));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format(format!("{label} parameter name is not UTF-8")))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("{label} parameter {name} is too large")))?;
            let data = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
            if params.id(&name).is_some() {
                return Err(Error::Format(format!("{label} parameter {name} appears twice")));
            }
            params.add(name, m);
        }
        if r.at != bytes.len() {
            return Err(Error::Format(format!("{label} checkpoint has {} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            magic: expected_magic,
            version,
            config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io_at(path, e))
    }

    pub fn load(expected_magic: [u8; 4], path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
        Self::decode(expected_magic, &bytes)
    }
}

/// Flatten a serializable struct into `field=json` entries.
pub fn config_block<T: serde::Serialize>(config: &T) -> Result<BTreeMap<String, String>> {
    let value = serde_json::to_value(config)?;
    let serde_json::Value::Object(map) = value else {
        return Err(Error::Format("checkpoint config must serialize to an object".into()));
    };
    Ok(map.into_iter().map(|(k, v)| (k, v.to_string())).collect())
}

/// Inverse of [`config_block`]. Keys the target type does not know are
/// ignored.
pub fn parse_config_block<T: serde::de::DeserializeOwned>(block: &BTreeMap<String, String>) -> Result<T> {
    let mut map = serde_json::Map::new();
    for (k, v) in block {
        if let Ok(parsed) = serde_json::from_str(v) {
            map.insert(k.clone(), parsed);
        }
    }
    Ok(serde_json::from_value(serde_json::Value::Object(map))?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    label: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("{} checkpoint is truncated", self.label)));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
