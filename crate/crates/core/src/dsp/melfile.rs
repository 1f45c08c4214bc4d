//! Binary matrix containers: `{magic[4], version u32, rows u32, cols u32}`
//! followed by row-major little-endian f32. `MELS` holds mel spectrograms;
//! `ALGN` holds attention alignments and `CORR` frame correlation matrices.

use std::path::Path;

use ndarray::Array2;

use super::MelSpectrogram;
use crate::{Error, Result};

pub const MELS_MAGIC: [u8; 4] = *b"MELS";
pub const MELS_VERSION: u32 = 1;
pub const ALGN_MAGIC: [u8; 4] = *b"ALGN";
pub const CORR_MAGIC: [u8; 4] = *b"CORR";

pub fn encode_matrix(magic: [u8; 4], version: u32, m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.len() * 4);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(magic: [u8; 4], bytes: &[u8]) -> Result<(u32, Array2<f64>)> {
    if bytes.len() < 16 || bytes[0..4] != magic {
        return Err(Error::Format(format!("expected {} container", String::from_utf8_lossy(&magic))));
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let (version, rows, cols) = (word(4), word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "{} payload is {} bytes, header declares {rows}x{cols}",
            String::from_utf8_lossy(&magic),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((version, m))
}

pub fn write_mels(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_matrix(MELS_MAGIC, MELS_VERSION, &mel.frames)).map_err(|e| Error::io_at(path, e))
}

pub fn read_mels(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let (version, frames) = decode_matrix(MELS_MAGIC, &bytes)?;
    if version != MELS_VERSION {
        return Err(Error::Unsupported(format!("MELS version {version}")));
    }
    Ok(MelSpectrogram {
        frames,
        config_ref: "file".into(),
    })
}
