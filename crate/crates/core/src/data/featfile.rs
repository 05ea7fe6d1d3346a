//! `SAMPFEAT` feature files: magic, little-endian u32 (C, H, W), then C·H·W f32.

use std::io::Read;
use std::path::Path;

use super::FeatureMap;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SAMPFEAT";
const HEADER_LEN: usize = 8 + 12;

/// Raw decoded contents; saliency maps are stored with C = 1 and may be smaller than 3×3.
pub fn decode_feature_file(bytes: &[u8], origin: &str) -> Result<(usize, usize, usize, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::format(origin, "bad magic, not a SAMPFEAT file"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "truncated header"));
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let count = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::format(origin, "dimension overflow"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|x| x.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(origin, "dimension overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!(
                "{c}x{h}x{w} needs {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok((c, h, w, data))
}

/// Values are narrowed to f32 on write.
pub fn encode_feature_file(channels: usize, height: usize, width: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(data.len(), channels * height * width);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(MAGIC);
    for d in [channels, height, width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = read_checked(path)?;
    let (c, h, w, data) = decode_feature_file(&bytes, &path.display().to_string())?;
    FeatureMap::new(c, h, w, data)
}

pub fn write_feature_file(path: impl AsRef<Path>, fm: &FeatureMap) -> Result<()> {
    let bytes = encode_feature_file(fm.channels(), fm.height(), fm.width(), fm.data());
    super::atomic_write(path.as_ref(), &bytes)
}

/// Reads the magic before pulling the rest of the file into memory.
pub(crate) fn read_checked(path: &Path) -> Result<Vec<u8>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file shorter than its magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a SAMPFEAT file"));
    }
    let mut bytes = magic.to_vec();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}
