//! `SAMPCKPT` checkpoints.
//!
//! Layout: the 8-byte magic, a little-endian u32 header length, a UTF-8 header,
//! then raw little-endian tensor payloads. Header lines are either
//! `meta <key> <value>` or `tensor <name> <dtype> <d0>x<d1>.. <byte offset>`,
//! with offsets relative to the first payload byte.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SAMPCKPT";
/// Upper bound on header size; larger values indicate corruption.
const MAX_HEADER: usize = 16 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("checkpoint is missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Shape(format!("checkpoint is missing metadata `{key}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') || v.is_empty() {
                return Err(Error::invalid(format!("unencodable metadata {k:?}={v:?}")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            let count: usize = t.shape.iter().product();
            if count != t.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            if t.name.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("tensor name {:?}", t.name)));
            }
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            header.push_str(&format!(
                "tensor {} {} {} {offset}\n",
                t.name,
                t.dtype.name(),
                shape.join("x")
            ));
            offset += count * t.dtype.size();
        }
        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in &self.tensors {
            match t.dtype {
                DType::F32 => t
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                DType::F64 => t
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::format(origin, "bad magic, not a SAMPCKPT file"));
        }
        if bytes.len() < 12 {
            return Err(Error::format(origin, "truncated header length"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if header_len > MAX_HEADER || 12 + header_len > bytes.len() {
            return Err(Error::format(origin, format!("header length {header_len} exceeds file")));
        }
        let header = std::str::from_utf8(&bytes[12..12 + header_len])
            .map_err(|_| Error::format(origin, "header is not UTF-8"))?;
        let payload = &bytes[12 + header_len..];

        let mut ckpt = Checkpoint::default();
        for (i, line) in header.lines().enumerate() {
            let bad = |m: &str| Error::format(origin, format!("header line {}: {m}", i + 1));
            let parts: Vec<&str> = line.split(' ').collect();
            match parts.first().copied() {
                Some("meta") if parts.len() >= 3 => {
                    ckpt.meta.insert(parts[1].to_string(), parts[2..].join(" "));
                }
                Some("tensor") if parts.len() == 5 => {
                    let dtype = DType::parse(parts[2]).ok_or_else(|| bad("unknown dtype"))?;
                    let shape: Vec<usize> = parts[3]
                        .split('x')
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad shape"))?;
                    let offset: usize = parts[4].parse().map_err(|_| bad("bad offset"))?;
                    let count = shape
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| bad("shape overflow"))?;
                    let end = count
                        .checked_mul(dtype.size())
                        .and_then(|n| n.checked_add(offset))
                        .ok_or_else(|| bad("size overflow"))?;
                    if end > payload.len() {
                        return Err(bad(&format!("tensor {} truncated", parts[1])));
                    }
                    let raw = &payload[offset..end];
                    let data = match dtype {
                        DType::F32 => raw
                            .chunks_exact(4)
                            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                            .collect(),
                        DType::F64 => raw
                            .chunks_exact(8)
                            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                            .collect(),
                    };
                    ckpt.tensors.push(TensorEntry {
                        name: parts[1].to_string(),
                        dtype,
                        shape,
                        data,
                    });
                }
                _ => return Err(bad("unrecognized record")),
            }
        }
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    super::atomic_write(path.as_ref(), &ckpt.encode()?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file shorter than its magic"))?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a SAMPCKPT file"));
    }
    let mut bytes = magic.to_vec();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, &path.display().to_string())
}
