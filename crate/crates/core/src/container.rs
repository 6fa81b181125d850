//! Binary container shared by checkpoints and ingested dataset stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NIAQ" | version: u32 | header_len: u64 | header: UTF-8 JSON | zero pad to 8
//! payload: each tensor's raw little-endian values, every tensor 8-byte aligned
//! ```
//!
//! The JSON header carries `kind`, free-form `meta`, and a tensor table of
//! `{name, shape, dtype, offset, nbytes}` with offsets relative to the payload start.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NiaqueError, Result};

pub const MAGIC: &[u8; 4] = b"NIAQ";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Blob {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl Blob {
    fn dtype(&self) -> &'static str {
        match self {
            Blob::F32(_) => "f32",
            Blob::F64(_) => "f64",
            Blob::U64(_) => "u64",
        }
    }

    fn len(&self) -> usize {
        match self {
            Blob::F32(v) => v.len(),
            Blob::F64(v) => v.len(),
            Blob::U64(v) => v.len(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            Blob::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Blob::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Blob::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: &str, bytes: &[u8]) -> Result<Blob> {
        Ok(match dtype {
            "f32" => Blob::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "f64" => Blob::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            "u64" => Blob::U64(
                bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            other => return Err(NiaqueError::Format(format!("unknown dtype `{other}`"))),
        })
    }

    fn elem_size(dtype: &str) -> usize {
        if dtype == "f32" {
            4
        } else {
            8
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Blob::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Blob::F64(v) => v.clone(),
            Blob::U64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            Blob::U64(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// In-memory form of a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    tensors: BTreeMap<String, (Vec<usize>, Blob)>,
    order: Vec<String>,
}

fn pad8(n: usize) -> usize {
    (8 - n % 8) % 8
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            tensors: BTreeMap::new(),
            order: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, blob: Blob) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != blob.len() {
            return Err(NiaqueError::Format(format!(
                "tensor `{name}`: shape {shape:?} does not match {} values",
                blob.len()
            )));
        }
        if self.tensors.insert(name.clone(), (shape, blob)).is_some() {
            return Err(NiaqueError::Format(format!("duplicate tensor `{name}`")));
        }
        self.order.push(name);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &Blob)> {
        self.tensors
            .get(name)
            .map(|(s, b)| (s.as_slice(), b))
            .ok_or_else(|| NiaqueError::Format(format!("missing tensor `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut table = Vec::with_capacity(self.order.len());
        for name in &self.order {
            let (shape, blob) = &self.tensors[name];
            let offset = payload.len();
            blob.write_le(&mut payload);
            let nbytes = payload.len() - offset;
            payload.resize(payload.len() + pad8(payload.len()), 0);
            table.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                dtype: blob.dtype().into(),
                offset: offset as u64,
                nbytes: nbytes as u64,
            });
        }
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: table,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.resize(out.len() + pad8(out.len()), 0);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(NiaqueError::Format("not a NIAQ container".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NiaqueError::Format(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| NiaqueError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        let start = hend + pad8(hend);
        let mut c = Container::new(header.kind, header.meta);
        for t in header.tensors {
            let begin = start + t.offset as usize;
            let end = begin + t.nbytes as usize;
            if end > bytes.len() || begin % 8 != 0 {
                return Err(NiaqueError::Format(format!("tensor `{}` out of bounds", t.name)));
            }
            let count: usize = t.shape.iter().product();
            if count * Blob::elem_size(&t.dtype) != t.nbytes as usize {
                return Err(NiaqueError::Format(format!("tensor `{}` has the wrong size", t.name)));
            }
            let blob = Blob::read_le(&t.dtype, &bytes[begin..end])?;
            c.push(t.name, t.shape, blob)?;
        }
        Ok(c)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let bytes = self.to_bytes().map_err(std::io::Error::other)?;
        w.write_all(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| NiaqueError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| NiaqueError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_aligned_and_tagged() {
        let mut c = Container::new("test", serde_json::json!({"a": 1}));
        c.push("x", vec![3], Blob::F32(vec![1.0, 2.0, 3.0])).unwrap();
        c.push("y", vec![1], Blob::F64(vec![0.5])).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"NIAQ");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"nope").is_err());
        let mut bytes = Container::new("k", serde_json::Value::Null).to_bytes().unwrap();
        bytes[4] = 9;
        assert!(Container::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(f in proptest::collection::vec(-1e6f64..1e6, 1..40),
                      g in proptest::collection::vec(-1e3f32..1e3, 1..17),
                      u in proptest::collection::vec(any::<u64>(), 1..9)) {
            let mut c = Container::new("p", serde_json::json!({"n": f.len()}));
            c.push("f", vec![f.len()], Blob::F64(f.clone())).unwrap();
            c.push("g", vec![g.len()], Blob::F32(g.clone())).unwrap();
            c.push("u", vec![u.len()], Blob::U64(u.clone())).unwrap();
            let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
