//! Binary checkpoint format: magic, version, a JSON metadata blob, then a
//! named-tensor table with little-endian payloads. Round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nncore::{Real, Tensor};

const MAGIC: &[u8; 8] = b"PLEMBIN\x01";
const VERSION: u32 = 1;

/// Typed tensor payload as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F32 { .. } => f32::DTYPE,
            TensorData::F64 { .. } => f64::DTYPE,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32 { shape, .. } => shape,
            TensorData::F64 { shape, .. } => shape,
        }
    }
}

/// Conversion between generic tensors and the on-disk payload enum.
pub trait CheckpointScalar: Real {
    fn pack(shape: Vec<usize>, data: Vec<Self>) -> TensorData;
    fn unpack(td: &TensorData) -> Option<(Vec<usize>, Vec<Self>)>;
}

impl CheckpointScalar for f32 {
    fn pack(shape: Vec<usize>, data: Vec<Self>) -> TensorData {
        TensorData::F32 { shape, data }
    }
    fn unpack(td: &TensorData) -> Option<(Vec<usize>, Vec<Self>)> {
        match td {
            TensorData::F32 { shape, data } => Some((shape.clone(), data.clone())),
            _ => None,
        }
    }
}

impl CheckpointScalar for f64 {
    fn pack(shape: Vec<usize>, data: Vec<Self>) -> TensorData {
        TensorData::F64 { shape, data }
    }
    fn unpack(td: &TensorData) -> Option<(Vec<usize>, Vec<Self>)> {
        match td {
            TensorData::F64 { shape, data } => Some((shape.clone(), data.clone())),
            _ => None,
        }
    }
}

/// An ordered named-tensor container with a free-form JSON metadata string.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    entries: Vec<(String, TensorData)>,
}

impl Checkpoint {
    pub fn new(meta: impl Into<String>) -> Self {
        Checkpoint {
            meta: meta.into(),
            entries: Vec::new(),
        }
    }

    pub fn push<F: CheckpointScalar>(&mut self, name: impl Into<String>, tensor: &Tensor<F>) {
        self.entries.push((
            name.into(),
            F::pack(tensor.shape().to_vec(), tensor.data().to_vec()),
        ));
    }

    pub fn push_vec<F: CheckpointScalar>(&mut self, name: impl Into<String>, data: &[F]) {
        self.entries
            .push((name.into(), F::pack(vec![data.len()], data.to_vec())));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get<F: CheckpointScalar>(&self, name: &str) -> Result<Tensor<F>> {
        let (_, td) = self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::format(format!("checkpoint has no tensor `{}`", name)))?;
        let (shape, data) = F::unpack(td).ok_or_else(|| {
            Error::format(format!(
                "tensor `{}` stored as dtype {} not {}",
                name,
                td.dtype(),
                F::DTYPE_NAME
            ))
        })?;
        Ok(Tensor::from_vec(&shape, data))
    }

    pub fn get_vec<F: CheckpointScalar>(&self, name: &str) -> Result<Vec<F>> {
        Ok(self.get::<F>(name)?.data().to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = self.meta.as_bytes();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, td) in &self.entries {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(td.dtype());
            let shape = td.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match td {
                TensorData::F32 { data, .. } => {
                    for v in data {
                        v.write_le(&mut out);
                    }
                }
                TensorData::F64 { data, .. } => {
                    for v in data {
                        v.write_le(&mut out);
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {}",
                version
            )));
        }
        let meta_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let meta = String::from_utf8(cur.take(meta_len)?.to_vec())
            .map_err(|_| Error::format("checkpoint metadata is not UTF-8"))?;
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let dtype = cur.take(1)?[0];
            let ndim = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize);
            }
            let len: usize = shape.iter().product();
            let td = match dtype {
                0 => {
                    let raw = cur.take(len * 4)?;
                    let data = raw.chunks_exact(4).map(f32::read_le).collect();
                    TensorData::F32 { shape, data }
                }
                1 => {
                    let raw = cur.take(len * 8)?;
                    let data = raw.chunks_exact(8).map(f64::read_le).collect();
                    TensorData::F64 { shape, data }
                }
                other => return Err(Error::format(format!("unknown dtype tag {}", other))),
            };
            entries.push((name, td));
        }
        Ok(Checkpoint {
            meta,
            entries,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Writes via a temp file in the same directory then renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_string())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let mut ck = Checkpoint::new(r#"{"kind":"test"}"#);
        let t32: Tensor<f32> = Tensor::from_vec(&[2, 3], vec![1.5, -0.25, 3.75, 0.1, -1e-20, 7.0]);
        let t64: Tensor<f64> =
            Tensor::from_vec(&[4], vec![std::f64::consts::PI, -0.0, 1e300, 5e-324]);
        ck.push("weights", &t32);
        ck.push("moments", &t64);

        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        let r32: Tensor<f32> = back.get("weights").unwrap();
        let r64: Tensor<f64> = back.get("moments").unwrap();
        // Bit-exact comparison.
        assert!(r32
            .data()
            .iter()
            .zip(t32.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(r64
            .data()
            .iter()
            .zip(t64.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(r32.shape(), &[2, 3]);
        // Serialization is deterministic.
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn wrong_dtype_and_missing_name_error() {
        let mut ck = Checkpoint::new("");
        ck.push("t", &Tensor::<f32>::zeros(&[2]));
        assert!(ck.get::<f64>("t").is_err());
        assert!(ck.get::<f32>("absent").is_err());
    }

    #[test]
    fn corrupt_bytes_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let ck = Checkpoint::new("m");
        let mut bytes = ck.to_bytes();
        bytes.truncate(10);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut ck = Checkpoint::new("{}");
        ck.push_vec("v", &[1.0f32, 2.0, 3.0]);
        ck.write_file(&path).unwrap();
        let back = Checkpoint::read_file(&path).unwrap();
        assert_eq!(back.get_vec::<f32>("v").unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
