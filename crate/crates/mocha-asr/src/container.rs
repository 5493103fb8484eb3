//! Binary building blocks shared by the checkpoint and dataset files: a
//! little-endian field codec, the named-tensor table and atomic writes.
//!
//! A tensor table is `u32 count`, then per tensor `name`, `u8 dtype`,
//! `u32 rank`, `rank × u64 extents`, `u64 offset`, followed by the payload
//! region holding every tensor's little-endian data at its offset.

use std::io::Write;
use std::path::{Path, PathBuf};

use mocha_asr_core::numerics::{DType, Real, Tensor};

use crate::error::{AppError, AppResult};

/// A named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn from_tensor<R: Real>(name: &str, t: &Tensor<R>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * R::DTYPE.size());
        for &v in t.data() {
            v.put_le(&mut bytes);
        }
        RawTensor {
            name: name.to_string(),
            dtype: R::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Decodes into element type `R`, converting between widths if needed.
    pub fn to_tensor<R: Real>(&self) -> AppResult<Tensor<R>> {
        let w = self.dtype.size();
        let data: Vec<R> = match self.dtype {
            d if d == R::DTYPE => self.bytes.chunks_exact(w).map(R::from_le).collect(),
            DType::F64 => self.bytes.chunks_exact(w).map(|c| R::of(f64::from_le(c))).collect(),
            DType::F32 => self.bytes.chunks_exact(w).map(|c| R::of(f32::from_le(c).as_f64())).collect(),
        };
        Ok(Tensor::new(&self.shape, data)?)
    }

    fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.size()
    }
}

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `u32` length then UTF-8 bytes.
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn table(&mut self, tensors: &[RawTensor]) {
        self.u32(tensors.len() as u32);
        let mut offset = 0u64;
        for t in tensors {
            self.str(&t.name);
            self.u8(t.dtype.code());
            self.u32(t.shape.len() as u32);
            for &e in &t.shape {
                self.u64(e as u64);
            }
            self.u64(offset);
            offset += t.bytes.len() as u64;
        }
        for t in tensors {
            self.bytes(&t.bytes);
        }
    }
}

/// Bounds-checked little-endian decoder over a whole file.
#[derive(Debug)]
pub struct Decoder<'a> {
    path: PathBuf,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(path: &Path, data: &'a [u8]) -> Self {
        Decoder {
            path: path.to_path_buf(),
            data,
            pos: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn take(&mut self, n: usize, what: &str) -> AppResult<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(AppError::Truncated {
                path: self.path.clone(),
                detail: format!("{what} needs {n} bytes at offset {}, {} left", self.pos, self.data.len() - self.pos),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> AppResult<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn str(&mut self, what: &str) -> AppResult<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| AppError::format(&self.path, format!("{what} is not UTF-8")))
    }

    /// Checks the 4-byte magic and the version word.
    pub fn header(&mut self, magic: &[u8; 4], version: u32) -> AppResult<()> {
        if self.take(4, "magic")? != magic {
            return Err(AppError::format(&self.path, format!("not a {} file", String::from_utf8_lossy(magic))));
        }
        let found = self.u32("version")?;
        if found != version {
            return Err(AppError::Version {
                path: self.path.clone(),
                found,
                expected: version,
            });
        }
        Ok(())
    }

    /// Reads a tensor table; it must extend exactly to the end of the file.
    pub fn table(&mut self) -> AppResult<Vec<RawTensor>> {
        let count = self.u32("tensor count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = self.str("tensor name")?;
            let code = self.u8("dtype")?;
            let dtype = DType::from_code(code).ok_or_else(|| AppError::format(&self.path, format!("tensor {name}: unknown dtype code {code}")))?;
            let rank = self.u32("rank")? as usize;
            if rank > 8 {
                return Err(AppError::format(&self.path, format!("tensor {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64("extent")? as usize);
            }
            let offset = self.u64("offset")? as usize;
            records.push((
                RawTensor {
                    name,
                    dtype,
                    shape,
                    bytes: Vec::new(),
                },
                offset,
            ));
        }
        let payload = &self.data[self.pos..];
        let mut end = 0;
        for (t, offset) in &mut records {
            let n = t.byte_len();
            let stop = offset.checked_add(n).filter(|&s| s <= payload.len()).ok_or_else(|| AppError::Truncated {
                path: self.path.clone(),
                detail: format!("tensor {} payload [{offset}, +{n}) beyond {} bytes", t.name, payload.len()),
            })?;
            t.bytes = payload[*offset..stop].to_vec();
            end = end.max(stop);
        }
        if end != payload.len() {
            return Err(AppError::format(&self.path, format!("{} trailing bytes after tensor payload", payload.len() - end)));
        }
        self.pos = self.data.len();
        Ok(records.into_iter().map(|(t, _)| t).collect())
    }
}

pub fn read_file(path: &Path) -> AppResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| AppError::io(path, e))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}
