//! Model checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "DLCK"
//! version      u32      1
//! dtype        u8       1 = f32, 2 = f64
//! reserved     3 bytes  zero
//! config_len   u32
//! config       config_len bytes of UTF-8 TOML (CascadeConfig)
//! count        u32      number of parameter arrays
//! per array:
//!   name_len   u16
//!   name       name_len bytes of UTF-8
//!   ndim       u8
//!   dims       ndim x u32
//!   values     prod(dims) x dtype, little-endian
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};

use super::{CascadeConfig, CascadeNet};

const MAGIC: &[u8; 4] = b"DLCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T: Real> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Detached snapshot of a network: plain data, safe to move across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real = f32> {
    pub config: CascadeConfig,
    pub params: Vec<NamedArray<T>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn from_net(net: &CascadeNet<T>) -> Self {
        let params = net
            .named_parameters()
            .into_iter()
            .map(|(name, t)| NamedArray {
                name,
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            })
            .collect();
        Checkpoint {
            config: net.config().clone(),
            params,
        }
    }

    /// Rebuilds the network; every parameter name and shape must match.
    pub fn to_net(&self) -> Result<CascadeNet<T>> {
        let net = CascadeNet::seeded(self.config.clone(), 0)?;
        let mut by_name: HashMap<&str, &NamedArray<T>> =
            self.params.iter().map(|p| (p.name.as_str(), p)).collect();
        for (name, t) in net.named_parameters() {
            let src = by_name
                .remove(name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if src.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {name}: checkpoint shape {:?}, network {:?}",
                    src.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&src.data);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Format(format!("unexpected parameter {extra}")));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&[0; 3]);
        let config = self.config.to_toml();
        out.extend_from_slice(&u32::try_from(config.len()).map_err(|_| Error::Format("config too long".into()))?.to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = u16::try_from(p.name.len()).map_err(|_| Error::Format(format!("name too long: {}", p.name)))?;
            out.extend_from_slice(&name.to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(u8::try_from(p.shape.len()).map_err(|_| Error::Format("rank too large".into()))?);
            for &d in &p.shape {
                let d = u32::try_from(d).map_err(|_| Error::Format("extent exceeds u32".into()))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in &p.data {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| Error::Format("unknown dtype code".into()))?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint holds {}, expected {}",
                dtype.name(),
                T::DTYPE.name()
            )));
        }
        r.take(3)?;
        let config_len = r.u32()? as usize;
        let config = CascadeConfig::from_toml(&r.str(config_len)?)?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = r.str(name_len)?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("extent overflow in {name}")))?;
            let bytes = r.take(numel.checked_mul(dtype.size()).ok_or_else(|| Error::Format("extent overflow".into()))?)?;
            let data = bytes.chunks_exact(dtype.size()).map(T::read_le).collect();
            params.push(NamedArray { name, shape, data });
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
