//! VOL1 volume files.
//!
//! A fixed 48-byte little-endian header followed by the payload:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `"VOL1"`                          |
//! | 4      | 4    | channel count `C` (u32)                 |
//! | 8      | 12   | extents `D, H, W` (u32 each)            |
//! | 20     | 24   | spacing in mm along `D, H, W` (f64 each)|
//! | 44     | 1    | dtype code (1 = f32, 2 = f64)           |
//! | 45     | 1    | label presence (0 or 1)                 |
//! | 46     | 2    | reserved, zero                          |
//!
//! Then `C*D*H*W` channel values (channel-major) and, when present, `D*H*W`
//! labels as `u8`. File size is `48 + C*D*H*W*sizeof(dtype) + D*H*W`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::DType;

use super::Volume;

pub const MAGIC: &[u8; 4] = b"VOL1";
pub const HEADER_LEN: usize = 48;

pub fn encode_volume(vol: &Volume) -> Result<Vec<u8>> {
    vol.validate()?;
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("extent {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + vol.data.len() * 4 + vol.voxels());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&to_u32(vol.channels)?.to_le_bytes());
    for &d in &vol.dims {
        out.extend_from_slice(&to_u32(d)?.to_le_bytes());
    }
    for &s in &vol.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.push(DType::F32.code());
    out.push(vol.labels.is_some() as u8);
    out.extend_from_slice(&[0, 0]);
    debug_assert_eq!(out.len(), HEADER_LEN);
    for &v in &vol.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &vol.labels {
        out.extend_from_slice(labels);
    }
    Ok(out)
}

pub fn decode_volume(buf: &[u8], subject: &str) -> Result<Volume> {
    if buf.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "VOL1 header needs {HEADER_LEN} bytes, file has {}",
            buf.len()
        )));
    }
    if &buf[..4] != MAGIC {
        return Err(Error::Format("bad magic, not a VOL1 file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let channels = u32_at(4);
    let dims = [u32_at(8), u32_at(12), u32_at(16)];
    let spacing = [f64_at(20), f64_at(28), f64_at(36)];
    let dtype = DType::from_code(buf[44])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", buf[44])))?;
    let has_labels = match buf[45] {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };

    let overflow = || Error::Format(format!("extent overflow: {channels} x {dims:?}"));
    let voxels = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(overflow)?;
    let data_len = voxels
        .checked_mul(channels)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(overflow)?;
    let label_len = if has_labels { voxels } else { 0 };
    let want = HEADER_LEN
        .checked_add(data_len)
        .and_then(|n| n.checked_add(label_len))
        .ok_or_else(overflow)?;
    if buf.len() != want {
        return Err(Error::Format(format!(
            "payload size mismatch: header implies {want} bytes, file has {}",
            buf.len()
        )));
    }

    let payload = &buf[HEADER_LEN..HEADER_LEN + data_len];
    let data: Vec<f32> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32)
            .collect(),
    };
    let labels = has_labels.then(|| buf[HEADER_LEN + data_len..].to_vec());
    Volume::new(subject, channels, dims, spacing, data, labels)
}

pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_volume(vol)?)?;
    Ok(())
}

/// Reads a VOL1 file; the subject id is the file stem.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_volume(&std::fs::read(path)?, &subject)
}

pub const EXTENSION: &str = "vol1";

/// Writes each volume as `<dir>/<subject>.vol1`, creating `dir`.
pub fn write_dataset(volumes: &[Volume], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for v in volumes {
        write_volume(v, dir.join(format!("{}.{EXTENSION}", v.subject)))?;
    }
    Ok(())
}

/// Reads every `.vol1` file of `dir` in file-name order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Volume>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == EXTENSION));
    paths.sort();
    paths.iter().map(read_volume).collect()
}
