//! Dense-array files.
//!
//! Images are NPY (format 1.0) arrays; mask bundles are NPZ archives holding
//! one `<organ>.npy` `uint8` array of shape `(channels, H, W)` per organ.
//! Archives are written uncompressed with a fixed timestamp so identical
//! inputs produce identical bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{OridError, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    fn descr(&self) -> &'static str {
        match self {
            ArrayData::U8(_) => "|u1",
            ArrayData::F32(_) => "<f4",
            ArrayData::F64(_) => "<f8",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::U8(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        match self {
            ArrayData::U8(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| (x != 0.0) as u8).collect(),
            ArrayData::F64(v) => v.iter().map(|&x| (x != 0.0) as u8).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(OridError::Shape(format!("shape {shape:?} does not match {} elements", data.len())));
        }
        Ok(NdArray { shape, data })
    }
}

pub fn encode_npy(arr: &NdArray) -> Vec<u8> {
    let shape = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!("({})", arr.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!("{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}", arr.data.descr());
    // magic(6) + version(2) + header length(2) + header, padded to a multiple of 64.
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + arr.data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &arr.data {
        ArrayData::U8(v) => out.extend_from_slice(v),
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> std::result::Result<NdArray, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("not an NPY file".into());
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(format!("unsupported NPY version {v}")),
    };
    let header = std::str::from_utf8(bytes.get(offset..offset + header_len).ok_or("truncated header")?)
        .map_err(|_| "header is not ASCII")?;
    let field = |name: &str| -> std::result::Result<&str, String> {
        let key = format!("'{name}':");
        let start = header.find(&key).ok_or(format!("header lacks {name}"))? + key.len();
        Ok(header[start..].trim_start())
    };
    if field("fortran_order")?.starts_with("True") {
        return Err("fortran-ordered arrays are not supported".into());
    }
    let descr_rest = field("descr")?;
    let descr = descr_rest.trim_start_matches('\'').split('\'').next().unwrap_or("");
    let shape_rest = field("shape")?;
    let close = shape_rest.find(')').ok_or("malformed shape")?;
    let shape: Vec<usize> = shape_rest[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[offset + header_len..];
    let need = |width: usize| -> std::result::Result<(), String> {
        if body.len() < count * width {
            Err(format!("payload holds {} bytes, expected {}", body.len(), count * width))
        } else {
            Ok(())
        }
    };
    let data = match descr {
        "|u1" | "<u1" | "|b1" => {
            need(1)?;
            ArrayData::U8(body[..count].to_vec())
        }
        "<f4" => {
            need(4)?;
            ArrayData::F32(body.chunks_exact(4).take(count).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        "<f8" => {
            need(8)?;
            ArrayData::F64(body.chunks_exact(8).take(count).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        other => return Err(format!("unsupported dtype {other}")),
    };
    Ok(NdArray { shape, data })
}

fn format_err(path: &Path, msg: impl Into<String>) -> OridError {
    OridError::ArrayFormat { path: path.to_path_buf(), msg: msg.into() }
}

pub fn write_npy(path: impl AsRef<Path>, arr: &NdArray) -> Result<()> {
    std::fs::write(path, encode_npy(arr))?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NdArray> {
    let path = path.as_ref();
    decode_npy(&std::fs::read(path)?).map_err(|m| format_err(path, m))
}

/// Archive of named arrays; entries are written in the given order.
pub fn encode_npz(entries: &[(&str, &NdArray)]) -> Result<Vec<u8>> {
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default());
    for (name, arr) in entries {
        zip.start_file(format!("{name}.npy"), opts).map_err(|e| OridError::Io(std::io::Error::other(e)))?;
        zip.write_all(&encode_npy(arr))?;
    }
    let cursor = zip.finish().map_err(|e| OridError::Io(std::io::Error::other(e)))?;
    Ok(cursor.into_inner())
}

pub fn decode_npz(bytes: &[u8]) -> std::result::Result<Vec<(String, NdArray)>, String> {
    let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(zip.len());
    for i in 0..zip.len() {
        let mut file = zip.by_index(i).map_err(|e| e.to_string())?;
        let name = file.name().trim_end_matches(".npy").to_string();
        let mut buf = Vec::with_capacity(file.size() as usize);
        file.read_to_end(&mut buf).map_err(|e| e.to_string())?;
        out.push((name, decode_npy(&buf)?));
    }
    Ok(out)
}

pub fn write_npz(path: impl AsRef<Path>, entries: &[(&str, &NdArray)]) -> Result<()> {
    std::fs::write(path, encode_npz(entries)?)?;
    Ok(())
}

pub fn read_npz(path: impl AsRef<Path>) -> Result<Vec<(String, NdArray)>> {
    let path = path.as_ref();
    decode_npz(&std::fs::read(path)?).map_err(|m| format_err(path, m))
}
