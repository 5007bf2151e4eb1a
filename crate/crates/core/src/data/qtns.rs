//! `QTNS` single-slice container.
//!
//! ```text
//! "QTNS" | u32 version | u8 kind (1=image, 2=mask) | u8 dtype (1=f32, 2=u8)
//! u32 height | u32 width | row-major LE data | u32 CRC-32 of every preceding byte
//! ```
//!
//! Masks are always `u8` class ids; images may be `f32` or `u8`.

use std::fs;
use std::path::Path;

use crate::codec::{write_atomic, Cursor};
use crate::data::NUM_CLASSES;
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"QTNS";
pub const VERSION: u32 = 1;
pub const MAX_DIM: usize = 4096;

const KIND_IMAGE: u8 = 1;
const KIND_MASK: u8 = 2;
const DTYPE_F32: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum SliceData {
    Image(Vec<f32>),
    /// Image stored as raw bytes (0..=255).
    ImageU8(Vec<u8>),
    Mask(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceFile {
    pub height: usize,
    pub width: usize,
    pub data: SliceData,
}

impl SliceFile {
    pub fn image(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::checked(height, width, SliceData::Image(data))
    }

    pub fn mask(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::checked(height, width, SliceData::Mask(data))
    }

    fn checked(height: usize, width: usize, data: SliceData) -> Result<Self> {
        let len = match &data {
            SliceData::Image(v) => v.len(),
            SliceData::ImageU8(v) | SliceData::Mask(v) => v.len(),
        };
        if height == 0 || width == 0 || height > MAX_DIM || width > MAX_DIM {
            return Err(Error::Shape(format!(
                "slice dims {height}x{width} outside 1..={MAX_DIM}"
            )));
        }
        if len != height * width {
            return Err(Error::Shape(format!(
                "slice {height}x{width} needs {} values, got {len}",
                height * width
            )));
        }
        if let SliceData::Mask(m) = &data {
            if let Some(i) = m.iter().position(|&v| v as usize >= NUM_CLASSES) {
                return Err(Error::Shape(format!("mask value {} at pixel {i} is not a class id", m[i])));
            }
        }
        Ok(SliceFile { height, width, data })
    }

    /// Image values as f32 (u8 images are widened unscaled).
    pub fn image_values(&self) -> Option<Vec<f32>> {
        match &self.data {
            SliceData::Image(v) => Some(v.clone()),
            SliceData::ImageU8(v) => Some(v.iter().map(|&b| b as f32).collect()),
            SliceData::Mask(_) => None,
        }
    }

    pub fn mask_values(&self) -> Option<&[u8]> {
        match &self.data {
            SliceData::Mask(v) => Some(v),
            _ => None,
        }
    }
}

pub fn encode_qtns(slice: &SliceFile) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + slice.height * slice.width * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (kind, dtype) = match slice.data {
        SliceData::Image(_) => (KIND_IMAGE, DTYPE_F32),
        SliceData::ImageU8(_) => (KIND_IMAGE, DTYPE_U8),
        SliceData::Mask(_) => (KIND_MASK, DTYPE_U8),
    };
    out.push(kind);
    out.push(dtype);
    out.extend_from_slice(&(slice.height as u32).to_le_bytes());
    out.extend_from_slice(&(slice.width as u32).to_le_bytes());
    match &slice.data {
        SliceData::Image(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        SliceData::ImageU8(v) | SliceData::Mask(v) => out.extend_from_slice(v),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_qtns(bytes: &[u8]) -> std::result::Result<SliceFile, FormatError> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(|_| FormatError::BadMagic {
        expected: MAGIC,
        found: bytes.to_vec(),
    })?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            supported: VERSION,
        });
    }
    let kind = cur.u8()?;
    if kind != KIND_IMAGE && kind != KIND_MASK {
        return Err(FormatError::Kind(kind));
    }
    let dtype = cur.u8()?;
    let width_bytes = match dtype {
        DTYPE_F32 => 4,
        DTYPE_U8 => 1,
        other => return Err(FormatError::DType(other)),
    };
    if kind == KIND_MASK && dtype != DTYPE_U8 {
        return Err(FormatError::Malformed("mask slices must be stored as u8".into()));
    }
    let height = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    if height == 0 || width == 0 || height > MAX_DIM || width > MAX_DIM {
        return Err(FormatError::Size(format!(
            "declared dims {height}x{width} outside 1..={MAX_DIM}"
        )));
    }
    let payload_len = height * width * width_bytes;
    let payload = cur.take(payload_len)?;
    let crc_bytes = cur.take(4)?;
    if cur.pos() != bytes.len() {
        return Err(FormatError::Size(format!(
            "{height}x{width} slice followed by {} unexpected bytes",
            bytes.len() - cur.pos()
        )));
    }
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let data = match (kind, dtype) {
        (KIND_IMAGE, DTYPE_F32) => SliceData::Image(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        (KIND_IMAGE, _) => SliceData::ImageU8(payload.to_vec()),
        _ => {
            if let Some(index) = payload.iter().position(|&v| v as usize >= NUM_CLASSES) {
                return Err(FormatError::InvalidClass {
                    value: payload[index],
                    index,
                });
            }
            SliceData::Mask(payload.to_vec())
        }
    };
    Ok(SliceFile { height, width, data })
}

pub fn write_qtns(path: &Path, slice: &SliceFile) -> Result<()> {
    write_atomic(path, &encode_qtns(slice))
}

pub fn read_qtns(path: &Path) -> Result<SliceFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_qtns(&bytes).map_err(|e| Error::format(path, e))
}

/// Reads an image slice as (height, width, values).
pub fn read_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let s = read_qtns(path)?;
    let values = s.image_values().ok_or_else(|| {
        Error::format(path, FormatError::Malformed("expected an image slice, found a mask".into()))
    })?;
    Ok((s.height, s.width, values))
}

/// Reads a mask slice as (height, width, class ids).
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let s = read_qtns(path)?;
    match s.data {
        SliceData::Mask(m) => Ok((s.height, s.width, m)),
        _ => Err(Error::format(
            path,
            FormatError::Malformed("expected a mask slice, found an image".into()),
        )),
    }
}
