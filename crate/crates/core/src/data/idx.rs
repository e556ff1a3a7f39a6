use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count·rows·cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            what: format!("{what} header"),
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an unsigned-byte IDX file holding either images or labels.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0, "IDX")?;
    match magic {
        IDX_IMAGES_MAGIC => {
            let count = be_u32(bytes, 4, "IDX")? as usize;
            let rows = be_u32(bytes, 8, "IDX")? as usize;
            let cols = be_u32(bytes, 12, "IDX")? as usize;
            let payload = payload(bytes, 16, count * rows * cols, "IDX image file")?;
            Ok(IdxData::Images(IdxImages { count, rows, cols, pixels: payload.to_vec() }))
        }
        IDX_LABELS_MAGIC => {
            let count = be_u32(bytes, 4, "IDX")? as usize;
            Ok(IdxData::Labels(payload(bytes, 8, count, "IDX label file")?.to_vec()))
        }
        other => Err(Error::format(
            "IDX file",
            format!("unknown magic {other:#010x}"),
        )),
    }
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(Error::Truncated { what: what.into(), expected, actual: bytes.len() });
        }
        return Err(Error::format(
            what,
            format!("expected {expected} bytes, found {} (trailing data)", bytes.len()),
        ));
    }
    Ok(&bytes[header..])
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    match read_idx(path)? {
        IdxData::Images(images) => Ok(images),
        IdxData::Labels(_) => Err(Error::WrongIdxKind { expected: IDX_IMAGES_MAGIC, found: IDX_LABELS_MAGIC }),
    }
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    match read_idx(path)? {
        IdxData::Labels(labels) => Ok(labels),
        IdxData::Images(_) => Err(Error::WrongIdxKind { expected: IDX_LABELS_MAGIC, found: IDX_IMAGES_MAGIC }),
    }
}

#[cfg(test)]
pub(crate) fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}
