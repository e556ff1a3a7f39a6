use std::path::Path;

use crate::error::{Error, Result};

/// One label byte then 32·32 pixels for each of R, G, B.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: u8 = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    /// Channel-planar `3·32·32` bytes per record.
    pub pixels: Vec<u8>,
}

impl CifarBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_cifar10(bytes: &[u8], batch: &mut CifarBatch) -> Result<()> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::format(
            "CIFAR-10 batch",
            format!(
                "size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                bytes.len()
            ),
        ));
    }
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if record[0] >= CIFAR_CLASSES {
            return Err(Error::format(
                "CIFAR-10 batch",
                format!("record {i} has label {} (expected < {CIFAR_CLASSES})", record[0]),
            ));
        }
        batch.labels.push(record[0]);
        batch.pixels.extend_from_slice(&record[1..]);
    }
    Ok(())
}

/// Reads and concatenates the given batch files in order.
pub fn read_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<CifarBatch> {
    let mut batch = CifarBatch::default();
    for path in paths {
        parse_cifar10(&std::fs::read(path)?, &mut batch)?;
    }
    Ok(batch)
}
