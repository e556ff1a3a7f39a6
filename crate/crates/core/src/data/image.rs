//! Binary PGM/PPM grids.

use std::path::Path;

use super::dataset::denormalize;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GRID_PAD: usize = 2;
pub const PAD_VALUE: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub pad: usize,
    pub width: usize,
    pub height: usize,
}

/// Canvas layout for `count` tiles of `h×w`. A lone image is written as is,
/// without a border.
pub fn grid_layout(count: usize, cols: usize, h: usize, w: usize) -> Result<GridLayout> {
    if count == 0 || cols == 0 {
        return Err(Error::invalid("an image grid needs at least one image and one column"));
    }
    let cols = cols.min(count);
    let rows = count.div_ceil(cols);
    let pad = if count == 1 { 0 } else { GRID_PAD };
    Ok(GridLayout {
        rows,
        cols,
        pad,
        width: cols * w + (cols + 1) * pad,
        height: rows * h + (rows + 1) * pad,
    })
}

/// Encodes a `(B, C, H, W)` batch with `C` of 1 (P5) or 3 (P6).
pub fn encode_grid<S: Scalar>(frames: &Tensor<S>, cols: usize) -> Result<Vec<u8>> {
    let &[n, c, h, w] = frames.shape() else {
        return Err(Error::invalid(format!("image grid needs (B, C, H, W), got {:?}", frames.shape())));
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid(format!("image grid needs 1 or 3 channels, got {c}"))),
    };
    let layout = grid_layout(n, cols, h, w)?;
    let mut canvas = vec![PAD_VALUE; layout.width * layout.height * c];
    let data = frames.data();
    for i in 0..n {
        let top = layout.pad + (i / layout.cols) * (h + layout.pad);
        let left = layout.pad + (i % layout.cols) * (w + layout.pad);
        for y in 0..h {
            for x in 0..w {
                let dst = ((top + y) * layout.width + left + x) * c;
                for ch in 0..c {
                    let v = data[((i * c + ch) * h + y) * w + x];
                    canvas[dst + ch] = denormalize(v.to_f64_lossy());
                }
            }
        }
    }
    let mut out = format!("{magic}\n{} {}\n255\n", layout.width, layout.height).into_bytes();
    out.extend_from_slice(&canvas);
    Ok(out)
}

pub fn write_image_grid<S: Scalar>(frames: &Tensor<S>, cols: usize, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_grid(frames, cols)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Rearranges recorded frames so each row of the grid follows one sample
/// through time. Returns the batch and the column count to use.
pub fn trajectory_grid<S: Scalar>(frames: &[Tensor<S>]) -> Result<(Tensor<S>, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("trajectory has no frames"))?;
    let shape = first.shape().to_vec();
    if shape.len() != 4 || frames.iter().any(|f| f.shape() != shape.as_slice()) {
        return Err(Error::invalid("trajectory frames must share one (B, C, H, W) shape"));
    }
    let per_image = shape[1] * shape[2] * shape[3];
    let mut data = Vec::with_capacity(frames.len() * first.numel());
    for sample in 0..shape[0] {
        for frame in frames {
            data.extend_from_slice(&frame.data()[sample * per_image..(sample + 1) * per_image]);
        }
    }
    let grid = Tensor::new(&[shape[0] * frames.len(), shape[1], shape[2], shape[3]], data)?;
    Ok((grid, frames.len()))
}
