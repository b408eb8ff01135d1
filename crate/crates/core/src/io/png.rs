//! Grayscale PNG export/import on the normalized `[0, 1]` scale.
//!
//! Images use 16 bits per sample; masks and edge maps use 8 bits (0/255).
//! Values are clamped to `[0, 1]` on export only.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("png: {e}"))
}

fn write(path: &Path, grid: &ImageGrid, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(f, grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(bytes).map_err(png_err)?;
    w.finish().map_err(png_err)
}

/// 16-bit grayscale; first channel only.
pub fn write_gray16(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.pixels() * 2);
    for &v in grid.channel(0) {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    write(path.as_ref(), grid, png::BitDepth::Sixteen, &bytes)
}

/// 8-bit grayscale; first channel only.
pub fn write_gray8(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<()> {
    let bytes: Vec<u8> = grid.channel(0).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write(path.as_ref(), grid, png::BitDepth::Eight, &bytes)
}

/// Reads an 8- or 16-bit grayscale PNG into `[0, 1]`.
pub fn read_gray(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(png_err(format!("expected grayscale, found {:?}", info.color_type)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..h * w].iter().map(|&b| b as f64 / 255.0).collect(),
        png::BitDepth::Sixteen => {
            buf[..h * w * 2].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect()
        }
        other => return Err(png_err(format!("unsupported bit depth {other:?}"))),
    };
    ImageGrid::new(h, w, 1, data)
}
