//! PNG and PFM writers/readers for rendered buffers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[[f32; 3]]) -> Result<()> {
    let data: Vec<u8> = rgb.iter().flat_map(|p| p.map(to_u8)).collect();
    let img = RgbImage::from_raw(width, height, data).ok_or_else(|| Error::DimensionMismatch {
        expected: format!("{width}x{height} pixels"),
        actual: rgb.len().to_string(),
    })?;
    img.save(path)?;
    Ok(())
}

pub fn write_mask_png(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(width, height, data).ok_or_else(|| Error::DimensionMismatch {
        expected: format!("{width}x{height} pixels"),
        actual: mask.len().to_string(),
    })?;
    img.save(path)?;
    Ok(())
}

/// Reads an RGB PNG into linear `[0, 1]` floats.
pub fn read_rgb_png(path: &Path) -> Result<(u32, u32, Vec<[f32; 3]>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img
        .pixels()
        .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
        .collect();
    Ok((w, h, px))
}

/// Single-channel little-endian PFM. Rows are stored bottom-to-top as the
/// format requires; `+∞` is written as 0.
pub fn write_depth_pfm(path: &Path, width: u32, height: u32, depth: &[f32]) -> Result<()> {
    if depth.len() != width as usize * height as usize {
        return Err(Error::DimensionMismatch {
            expected: format!("{width}x{height} pixels"),
            actual: depth.len().to_string(),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io)?;
    for row in (0..height as usize).rev() {
        for &d in &depth[row * width as usize..(row + 1) * width as usize] {
            let v = if d.is_finite() { d } else { 0.0 };
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a single-channel PFM written by [`write_depth_pfm`], top row first.
pub fn read_depth_pfm(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    let bad = |m: &str| Error::Schema(format!("{}: {m}", path.display()));
    if fields.len() < 4 || fields[0] != "Pf" {
        return Err(bad("not a single-channel PFM"));
    }
    let w: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let n = w as usize * h as usize;
    let data = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated data"))?;
    let mut out = vec![0f32; n];
    for (i, c) in data.chunks_exact(4).enumerate() {
        let arr = [c[0], c[1], c[2], c[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        let (row, col) = (i / w as usize, i % w as usize);
        out[(h as usize - 1 - row) * w as usize + col] = v;
    }
    Ok((w, h, out))
}
