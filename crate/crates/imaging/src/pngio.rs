//! Indexed-palette mask PNGs and 8-bit grayscale slice PNGs.

use std::io::Cursor;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{shape, Error, Result};
use crate::volume::{LabelMask, MAX_LABEL};

/// RGB per class; the palette index is the class label.
pub const PALETTE: [[u8; 3]; 11] = [
    [0, 0, 0],       // background
    [230, 25, 75],   // stomach
    [60, 180, 75],   // duodenum
    [255, 225, 25],  // small intestine
    [0, 130, 200],   // appendix
    [245, 130, 48],  // cecum
    [145, 30, 180],  // ascending colon
    [70, 240, 240],  // transverse colon
    [240, 50, 230],  // descending colon
    [210, 245, 60],  // sigmoid colon
    [250, 190, 212], // rectum
];

pub const PNG_SIGNATURE: [u8; 8] = [0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A];

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode(width: usize, height: usize, color: ColorType, palette: Option<Vec<u8>>, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(usize, usize, ColorType, Vec<u8>)> {
    let mut dec = Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let info = reader.info();
    let (w, h, color, depth) = (info.width as usize, info.height as usize, info.color_type, info.bit_depth);
    if depth != BitDepth::Eight {
        return Err(Error::Png(format!("expected 8-bit samples, found {depth:?}")));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(frame.buffer_size());
    Ok((w, h, color, buf))
}

pub fn encode_mask_png(m: &LabelMask) -> Result<Vec<u8>> {
    if m.labels.len() != m.width * m.height {
        return Err(shape("encode mask", format!("{} labels for {}x{}", m.labels.len(), m.width, m.height)));
    }
    if let Some(i) = m.labels.iter().position(|&l| l > MAX_LABEL) {
        return Err(Error::BadLabel { label: m.labels[i], index: i });
    }
    encode(m.width, m.height, ColorType::Indexed, Some(PALETTE.concat()), &m.labels)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<LabelMask> {
    let (w, h, color, data) = decode(bytes)?;
    if color != ColorType::Indexed {
        return Err(Error::Png(format!("mask PNG must be indexed-color, found {color:?}")));
    }
    LabelMask::new(w, h, data)
}

pub fn encode_gray_png(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(shape("encode slice", format!("{} pixels for {width}x{height}", pixels.len())));
    }
    encode(width, height, ColorType::Grayscale, None, pixels)
}

pub fn decode_gray_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, color, data) = decode(bytes)?;
    if color != ColorType::Grayscale {
        return Err(Error::Png(format!("slice PNG must be 8-bit grayscale, found {color:?}")));
    }
    Ok((w, h, data))
}

/// Linear map of `[lo, hi]` onto 0..=255, rounding and clamping.
pub fn quantize(pixels: &[f32], lo: f32, hi: f32) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    pixels.iter().map(|&p| (((p - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}
