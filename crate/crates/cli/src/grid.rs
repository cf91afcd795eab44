//! Tensor to PNG conversion and image grids.

use std::io::Cursor;

use candle_core::Tensor;
use image::{ImageFormat, RgbImage};

use crate::error::CliError;

/// `(3, h, w)` tensor in `[0, 1]` to 8-bit RGB.
pub fn to_rgb(image: &Tensor) -> Result<RgbImage, CliError> {
    let (c, h, w) = image.dims3().map_err(hyperedit::Error::from)?;
    if c != 3 {
        return Err(CliError::usage(format!("expected 3 channels, got {c}")));
    }
    let v = hyperedit::nn::to_vec_f64(image)?;
    let plane = h * w;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |ch: usize| (v[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    }))
}

/// Tiles rows of equally sized images; short rows are padded black.
pub fn tile(rows: &[Vec<RgbImage>]) -> Result<RgbImage, CliError> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| CliError::usage("nothing to tile"))?;
    let (w, h) = first.dimensions();
    if rows.iter().flatten().any(|im| im.dimensions() != (w, h)) {
        return Err(CliError::usage("grid images differ in size"));
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let mut out = RgbImage::new(cols * w, rows.len() as u32 * h);
    for (r, row) in rows.iter().enumerate() {
        for (c, im) in row.iter().enumerate() {
            image::imageops::replace(&mut out, im, (c as u32 * w) as i64, (r as u32 * h) as i64);
        }
    }
    Ok(out)
}

pub fn png_bytes(image: &RgbImage) -> Result<Vec<u8>, CliError> {
    let mut buf = Cursor::new(Vec::new());
    image.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
