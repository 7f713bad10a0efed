use std::io::Cursor;

use image::{ImageFormat, RgbImage, RgbaImage};

use crate::render::Image;

/// `round(255 · clamp(v, 0, 1))`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Straight-alpha RGBA from a render over a black background: color is
/// un-premultiplied by opacity, alpha is the opacity.
pub fn straight_alpha(premultiplied: [f64; 3], opacity: f64) -> [u8; 4] {
    let a = quantize(opacity);
    if opacity <= 0.0 {
        return [0, 0, 0, a];
    }
    let c = premultiplied.map(|v| quantize(v / opacity));
    [c[0], c[1], c[2], a]
}

/// Alpha-composites 8-bit straight-alpha pixels onto `background`.
pub fn composite_rgba(width: u32, height: u32, rgba: &[[u8; 4]], background: [f64; 3]) -> Image {
    let pixels = rgba
        .iter()
        .map(|p| {
            let a = p[3] as f64 / 255.0;
            let mut out = [0f32; 3];
            for c in 0..3 {
                out[c] = (p[c] as f64 / 255.0 * a + background[c] * (1.0 - a)) as f32;
            }
            out
        })
        .collect();
    Image {
        width,
        height,
        pixels,
    }
}

pub fn encode_rgba_png(width: u32, height: u32, rgba: &[[u8; 4]]) -> Vec<u8> {
    let raw: Vec<u8> = rgba.iter().flatten().copied().collect();
    let img = RgbaImage::from_raw(width, height, raw).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// 8-bit RGB PNG of a rendered image.
pub fn encode_rgb_png(image: &Image) -> Vec<u8> {
    let raw: Vec<u8> = image
        .pixels
        .iter()
        .flat_map(|p| p.map(|v| quantize(v as f64)))
        .collect();
    let img = RgbImage::from_raw(image.width, image.height, raw).expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// Decodes any PNG into straight-alpha RGBA8.
pub fn decode_rgba_png(bytes: &[u8]) -> Result<(u32, u32, Vec<[u8; 4]>), String> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| e.to_string())?
        .into_rgba8();
    let (w, h) = img.dimensions();
    let px = img
        .into_raw()
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    Ok((w, h, px))
}
