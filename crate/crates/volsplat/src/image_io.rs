//! PNG (8-bit, clamped) and PFM (32-bit float) codecs.
//!
//! Image row 0 is the bottom of the view, camera +x pointing up. PNG stores
//! the top row first, so rows are flipped on the way in and out. PFM already
//! stores the bottom row first.

use std::path::Path;

use volsplat_core::{ChannelKind, Image};

use crate::atomic::{read_bytes, write_atomic};
use crate::error::{Error, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode `image` (1 or 3 channels) and an optional alpha map as PNG bytes.
pub fn encode_png(image: &Image, alpha: Option<&Image>) -> Result<Vec<u8>> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let color = match (c, alpha.is_some()) {
        (1, false) => png::ColorType::Grayscale,
        (1, true) => png::ColorType::GrayscaleAlpha,
        (3, false) => png::ColorType::Rgb,
        (3, true) => png::ColorType::Rgba,
        _ => {
            return Err(Error::Config(format!(
                "PNG output needs 1 or 3 channels, image has {c}"
            )))
        }
    };
    if let Some(a) = alpha {
        a.expect_shape(h, w, 1)?;
    }
    let out_c = c + usize::from(alpha.is_some());
    let mut pixels = Vec::with_capacity(h * w * out_c);
    for i in (0..h).rev() {
        for j in 0..w {
            pixels.extend(image.pixel(i, j).iter().map(|&v| to_u8(v)));
            if let Some(a) = alpha {
                pixels.push(to_u8(a.pixel(i, j)[0]));
            }
        }
    }
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Failed(format!("png encoding: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Failed(format!("png encoding: {e}")))?;
    }
    Ok(bytes)
}

pub fn write_png(path: &Path, image: &Image, alpha: Option<&Image>) -> Result<()> {
    write_atomic(path, &encode_png(image, alpha)?)
}

/// A decoded PNG: the colour or gray channels and, if present, alpha.
#[derive(Debug)]
pub struct DecodedPng {
    pub image: Image,
    pub alpha: Option<Image>,
}

pub fn decode_png(path: &Path, bytes: &[u8]) -> Result<DecodedPng> {
    let perr = |e: png::DecodingError| Error::parse(path, format!("png: {e}"));
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(perr)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(perr)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (channels, has_alpha) = match info.color_type {
        png::ColorType::Grayscale => (1, false),
        png::ColorType::GrayscaleAlpha => (1, true),
        png::ColorType::Rgb => (3, false),
        png::ColorType::Rgba => (3, true),
        png::ColorType::Indexed => return Err(Error::parse(path, "png: unexpanded palette")),
    };
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let stride = channels + usize::from(has_alpha);
    let sample = |idx: usize| -> f64 {
        if sixteen {
            u16::from_be_bytes([buf[2 * idx], buf[2 * idx + 1]]) as f64 / 65535.0
        } else {
            buf[idx] as f64 / 255.0
        }
    };
    let mut data = vec![0.0; h * w * channels];
    let mut alpha = vec![0.0; h * w];
    for r in 0..h {
        let i = h - 1 - r;
        for j in 0..w {
            let src = (r * w + j) * stride;
            let dst = i * w + j;
            for c in 0..channels {
                data[dst * channels + c] = sample(src + c);
            }
            if has_alpha {
                alpha[dst] = sample(src + channels);
            }
        }
    }
    let kind = if channels == 3 {
        ChannelKind::Color
    } else {
        ChannelKind::Feature
    };
    Ok(DecodedPng {
        image: Image::from_data(h, w, channels, kind, data)?,
        alpha: if has_alpha {
            Some(Image::from_data(h, w, 1, ChannelKind::Alpha, alpha)?)
        } else {
            None
        },
    })
}

pub fn read_png(path: &Path) -> Result<DecodedPng> {
    decode_png(path, &read_bytes(path)?)
}

/// Encode a 1- or 3-channel image as little-endian PFM.
pub fn encode_pfm(image: &Image) -> Result<Vec<u8>> {
    let tag = match image.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::Config(format!(
                "PFM output needs 1 or 3 channels, image has {c}"
            )))
        }
    };
    let mut bytes = format!("{tag}\n{} {}\n-1.0\n", image.width(), image.height()).into_bytes();
    bytes.reserve(image.data().len() * 4);
    for &v in image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(bytes)
}

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_pfm(image)?)
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::parse(path, format!("pfm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields
            .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let channels = match fields[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("missing PF/Pf tag")),
    };
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let n = w * h * channels;
    let body = bytes
        .get(pos..pos + 4 * n)
        .ok_or_else(|| bad("truncated data"))?;
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if scale < 0.0 {
                f32::from_le_bytes(b) as f64
            } else {
                f32::from_be_bytes(b) as f64
            }
        })
        .collect();
    let kind = if channels == 3 {
        ChannelKind::Color
    } else {
        ChannelKind::Feature
    };
    Ok(Image::from_data(h, w, channels, kind, data)?)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    decode_pfm(path, &read_bytes(path)?)
}
