//! Binary PGM (P5) and PPM (P6) decoding and encoding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ImageTensor};

/// Raw decoded netpbm raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u16,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("not a netpbm file".into());
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        other => return Err(format!("unsupported netpbm variant P{}", other as char)),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header value out of range")?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("missing whitespace after header".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval: maxval as u16,
        data_start: pos + 1,
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Raster, String> {
    let h = parse_header(bytes)?;
    let count = h.width * h.height * h.channels;
    let wide = h.maxval > 255;
    let needed = if wide { count * 2 } else { count };
    let data = &bytes[h.data_start..];
    if data.len() < needed {
        return Err(format!(
            "raster truncated: expected {needed} bytes, found {}",
            data.len()
        ));
    }
    let samples: Vec<u16> = if wide {
        data[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data[..needed].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(bad) = samples.iter().find(|&&s| s > h.maxval) {
        return Err(format!("sample {bad} exceeds maxval {}", h.maxval));
    }
    Ok(Raster {
        width: h.width,
        height: h.height,
        channels: h.channels,
        maxval: h.maxval,
        samples,
    })
}

/// Encodes 8-bit samples as P5 (1 channel) or P6 (3 channels).
pub fn encode(width: usize, height: usize, channels: usize, samples: &[u8]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(samples.len(), width * height * channels);
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn raster_to_image(r: &Raster) -> Result<ImageTensor> {
    let max = f64::from(r.maxval);
    let values = r.samples.iter().map(|&s| f64::from(s) / max).collect();
    ImageTensor::new(r.height, r.width, r.channels, values)
}

/// Any sample at or above half the range counts as foreground (≥128 for 8-bit masks).
pub fn raster_to_mask(r: &Raster) -> Result<BinaryMask> {
    if r.channels != 1 {
        return Err(Error::Domain("masks must be single-channel PGM".into()));
    }
    let threshold = u32::from(r.maxval).div_ceil(2);
    let bits = r.samples.iter().map(|&s| u32::from(s) >= threshold).collect();
    BinaryMask::new(r.height, r.width, bits)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn image_to_bytes(image: &ImageTensor) -> Vec<u8> {
    let samples: Vec<u8> = image.values().iter().map(|&v| quantize(v)).collect();
    encode(image.width(), image.height(), image.channels(), &samples)
}

pub fn mask_to_bytes(mask: &BinaryMask) -> Vec<u8> {
    let samples: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(mask.width(), mask.height(), 1, &samples)
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = decode(&bytes).map_err(|m| Error::ingestion(path, m))?;
    raster_to_image(&raster).map_err(|e| Error::ingestion(path, e.to_string()))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raster = decode(&bytes).map_err(|m| Error::ingestion(path, m))?;
    raster_to_mask(&raster).map_err(|e| Error::ingestion(path, e.to_string()))
}

pub fn write_image(path: &Path, image: &ImageTensor) -> Result<()> {
    fs::write(path, image_to_bytes(image)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    fs::write(path, mask_to_bytes(mask)).map_err(|e| Error::io(path, e))
}
