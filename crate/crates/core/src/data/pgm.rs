//! Binary PGM (P5) with 8-bit or 16-bit big-endian samples.

use std::fs;
use std::path::Path;

use crate::data::{DepthMap, GrayImage, Image};
use crate::error::{Error, Result};

fn encode(width: usize, height: usize, maxval: u16, body: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    encode(img.width(), img.height(), 255, img.pixels())
}

pub fn encode_depth(img: &DepthMap) -> Vec<u8> {
    let body: Vec<u8> = img.pixels().iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(img.width(), img.height(), u16::MAX, &body)
}

/// Header fields and the offset of the raster.
struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text.parse().map_err(|_| "bad header field".to_string())?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("header not terminated by whitespace".into());
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("invalid header {w}x{h} maxval {maxval}"));
    }
    Ok(Header {
        width: w as usize,
        height: h as usize,
        maxval,
        offset: pos + 1,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn raster<'a>(path: &Path, bytes: &'a [u8], h: &Header, bytes_per: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * bytes_per;
    bytes
        .get(h.offset..h.offset + need)
        .ok_or_else(|| Error::format(path, format!("raster truncated, expected {need} bytes")))
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = read_bytes(path)?;
    let h = parse_header(&bytes).map_err(|d| Error::format(path, d))?;
    if h.maxval > 255 {
        return Err(Error::format(path, format!("expected 8-bit PGM, maxval {}", h.maxval)));
    }
    let px = raster(path, &bytes, &h, 1)?.to_vec();
    Image::new(h.width, h.height, px)
}

/// Reads a depth map; 8-bit files are widened unchanged.
pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = read_bytes(path)?;
    let h = parse_header(&bytes).map_err(|d| Error::format(path, d))?;
    let px = if h.maxval > 255 {
        raster(path, &bytes, &h, 2)?
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster(path, &bytes, &h, 1)?.iter().map(|&b| b as u16).collect()
    };
    Image::new(h.width, h.height, px)
}

pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_gray(img)).map_err(|e| Error::io(path, e))
}

pub fn write_depth(path: &Path, img: &DepthMap) -> Result<()> {
    fs::write(path, encode_depth(img)).map_err(|e| Error::io(path, e))
}
