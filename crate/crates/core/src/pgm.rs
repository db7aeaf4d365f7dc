//! Minimal PGM (portable graymap) reader and writer.
//!
//! Both the ASCII (`P2`) and binary (`P5`) variants are supported with
//! `maxval` up to 65535. Comments (`#` to end of line) may appear anywhere in
//! the header after the magic number.

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Decoded grayscale image, rows stored top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl PgmImage {
    pub fn pixel(&self, col: usize, row: usize) -> u16 {
        self.pixels[col + self.width * row]
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn next_uint(&mut self, what: &str) -> Result<u64> {
        let token = self
            .next_token()
            .ok_or_else(|| Error::Parse(format!("unexpected end of data reading {what}")))?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "invalid {what}: {:?}",
                    String::from_utf8_lossy(token)
                ))
            })
    }
}

/// Parse a PGM file held in memory.
pub fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut header = Header { bytes, pos: 0 };
    let binary = match header.next_token() {
        Some(b"P2") => false,
        Some(b"P5") => true,
        Some(other) => {
            return Err(Error::Parse(format!(
                "unsupported magic number {:?}",
                String::from_utf8_lossy(other)
            )))
        }
        None => return Err(Error::Parse("empty file".into())),
    };
    let width = header.next_uint("width")? as usize;
    let height = header.next_uint("height")? as usize;
    let maxval = header.next_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;

    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        let data_start = header.pos + 1;
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let needed = count * sample_bytes;
        let data = bytes
            .get(data_start..data_start + needed)
            .ok_or_else(|| Error::Parse(format!("raster truncated: expected {needed} bytes")))?;
        if sample_bytes == 1 {
            pixels.extend(data.iter().map(|&b| b as u16));
        } else {
            pixels.extend(
                data.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]])),
            );
        }
    } else {
        for _ in 0..count {
            let v = header.next_uint("pixel value")?;
            if v > maxval {
                return Err(Error::Parse(format!(
                    "pixel value {v} exceeds maxval {maxval}"
                )));
            }
            pixels.push(v as u16);
        }
    }
    if let Some(&v) = pixels.iter().find(|&&v| v as u64 > maxval) {
        return Err(Error::Parse(format!(
            "pixel value {v} exceeds maxval {maxval}"
        )));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes)
}

/// Encode as binary `P5`; 16-bit big-endian samples when `maxval > 255`.
pub fn encode_pgm(image: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval < 256 {
        out.extend(image.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &image.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &PgmImage) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_pgm(image))?;
    Ok(())
}
