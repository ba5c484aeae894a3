//! Binary greyscale PGM (`P5`). Samples are normalised to `[0, 1]` by the
//! header's maxval; 16-bit files (maxval > 255) are big-endian. Writing
//! always produces 8-bit files.

use std::path::Path;

use nae_core::ImageGrid;

use crate::error::{read_file, write_file, ParseError, Result};

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b'#' => {
                    while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                        self.pos += 1;
                    }
                }
                b'\n' => {
                    self.line += 1;
                    self.pos += 1;
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => return,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, ParseError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ParseError::new(self.line, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| ParseError::new(self.line, format!("{what} is out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageGrid, ParseError> {
    if !bytes.starts_with(b"P5") {
        return Err(ParseError::new(1, "not a binary PGM (missing P5 magic)"));
    }
    let mut h = Header {
        bytes,
        pos: 2,
        line: 1,
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::new(
            h.line,
            format!("image size must be positive, got {width}x{height}"),
        ));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(ParseError::new(
            h.line,
            format!("maxval must lie in 1..=65535, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(ParseError::new(h.line, "expected whitespace after maxval")),
    }
    let wide = maxval > 255;
    let n = width * height;
    let need = if wide { 2 * n } else { n };
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(ParseError::new(
            h.line,
            format!(
                "raster truncated: expected {need} bytes, found {}",
                raster.len()
            ),
        ));
    }
    let scale = maxval as f32;
    let pixels = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|c| f32::from(u16::from_be_bytes([c[0], c[1]])).min(scale) / scale)
            .collect()
    } else {
        raster[..need]
            .iter()
            .map(|&b| f32::from(b).min(scale) / scale)
            .collect()
    };
    ImageGrid::new(width, height, pixels).map_err(|e| ParseError::new(h.line, e.to_string()))
}

/// 8-bit encoding; values are clamped to `[0, 1]` and rounded.
pub fn encode(image: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// The image as it reads back after [`encode`].
pub fn quantize(image: &ImageGrid) -> ImageGrid {
    decode(&encode(image)).expect("encoded images always decode")
}

pub fn read(path: &Path) -> Result<ImageGrid> {
    decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, image: &ImageGrid) -> Result<()> {
    write_file(path, &encode(image))
}
