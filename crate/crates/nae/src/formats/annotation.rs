//! Point annotation files:
//!
//! ```json
//! {
//!   "image": "scene_00000.pgm",
//!   "image_size": [64, 64],
//!   "points": [
//!     [12.5, 30.25],
//!     [40.0, 7.75]
//!   ]
//! }
//! ```
//!
//! Coordinates are written in shortest round-trip form, so reading back a
//! written file reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use nae_core::{Point, PointSet};
use serde::Deserialize;

use crate::error::{read_file, write_file, ParseError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationFile {
    /// Image file name, relative to the annotation file's directory.
    pub image: String,
    pub points: PointSet,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    image: String,
    image_size: [usize; 2],
    points: Vec<[f64; 2]>,
}

pub fn to_string(ann: &AnnotationFile) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let name = serde_json::to_string(&ann.image).expect("strings always serialize");
    let _ = writeln!(out, "  \"image\": {name},");
    let _ = writeln!(
        out,
        "  \"image_size\": [{}, {}],",
        ann.points.width(),
        ann.points.height()
    );
    if ann.points.is_empty() {
        out.push_str("  \"points\": []\n");
    } else {
        out.push_str("  \"points\": [\n");
        let n = ann.points.len();
        for (i, p) in ann.points.points().iter().enumerate() {
            let sep = if i + 1 < n { "," } else { "" };
            let _ = writeln!(out, "    [{}, {}]{sep}", number(p.x), number(p.y));
        }
        out.push_str("  ]\n");
    }
    out.push_str("}\n");
    out
}

fn number(v: f64) -> String {
    serde_json::Number::from_f64(v)
        .expect("point coordinates are finite")
        .to_string()
}

pub fn from_str(text: &str) -> Result<AnnotationFile, ParseError> {
    let raw: Raw =
        serde_json::from_str(text).map_err(|e| ParseError::new(e.line(), e.to_string()))?;
    let [w, h] = raw.image_size;
    if w == 0 || h == 0 {
        let line = key_line(text, "image_size").unwrap_or(1);
        return Err(ParseError::new(
            line,
            format!("image size must be positive, got {w}x{h}"),
        ));
    }
    let points: Vec<Point> = raw.points.iter().map(|&[x, y]| Point::new(x, y)).collect();
    let points = PointSet::new(w, h, points).map_err(|e| {
        let line = match e {
            nae_core::Error::OutOfBounds { index, .. } | nae_core::Error::NonFinite { index } => {
                point_line(text, index)
            }
            _ => None,
        };
        ParseError::new(line.unwrap_or(1), e.to_string())
    })?;
    Ok(AnnotationFile {
        image: raw.image,
        points,
    })
}

pub fn read(path: &Path) -> Result<AnnotationFile> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| ParseError::new(1, format!("not UTF-8: {e}")).in_file(path))?;
    from_str(text).map_err(|e| e.in_file(path))
}

pub fn write(path: &Path, ann: &AnnotationFile) -> Result<()> {
    write_file(path, to_string(ann).as_bytes())
}

/// Walks a JSON document just far enough to track nesting depth, line
/// numbers and whether we are inside a string.
struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

enum Token {
    Open,
    Close,
    Comma,
    Str(usize, usize),
    Other,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            bytes: text.as_bytes(),
            pos: 0,
            line: 1,
        }
    }

    fn next(&mut self) -> Option<Token> {
        while let Some(&b) = self.bytes.get(self.pos) {
            self.pos += 1;
            match b {
                b'\n' => self.line += 1,
                b' ' | b'\t' | b'\r' | b':' => {}
                b'{' | b'[' => return Some(Token::Open),
                b'}' | b']' => return Some(Token::Close),
                b',' => return Some(Token::Comma),
                b'"' => {
                    let start = self.pos;
                    while let Some(&c) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        match c {
                            b'\\' => self.pos += 1,
                            b'"' => return Some(Token::Str(start, self.pos - 1)),
                            b'\n' => self.line += 1,
                            _ => {}
                        }
                    }
                    return None;
                }
                _ => return Some(Token::Other),
            }
        }
        None
    }
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    let mut lex = Lexer::new(text);
    let mut depth = 0usize;
    while let Some(tok) = lex.next() {
        match tok {
            Token::Open => depth += 1,
            Token::Close => depth = depth.saturating_sub(1),
            Token::Str(a, b) if depth == 1 && &text[a..b] == key => return Some(lex.line),
            _ => {}
        }
    }
    None
}

/// Line on which the `index`-th entry of the top-level `"points"` array
/// starts.
fn point_line(text: &str, index: usize) -> Option<usize> {
    let mut lex = Lexer::new(text);
    let mut depth = 0usize;
    let mut in_points = false;
    let mut seen_key = false;
    let mut entry = 0usize;
    while let Some(tok) = lex.next() {
        match tok {
            Token::Str(a, b) if depth == 1 => seen_key = &text[a..b] == "points",
            Token::Open => {
                depth += 1;
                if depth == 2 && seen_key {
                    in_points = true;
                } else if in_points && depth == 3 && entry == index {
                    return Some(lex.line);
                }
            }
            Token::Close => {
                depth = depth.saturating_sub(1);
                if depth == 1 && in_points {
                    return None;
                }
            }
            Token::Comma if in_points && depth == 2 => entry += 1,
            Token::Comma if depth == 1 => seen_key = false,
            _ => {}
        }
    }
    None
}
