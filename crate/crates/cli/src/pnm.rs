//! Minimal PNM codec: reads P2/P5 grayscale and P3/P6 color, writes binary
//! P5/P6 with maxval 255.
//!
//! Scanlines are row-major with interleaved channels per the format; the
//! in-memory image uses the library's per-channel column-major layout, so the
//! codec converts on the way in and out. Pixels are clamped to [0, 1] and
//! quantized by `round(v * 255)` only when writing.

use std::fs;
use std::path::Path;

use pdsplit_core::imaging::Image;
use pdsplit_core::linop::GridShape;

use crate::errors::{io_err, CliError};

pub fn read_pnm(path: &Path) -> Result<Image, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    parse_pnm(&bytes).map_err(|m| CliError::Io(format!("{}: {m}", path.display())))
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<(), CliError> {
    let bytes = encode_pnm(img);
    fs::write(path, bytes).map_err(|e| io_err(&format!("writing {}", path.display()), e))
}

fn parse_pnm(bytes: &[u8]) -> Result<Image, String> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    let (channels, ascii) = match magic.as_str() {
        "P2" => (1usize, true),
        "P3" => (3, true),
        "P5" => (1, false),
        "P6" => (3, false),
        other => return Err(format!("unsupported PNM magic '{other}'")),
    };
    let cols: usize = cursor.token()?.parse().map_err(|_| "bad width".to_string())?;
    let rows: usize = cursor.token()?.parse().map_err(|_| "bad height".to_string())?;
    let maxval: u32 = cursor.token()?.parse().map_err(|_| "bad maxval".to_string())?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval} (need 1..=255)"));
    }
    let shape =
        GridShape::new(rows, cols, channels).map_err(|e| format!("bad dimensions: {e}"))?;
    let count = rows * cols * channels;
    let raster: Vec<u16> = if ascii {
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            vals.push(
                cursor
                    .token()?
                    .parse()
                    .map_err(|_| "bad sample value".to_string())?,
            );
        }
        vals
    } else {
        // binary raster starts after exactly one whitespace byte
        cursor.expect_single_whitespace()?;
        let rest = &bytes[cursor.pos..];
        if rest.len() < count {
            return Err(format!(
                "truncated raster: expected {count} bytes, found {}",
                rest.len()
            ));
        }
        rest[..count].iter().map(|b| *b as u16).collect()
    };

    let mut pixels = vec![0.0; count];
    for r in 0..rows {
        for c in 0..cols {
            for ch in 0..channels {
                let v = raster[(r * cols + c) * channels + ch] as f64 / maxval as f64;
                pixels[shape.index(r, c, ch)] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::new(shape, pixels).map_err(|e| e.to_string())
}

fn encode_pnm(img: &Image) -> Vec<u8> {
    let shape = img.shape;
    let magic = if shape.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", shape.cols(), shape.rows()).into_bytes();
    for r in 0..shape.rows() {
        for c in 0..shape.cols() {
            for ch in 0..shape.channels() {
                let v = img.pixels[shape.index(r, c, ch)].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn token(&mut self) -> Result<String, String> {
        // skip whitespace and '#' comments
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err("unexpected end of header".to_string());
        }
        String::from_utf8(self.bytes[start..self.pos].to_vec())
            .map_err(|_| "non-ascii header".to_string())
    }

    fn expect_single_whitespace(&mut self) -> Result<(), String> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
            Ok(())
        } else {
            Err("missing whitespace before raster".to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ascii_pgm_with_comments() {
        let data = b"P2\n# a comment\n3 2\n255\n0 128 255\n64 32 16\n";
        let img = parse_pnm(data).unwrap();
        assert_eq!(img.shape.rows(), 2);
        assert_eq!(img.shape.cols(), 3);
        assert_eq!(img.shape.channels(), 1);
        // row-major input (0,128,255 / 64,32,16) to column-major planes
        let s = img.shape;
        assert_eq!(img.pixels[s.index(0, 0, 0)], 0.0);
        assert_eq!(img.pixels[s.index(0, 1, 0)], 128.0 / 255.0);
        assert_eq!(img.pixels[s.index(1, 2, 0)], 16.0 / 255.0);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let shape = GridShape::new(4, 5, 3).unwrap();
        let mut pixels = vec![0.0; shape.len()];
        for (i, p) in pixels.iter_mut().enumerate() {
            *p = (i % 256) as f64 / 255.0;
        }
        let img = Image::new(shape, pixels).unwrap();
        let encoded = encode_pnm(&img);
        let back = parse_pnm(&encoded).unwrap();
        assert_eq!(back.shape, img.shape);
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quantization_rounds() {
        let shape = GridShape::new(1, 1, 1).unwrap();
        let img = Image::new(shape, vec![0.5]).unwrap();
        let enc = encode_pnm(&img);
        assert_eq!(*enc.last().unwrap(), 128); // round(0.5*255) = 128
        let img = Image::new(shape, vec![1.7]).unwrap(); // clamps to 1
        assert_eq!(*encode_pnm(&img).last().unwrap(), 255);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse_pnm(b"P7\n1 1\n255\n\x00").is_err());
        assert!(parse_pnm(b"P5\n2 2\n255\n\x00\x00").is_err()); // truncated
        assert!(parse_pnm(b"P5\n2 2\n70000\n").is_err()); // wide maxval
        assert!(parse_pnm(b"P2\n1 1\n255\nxyz\n").is_err());
    }
}
