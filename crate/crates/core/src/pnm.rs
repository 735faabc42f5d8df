//! Binary portable-anymap writers and readers.
//!
//! Two formats cover every image artifact the pipeline produces: P6 (RGB,
//! maxval 255) for heatmaps and overlays, P5 with maxval 65535 for depth
//! maps. 16-bit samples are big-endian, as the netpbm spec requires.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("malformed {kind} header: {detail}")]
    BadHeader { kind: &'static str, detail: String },
    #[error("payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = color;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

pub fn write_p6(path: &Path, img: &RgbImage) -> Result<(), PnmError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    for px in &img.pixels {
        f.write_all(px)?;
    }
    f.flush()?;
    Ok(())
}

/// Writes a 16-bit graymap (P5, maxval 65535, big-endian samples).
pub fn write_p5_16(path: &Path, width: usize, height: usize, samples: &[u16]) -> Result<(), PnmError> {
    debug_assert_eq!(samples.len(), width * height);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n65535\n")?;
    for s in samples {
        f.write_all(&s.to_be_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a 16-bit graymap written by [`write_p5_16`].
pub fn read_p5_16(path: &Path) -> Result<(usize, usize, Vec<u16>), PnmError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let (width, height, maxval, offset) = parse_pnm_header(&raw, "P5")?;
    if maxval != 65535 {
        return Err(PnmError::BadHeader {
            kind: "P5",
            detail: format!("expected maxval 65535, got {maxval}"),
        });
    }
    let expected = width * height * 2;
    let payload = &raw[offset..];
    if payload.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let samples = payload[..expected]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, samples))
}

/// Parses "<magic> W H MAXVAL" with whitespace/comment tolerance; returns
/// (width, height, maxval, payload offset).
fn parse_pnm_header(raw: &[u8], magic: &'static str) -> Result<(usize, usize, u32, usize), PnmError> {
    if raw.len() < 2 || &raw[..2] != magic.as_bytes() {
        return Err(PnmError::BadHeader {
            kind: if magic == "P5" { "P5" } else { "P6" },
            detail: format!("wrong magic, expected {magic}"),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and # comments
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(PnmError::BadHeader {
                kind: if magic == "P5" { "P5" } else { "P6" },
                detail: "missing numeric header field".into(),
            });
        }
        let text = std::str::from_utf8(&raw[start..pos]).expect("digits are ASCII");
        *field = text.parse().map_err(|_| PnmError::BadHeader {
            kind: if magic == "P5" { "P5" } else { "P6" },
            detail: format!("bad number {text}"),
        })?;
    }
    // exactly one whitespace byte separates header from payload
    if pos >= raw.len() || !raw[pos].is_ascii_whitespace() {
        return Err(PnmError::BadHeader {
            kind: if magic == "P5" { "P5" } else { "P6" },
            detail: "missing separator before payload".into(),
        });
    }
    Ok((fields[0], fields[1], fields[2] as u32, pos + 1))
}

/// Maps a value in [-1, 1] onto a blue–white–red diverging ramp.
pub fn diverging_color(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    if v < 0.0 {
        let t = -v;
        [lerp(255.0, 40.0, t), lerp(255.0, 70.0, t), lerp(255.0, 200.0, t)]
    } else {
        [lerp(255.0, 200.0, v), lerp(255.0, 40.0, v), lerp(255.0, 40.0, v)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pgm");
        let samples: Vec<u16> = (0..12).map(|i| (i * 5000) as u16).collect();
        write_p5_16(&path, 4, 3, &samples).unwrap();
        let (w, h, got) = read_p5_16(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(got, samples);
    }

    #[test]
    fn p5_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P6\n2 2\n65535\n").unwrap();
        assert!(read_p5_16(&path).is_err());
    }

    #[test]
    fn diverging_ramp_endpoints() {
        assert_eq!(diverging_color(0.0), [255, 255, 255]);
        assert_eq!(diverging_color(1.0), [200, 40, 40]);
        assert_eq!(diverging_color(-1.0), [40, 70, 200]);
    }
}
