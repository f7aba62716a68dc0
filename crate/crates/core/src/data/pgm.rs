//! Binary (P5) PGM with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Raw 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn encode(img: &Gray8) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Gray8> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::PgmMagic(magic));
    }
    let magic = String::from_utf8_lossy(&bytes[..2]).into_owned();
    match bytes[1] {
        b'5' => {}
        b'1'..=b'7' => return Err(Error::PgmVariant(magic)),
        _ => return Err(Error::PgmMagic(magic)),
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::PgmHeader("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::PgmHeader(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::PgmHeader("number out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::PgmHeader("missing separator before raster".into())),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::PgmHeader(format!("maxval {maxval} (only 255 supported)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::PgmHeader(format!("empty raster {width}x{height}")));
    }
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::PgmTruncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(Gray8 {
        height,
        width,
        pixels: payload[..expected].to_vec(),
    })
}

pub fn read_raw(path: &Path) -> Result<Gray8> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a PGM as an H×W grid scaled to `[0, 1]` (value / 255).
pub fn read_pgm(path: &Path) -> Result<Grid> {
    let raw = read_raw(path)?;
    Grid::new(
        vec![raw.height, raw.width],
        raw.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
}

/// Quantizes an H×W grid in `[0, 1]` to `round(v * 255)`.
pub fn quantize(grid: &Grid) -> Result<Gray8> {
    if grid.rank() != 2 {
        return Err(Error::Shape(format!("PGM needs a 2D grid, got {:?}", grid.shape())));
    }
    Ok(Gray8 {
        height: grid.shape()[0],
        width: grid.shape()[1],
        pixels: grid
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
    })
}

pub fn write_pgm(grid: &Grid, path: &Path) -> Result<()> {
    let bytes = encode(&quantize(grid)?);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        write_pgm(&Grid::zeros(&[4, 4]), &p).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), Grid::zeros(&[4, 4]));
    }

    #[test]
    fn checkerboard_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let g = Grid::from_fn(&[5, 7], |i| ((i / 7 + i % 7) % 2) as f64);
        write_pgm(&g, &p).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), g);
    }

    #[test]
    fn quantized_values_survive() {
        let g = Grid::from_fn(&[16, 16], |i| i as f64 / 255.0);
        let back = decode(&encode(&quantize(&g).unwrap())).unwrap();
        assert_eq!(back.pixels, (0..=255u8).collect::<Vec<_>>());
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode(b"P2\n2 2\n255\n0 0 0 0"), Err(Error::PgmVariant(_))));
        let msg = decode(b"P2\n2 2\n255\n").unwrap_err().to_string();
        assert!(msg.contains("unsupported PGM variant"));
        assert!(matches!(decode(b"GIF89a"), Err(Error::PgmMagic(_))));
        assert!(matches!(decode(b"P5\n2 x\n255\n"), Err(Error::PgmHeader(_))));
        assert!(matches!(decode(b"P5\n2 2\n65535\n"), Err(Error::PgmHeader(_))));
        assert!(matches!(
            decode(b"P5\n2 2\n255\n\x00\x01\x02"),
            Err(Error::PgmTruncated { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode(b"P5\n# made by hand\n2 1\n255\n\x07\x09").unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![7, 9]);
    }
}
