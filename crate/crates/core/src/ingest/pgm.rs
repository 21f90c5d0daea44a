//! Binary PGM (P5, 8-bit) reader and writer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Grayscale2D;

pub fn encode(img: &Grayscale2D) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode(bytes: &[u8], context: &str) -> Result<Grayscale2D> {
    let err = |m: &str| Error::parse(context, m);
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (P5)"));
    }
    let num = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| err(&format!("bad {what} `{s}`")))
    };
    let width = num(fields[1], "width")?;
    let height = num(fields[2], "height")?;
    let maxval = num(fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| err("raster shorter than width*height"))?;
    let scale = maxval as f32;
    let data = raster.iter().map(|b| f32::from(*b) / scale).collect();
    Grayscale2D::new(width, height, data).ok_or_else(|| err("size mismatch"))
}

pub fn read(path: &Path) -> Result<Grayscale2D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn write(path: &Path, img: &Grayscale2D) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
