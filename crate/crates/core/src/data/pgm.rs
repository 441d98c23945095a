//! Binary PGM (P5) image I/O, 8-bit, grayscale in [0,1].

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::NdArray;

/// Writes an [H,W] grid of values in [0,1] as a maxval-255 binary PGM.
pub fn write_pgm(path: &Path, image: &NdArray) -> Result<()> {
    if image.rank() != 2 {
        return Err(Error::shape(format!(
            "PGM image must be [H,W], got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in image.data() {
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Reads a binary PGM into an [H,W] grid of values in [0,1].
pub fn read_pgm(path: &Path) -> Result<NdArray> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    parse_pgm(&raw).map_err(|msg| Error::parse(path.display().to_string(), msg))
}

fn parse_pgm(raw: &[u8]) -> std::result::Result<NdArray, String> {
    let mut pos = 0;
    let magic = next_token(raw, &mut pos).ok_or("missing magic number")?;
    if magic != b"P5" {
        return Err(format!(
            "expected binary PGM magic `P5`, found `{}`",
            String::from_utf8_lossy(magic)
        ));
    }
    let w: usize = parse_int(next_token(raw, &mut pos).ok_or("missing width")?)?;
    let h: usize = parse_int(next_token(raw, &mut pos).ok_or("missing height")?)?;
    let maxval: usize = parse_int(next_token(raw, &mut pos).ok_or("missing maxval")?)?;
    if maxval != 255 {
        return Err(format!("only maxval 255 is supported, found {maxval}"));
    }
    if w == 0 || h == 0 {
        return Err(format!("degenerate image size {w}x{h}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = h * w;
    if raw.len() < pos + need {
        return Err(format!(
            "raster truncated: need {need} bytes, have {}",
            raw.len().saturating_sub(pos)
        ));
    }
    let data = raw[pos..pos + need]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    NdArray::from_vec(&[h, w], data).map_err(|e| e.to_string())
}

/// Advances past whitespace and `#` comments, returning the next token.
/// Leaves `pos` at the byte after the token.
fn next_token<'a>(raw: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < raw.len() && raw[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < raw.len() && raw[*pos] == b'#' {
            while *pos < raw.len() && raw[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= raw.len() {
        return None;
    }
    let start = *pos;
    while *pos < raw.len() && !raw[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&raw[start..*pos])
}

fn parse_int(tok: &[u8]) -> std::result::Result<usize, String> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("invalid integer `{}`", String::from_utf8_lossy(tok)))
}
