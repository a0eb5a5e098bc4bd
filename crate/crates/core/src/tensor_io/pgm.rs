use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maskgen::LabelMask;

/// Encodes a mask as binary PGM (`P5`, maxval 255, one byte per pixel).
pub fn encode_pgm(mask: &LabelMask) -> Result<Vec<u8>> {
    if let Some(&bad) = mask.labels().iter().find(|&&l| l > 255) {
        return Err(Error::LabelOverflow(bad));
    }
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.labels().iter().map(|&l| l as u8));
    Ok(out)
}

pub fn write_pgm(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pgm(mask)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a binary PGM with maxval <= 255. Header comments are skipped.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_pgm(&fs::read(path)?)
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::MalformedHeader("not a binary PGM (P5)".into()));
    }
    let width = parse_number(next_token(bytes, &mut pos)?)?;
    let height = parse_number(next_token(bytes, &mut pos)?)?;
    let maxval = parse_number(next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::MalformedHeader(format!(
            "unsupported maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    pos += 1;
    let expected = width * height;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: raster.len(),
        });
    }
    LabelMask::new(
        height,
        width,
        raster[..expected].iter().map(|&b| b as usize).collect(),
    )
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => {
                return Err(Error::MalformedHeader(
                    "unexpected end of PGM header".into(),
                ))
            }
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad PGM number {token:?}")))
}
