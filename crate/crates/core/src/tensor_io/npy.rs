use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Reads a version 1.0 `.npy` file holding little-endian f32 in C order.
pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_npy_bytes(&fs::read(path)?)
}

pub fn read_npy_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC || bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::BadMagic);
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = PREAMBLE_LEN + header_len;
    if bytes.len() < payload_start {
        return Err(Error::MalformedHeader(
            "header extends past end of file".into(),
        ));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..payload_start])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let header = Header::parse(header)?;

    if header.descr != "<f4" {
        return Err(Error::UnsupportedDtype(header.descr));
    }
    if header.fortran_order {
        return Err(Error::FortranOrderUnsupported);
    }

    let count: usize = header.shape.iter().product();
    let expected = count * 4;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(header.shape, data)
}

pub fn write_npy(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_npy_bytes(tensor))?;
    Ok(())
}

pub fn write_npy_bytes(tensor: &Tensor) -> Vec<u8> {
    let shape = match tensor.shape() {
        [single] => format!("({single},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    // Pad with spaces so the payload starts on an aligned offset; the header ends in '\n'.
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + tensor.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[derive(Debug)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl Header {
    fn parse(raw: &str) -> Result<Self> {
        let body = raw.trim();
        let body = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| Error::MalformedHeader("header is not a dict literal".into()))?;

        let descr = value_after(body, "descr")?;
        let descr = descr
            .trim()
            .split(',')
            .next()
            .unwrap_or_default()
            .trim()
            .trim_matches(|c| c == '\'' || c == '"')
            .to_string();

        let fortran = value_after(body, "fortran_order")?;
        let fortran_order = if fortran.trim_start().starts_with("True") {
            true
        } else if fortran.trim_start().starts_with("False") {
            false
        } else {
            return Err(Error::MalformedHeader("fortran_order is not a bool".into()));
        };

        let shape_raw = value_after(body, "shape")?;
        let shape_raw = shape_raw.trim_start();
        let close = shape_raw
            .find(')')
            .filter(|_| shape_raw.starts_with('('))
            .ok_or_else(|| Error::MalformedHeader("shape is not a tuple".into()))?;
        let shape = shape_raw[1..close]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::MalformedHeader(format!("bad dimension {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if shape.is_empty() {
            return Err(Error::MalformedHeader(
                "zero-dimensional arrays are not supported".into(),
            ));
        }

        Ok(Self {
            descr,
            fortran_order,
            shape,
        })
    }
}

fn value_after<'a>(body: &'a str, key: &str) -> Result<&'a str> {
    for quote in ['\'', '"'] {
        let needle = format!("{quote}{key}{quote}");
        if let Some(pos) = body.find(&needle) {
            let rest = &body[pos + needle.len()..];
            let colon = rest
                .find(':')
                .ok_or_else(|| Error::MalformedHeader(format!("missing ':' after {key}")))?;
            return Ok(&rest[colon + 1..]);
        }
    }
    Err(Error::MalformedHeader(format!("missing key {key}")))
}
