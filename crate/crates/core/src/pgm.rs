//! Binary greymap (P5, 8-bit) reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(width, height, pixels))?;
    Ok(())
}

/// Returns `(width, height, pixels)`.
pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|message| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message,
    })
}

pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(format!("expected magic P5, found {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("only 8-bit greymaps are supported (maxval {maxval})"));
    }
    if bytes.len() < pos + w * h {
        return Err(format!("raster truncated: need {} bytes", w * h));
    }
    Ok((w, h, bytes[pos..pos + w * h].to_vec()))
}

/// Quantises values in `[0, 1]` to bytes (`round(v * 255)`).
pub fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Single-channel tensor of `byte / 255` values.
pub fn to_tensor(width: usize, height: usize, pixels: &[u8]) -> Tensor3 {
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Tensor3::from_vec(1, height, width, data).expect("pixel count matches")
}
