//! Binary PPM (P6) images and PGM (P5) masks, 8 bits per sample.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            0,
            format!("expected magic {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(format_err(path, pos, format!("expected {what}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, start, "number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err(path, pos, "zero image extent"));
    }
    if maxval != 255 {
        return Err(format_err(path, pos, format!("maxval {maxval} unsupported, need 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, pos, "expected whitespace before pixel data"));
    }
    Ok(Header {
        width,
        height,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize, path: &Path) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated pixel data: {have} of {need} bytes"),
        ));
    }
    if have > need {
        return Err(format_err(path, h.data_start + need, "trailing bytes after pixel data"));
    }
    Ok(&bytes[h.data_start..])
}

/// Decodes a P6 image into an `(H, W, 3)` tensor with values in `[0, 1]`.
pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<Tensor<f64>> {
    let h = parse_header(bytes, b"P6", path)?;
    let data = payload(bytes, &h, 3, path)?.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::new([h.height, h.width, 3], data)?)
}

/// Decodes a P5 mask into `(height, width, values)`.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(bytes, b"P5", path)?;
    Ok((h.height, h.width, payload(bytes, &h, 1, path)?.to_vec()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f64>> {
    parse_ppm(&read(path)?, path)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    parse_pgm(&read(path)?, path)
}

/// Writes an `(H, W, 3)` image, rounding each channel to the nearest 1/255.
pub fn write_ppm(path: &Path, image: &Tensor<f64>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Data(format!("PPM needs an (H, W, 3) image, got {s:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, height: usize, width: usize, values: &[u8]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Data(format!(
            "PGM needs {} values for {height}x{width}, got {}",
            height * width,
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
