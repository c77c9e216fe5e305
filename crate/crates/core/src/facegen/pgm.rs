//! Binary PGM (P5, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// `round((v + 1) · 127.5)`, clamped to a byte.
pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

pub fn encode(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

/// Parses a P5 file, returning `(width, height, bytes)`.
pub fn decode(data: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::InvalidArgument(format!("PGM: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("header not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("expected P5 magic"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let body = data.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    Ok((w, h, body.to_vec()))
}

pub fn write(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    fs::write(path, encode(width, height, bytes)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&data)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| to_byte(v)).collect();
    write(path, img.side, img.side, &bytes)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let (w, h, bytes) = read(path)?;
    if w != h {
        return Err(Error::InvalidArgument(format!("{}: image must be square", path.display())));
    }
    Image::new(w, bytes.into_iter().map(from_byte).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(7.0), 255);
    }

    #[test]
    fn header_and_round_trip() {
        let enc = encode(2, 1, &[3, 200]);
        assert_eq!(&enc[..11], b"P5\n2 1\n255\n");
        assert_eq!(decode(&enc).unwrap(), (2, 1, vec![3, 200]));
        assert!(decode(b"P2\n1 1\n255\n\x00").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
    }
}
