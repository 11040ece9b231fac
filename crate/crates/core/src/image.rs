//! Plain raster buffers and binary Netpbm I/O (P6 RGB, 16-bit P5 depth).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Depth values are stored in PGM as millimetres.
pub const DEPTH_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        RgbImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend_from_slice(&self.data);
        write_file(path, &buf)
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, body) = parse_header(&bytes, b"P6").map_err(|m| Error::format(path, m))?;
        if header.maxval != 255 {
            return Err(Error::format(path, format!("unsupported maxval {}", header.maxval)));
        }
        let n = header.width * header.height * 3;
        if body.len() < n {
            return Err(Error::format(path, format!("truncated pixel data: {} < {n}", body.len())));
        }
        Ok(RgbImage {
            width: header.width,
            height: header.height,
            data: body[..n].to_vec(),
        })
    }
}

/// Depth in metres, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Millimetre quantisation used by the PGM encoding.
    pub fn quantize(meters: f64) -> u16 {
        (meters * DEPTH_SCALE).round().clamp(0.0, 65535.0) as u16
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        buf.reserve(self.data.len() * 2);
        for &d in &self.data {
            buf.extend_from_slice(&Self::quantize(d).to_be_bytes());
        }
        write_file(path, &buf)
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (header, body) = parse_header(&bytes, b"P5").map_err(|m| Error::format(path, m))?;
        if header.maxval != 65535 {
            return Err(Error::format(path, format!("expected 16-bit PGM, maxval {}", header.maxval)));
        }
        let n = header.width * header.height;
        if body.len() < 2 * n {
            return Err(Error::format(path, "truncated pixel data"));
        }
        let data = body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / DEPTH_SCALE)
            .collect();
        Ok(DepthImage {
            width: header.width,
            height: header.height,
            data,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
}

/// Parses `magic w h maxval` plus the single whitespace byte before the raster.
fn parse_header<'a>(bytes: &'a [u8], magic: &[u8]) -> std::result::Result<(Header, &'a [u8]), String> {
    if !bytes.starts_with(magic) {
        return Err(format!("expected magic {}", String::from_utf8_lossy(magic)));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
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
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("header field: {e}"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    Ok((Header { width, height, maxval }, &bytes[pos + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        let mut img = RgbImage::filled(3, 2, [1, 2, 3]);
        img.put(1, 2, [255, 0, 7]);
        img.write_ppm(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert_eq!(RgbImage::read_ppm(&p).unwrap(), img);
    }

    #[test]
    fn pgm_is_millimetres_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let d = DepthImage {
            width: 2,
            height: 1,
            data: vec![1.2344, 70.0],
        };
        d.write_pgm(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let body = &bytes[bytes.len() - 4..];
        assert_eq!(u16::from_be_bytes([body[0], body[1]]), 1234);
        assert_eq!(u16::from_be_bytes([body[2], body[3]]), 65535);
        let back = DepthImage::read_pgm(&p).unwrap();
        assert_eq!(back.data, vec![1.234, 65.535]);
    }

    #[test]
    fn header_comments_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ppm");
        std::fs::write(&p, b"P6 # hi\n1 1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(RgbImage::read_ppm(&p).unwrap().data, vec![1, 2, 3]);
        std::fs::write(&p, b"P5\n1 1\n255\n\x01").unwrap();
        assert!(RgbImage::read_ppm(&p).is_err());
        let missing = dir.path().join("nope.ppm");
        let err = RgbImage::read_ppm(&missing).unwrap_err().to_string();
        assert!(err.contains("nope.ppm"));
    }
}
