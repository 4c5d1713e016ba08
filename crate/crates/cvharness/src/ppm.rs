//! Binary PPM (P6, colour) and PGM (P5, gray) with maxval 255.

use std::fs;
use std::path::Path;

use cvharness_core::image::Image;

use crate::error::{HarnessError, Result};

/// Header plus pixel bytes; values are quantized with round-half-up.
pub fn encode(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_bytes());
    out
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> std::result::Result<usize, String> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("malformed header: bad {what}"))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Image, String> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err("malformed header: expected P6 or P5 magic".into()),
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format!("malformed header: maxval {maxval} (only 255 is supported)"));
    }
    if width == 0 || height == 0 {
        return Err("malformed header: zero dimension".into());
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header: missing separator before pixel data".into());
    }
    let data = &bytes[pos + 1..];
    let need = width * height * channels;
    if data.len() != need {
        return Err(format!("expected {need} pixel bytes, found {}", data.len()));
    }
    Image::from_bytes(height, width, channels, data).map_err(|e| e.to_string())
}

pub fn save(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode(image)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes).map_err(|m| HarnessError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_layout() {
        let img = Image::filled(1, 1, 3, 1.0).unwrap();
        assert_eq!(encode(&img), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn half_rounds_up() {
        let img = Image::filled(1, 1, 1, 0.5).unwrap();
        assert_eq!(encode(&img).last(), Some(&128));
    }

    #[test]
    fn comments_in_header() {
        let img = decode(b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode(b"P3\n1 1\n255\n").is_err());
        assert!(decode(b"P6\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode(b"P6\nx 1\n255\n").is_err());
    }
}
