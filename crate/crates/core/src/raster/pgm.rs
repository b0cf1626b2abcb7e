//! Binary PGM (P5, maxval 255).

use std::path::Path;

use super::{RasterError, SketchImage};
use crate::io::write_atomic;

pub fn encode_pgm(img: &SketchImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<SketchImage, RasterError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
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
            return Err(RasterError::MalformedHeader("unexpected end of header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(RasterError::MalformedHeader(format!("magic {:?} is not P5", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| RasterError::MalformedHeader(format!("bad {what} {s:?}")))
    };
    let (width, height, maxval) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(RasterError::MalformedHeader(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() {
        return Err(RasterError::MalformedHeader("missing payload".into()));
    }
    pos += 1;
    let expected = width * height;
    let body = &bytes[pos..];
    if body.len() < expected {
        return Err(RasterError::Truncated { expected, found: body.len() });
    }
    let scale = 1.0 / maxval as f32;
    let pixels = body[..expected].iter().map(|&b| f32::from(b) * scale).collect();
    Ok(SketchImage::from_pixels(width, height, pixels))
}

pub fn write_pgm(img: &SketchImage, path: &Path) -> Result<(), RasterError> {
    write_atomic(path, &encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<SketchImage, RasterError> {
    decode_pgm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let pixels = (0..16 * 32).map(|i| (i % 97) as f32 / 96.0).collect();
        let img = SketchImage::from_pixels(16, 32, pixels);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!((back.width, back.height), (16, 32));
        for (a, b) in img.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn zero_image_body() {
        let bytes = encode_pgm(&SketchImage::zeros(128, 128));
        let header = b"P5\n128 128\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 128 * 128);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn truncated_or_bad_header() {
        let bytes = encode_pgm(&SketchImage::filled(8, 8, 1.0));
        assert!(matches!(decode_pgm(&bytes[..bytes.len() - 1]), Err(RasterError::Truncated { .. })));
        assert!(matches!(decode_pgm(&bytes[..5]), Err(RasterError::MalformedHeader(_))));
        assert!(matches!(decode_pgm(b"P2\n8 8\n255\n"), Err(RasterError::MalformedHeader(_))));
        let with_comment = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(decode_pgm(with_comment).unwrap().pixels, vec![0.0, 1.0]);
    }
}
