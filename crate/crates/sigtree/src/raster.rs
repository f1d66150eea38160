//! Raster image plumbing: the in-memory pixel buffer, PNG/JPEG decoding via
//! the `image` crate, and a self-contained binary PPM (P6) codec so test
//! fixtures and synthetic corpora need no external encoder.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("pixel buffer holds {got} pixels, expected {expected} for {w}x{h}")]
    PixelCountMismatch { got: usize, expected: usize, w: u32, h: u32 },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("invalid PPM: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit RGB pixel buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RawImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(RasterError::PixelCountMismatch {
                got: pixels.len(),
                expected,
                w: width,
                h: height,
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

/// Decodes an image file by extension: `.ppm` through the built-in P6
/// reader, everything else through the `image` crate (PNG and JPEG are
/// enabled).
pub fn decode_image(path: &Path) -> Result<RawImage, RasterError> {
    let is_ppm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ppm"))
        .unwrap_or(false);
    if is_ppm {
        return read_ppm(&std::fs::read(path)?).map_err(|e| RasterError::Decode {
            path: path.display().to_string(),
            reason: e.to_string(),
        });
    }
    let img = image::open(path).map_err(|e| RasterError::Decode {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb
        .pixels()
        .map(|p| [p.0[0], p.0[1], p.0[2]])
        .collect::<Vec<_>>();
    RawImage::new(w, h, pixels)
}

/// Parses a binary PPM (P6) with 8-bit samples.
pub fn read_ppm(bytes: &[u8]) -> Result<RawImage, RasterError> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos).ok_or_else(|| RasterError::Ppm("missing magic".into()))?;
    if magic != b"P6" {
        return Err(RasterError::Ppm(format!(
            "bad magic {:?}, expected P6",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_number(bytes, &mut pos, "width")?;
    let height = parse_number(bytes, &mut pos, "height")?;
    let maxval = parse_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(RasterError::Ppm(format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from raster data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(RasterError::Ppm("missing separator before raster data".into()));
    }
    pos += 1;
    let expected = width as usize * height as usize * 3;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(RasterError::Ppm(format!(
            "raster truncated: {} bytes, expected {expected}",
            data.len()
        )));
    }
    let pixels = data[..expected]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    RawImage::new(width, height, pixels)
}

/// Serializes an image as binary PPM (P6).
pub fn write_ppm(image: &RawImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for px in image.pixels() {
        out.extend_from_slice(px);
    }
    out
}

fn take_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn parse_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32, RasterError> {
    let tok = take_token(bytes, pos).ok_or_else(|| RasterError::Ppm(format!("missing {what}")))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| RasterError::Ppm(format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
}
