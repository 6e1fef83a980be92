//! Grayscale images, foreground masks and netpbm I/O.
//!
//! The on-disk baseline is PNM: PGM (`P2`/`P5`) loads directly, PPM
//! (`P3`/`P6`) is converted to grayscale with BT.601 weights on load.
//! Masks are PGM files paired by the `X.mask.pgm` convention; any nonzero
//! pixel is foreground.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    /// Panics if `data.len() != width * height` or either dimension is zero.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        assert_eq!(data.len(), width * height, "data length != width * height");
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Foreground mask paired with a [`GrayImage`] of the same dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "data length != width * height");
        Mask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }
}

/// BT.601 luma: `round(0.299 r + 0.587 g + 0.114 b)`, round half up.
///
/// Equal channels map to themselves exactly (the weights sum to 1) and the
/// result is monotone in each channel.
pub fn rgb_to_gray(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    (y + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Loads a PGM (`P2`/`P5`) or PPM (`P3`/`P6`) with maxval <= 255.
///
/// PPM pixels are collapsed with [`rgb_to_gray`]. Header comments (`#`) are
/// honored. Errors carry the file path and the byte offset of the problem.
pub fn load_pnm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes, path)
}

/// Loads a mask PGM that must match `image`'s dimensions; nonzero = foreground.
pub fn load_mask(path: impl AsRef<Path>, image: &GrayImage) -> Result<Mask> {
    let path = path.as_ref();
    let gray = load_pnm(path)?;
    if gray.width() != image.width() || gray.height() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {} is {}x{}, image is {}x{}",
            path.display(),
            gray.width(),
            gray.height(),
            image.width(),
            image.height()
        )));
    }
    let data = gray.data().iter().map(|&p| p > 0).collect();
    Ok(Mask::new(gray.width(), gray.height(), data))
}

/// All-foreground mask with `image`'s dimensions, used when no mask file
/// accompanies an image.
pub fn full_mask(image: &GrayImage) -> Mask {
    Mask::new(
        image.width(),
        image.height(),
        vec![true; image.width() * image.height()],
    )
}

/// Writes `image` as binary PGM (`P5`).
pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// P5 encoding of `image`; reloading the bytes yields the identical image.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

/// For image `X.ext`, the conventional mask location is `X.mask.pgm`.
pub fn mask_path_for(image_path: &Path) -> std::path::PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}.mask.pgm"))
}

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> PnmParser<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::MalformedPnm {
            path: self.path.to_path_buf(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

fn parse_pnm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut p = PnmParser {
        bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 2 {
        return Err(p.err("truncated file"));
    }
    let magic = &bytes[0..2];
    p.pos = 2;
    let (ascii, color) = match magic {
        b"P2" => (true, false),
        b"P3" => (true, true),
        b"P5" => (false, false),
        b"P6" => (false, true),
        _ => {
            p.pos = 0;
            return Err(p.err(format!(
                "unsupported magic number {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
    };

    let width = p.read_uint("width")? as usize;
    let height = p.read_uint("height")? as usize;
    if width == 0 || height == 0 {
        return Err(p.err("zero image dimension"));
    }
    let maxval = p.read_uint("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(p.err(format!("maxval {maxval} not in 1..=255")));
    }

    let channels = if color { 3 } else { 1 };
    let n_samples = width * height * channels;
    let samples = if ascii {
        let mut v = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let s = p.read_uint("sample")?;
            if s > maxval {
                return Err(p.err(format!("sample {s} exceeds maxval {maxval}")));
            }
            v.push(s as u8);
        }
        v
    } else {
        // Exactly one whitespace byte separates the maxval from the payload.
        match p.peek() {
            Some(b) if b.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(p.err("expected whitespace before binary payload")),
        }
        if bytes.len() < p.pos + n_samples {
            return Err(p.err(format!(
                "payload truncated: need {n_samples} bytes, have {}",
                bytes.len() - p.pos
            )));
        }
        bytes[p.pos..p.pos + n_samples].to_vec()
    };

    let data = if color {
        samples
            .chunks_exact(3)
            .map(|px| rgb_to_gray(px[0], px[1], px[2]))
            .collect()
    } else {
        samples
    };
    Ok(GrayImage::new(width, height, data))
}
