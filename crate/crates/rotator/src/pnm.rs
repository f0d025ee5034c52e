//! Binary portable pixmap/graymap I/O (P6 and P5, maxval 255).
//!
//! The decoder is used on untrusted bytes (it has a fuzz target), so it
//! bounds every header field before trusting it and never allocates from
//! unchecked sizes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dimension cap: generous for this project, small enough that a hostile
/// header cannot make us allocate gigabytes.
const MAX_DIM: usize = 1 << 14;
const MAX_PIXELS: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5 graymaps, 3 for P6 pixmaps.
    pub channels: usize,
    /// Interleaved rows, `width * height * channels` bytes.
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::arg(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
            return Err(Error::arg(format!("unsupported image size {width}x{height}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::arg(format!(
                "pixel buffer has {} bytes, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(PnmImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// C x H x W tensor scaled to [0, 1] by /255.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![0.0f32; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] =
                        self.data[(y * w + x) * c + ch] as f32 / 255.0;
                }
            }
        }
        Tensor::from_vec(&[c, h, w], data).expect("sizes agree by construction")
    }

    /// Quantizes a C x H x W tensor in [0, 1] back to 8-bit interleaved rows.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::shape(format!(
                "expected CxHxW tensor, got {:?}",
                t.shape()
            )));
        }
        let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if c != 1 && c != 3 {
            return Err(Error::shape(format!("unsupported channel count {c}")));
        }
        let mut data = vec![0u8; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = t.data()[(ch * h + y) * w + x].clamp(0.0, 1.0);
                    data[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
                }
            }
        }
        PnmImage::new(w, h, c, data)
    }
}

/// Decodes a P5 or P6 image with maxval in 1..=255.
pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(2)?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::arg("not a binary PGM/PPM file (magic must be P5 or P6)")),
    };
    let width = cursor.read_header_number()?;
    let height = cursor.read_header_number()?;
    let maxval = cursor.read_header_number()?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::arg(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::arg(format!("unsupported image size {width}x{height}")));
    }
    if width * height > MAX_PIXELS {
        return Err(Error::arg("image too large"));
    }
    // exactly one whitespace byte separates the header from pixel data
    match cursor.next_byte() {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(Error::arg("missing whitespace after maxval")),
    }
    let need = width * height * channels;
    let rest = &cursor.bytes[cursor.pos..];
    if rest.len() < need {
        return Err(Error::arg(format!(
            "truncated pixel data: need {need} bytes, have {}",
            rest.len()
        )));
    }
    PnmImage::new(width, height, channels, rest[..need].to_vec())
}

/// Encodes with maxval 255. Decoding the result reproduces `img` exactly.
pub fn encode(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Adapts an arbitrary decoded image to the model canvas: channel conversion
/// (gray replicates, color averages), aspect-preserving nearest-neighbor
/// rescale, then centering on a white square. Inputs already at
/// `channels x size x size` pass through untouched.
pub fn fit_to_canvas(t: &Tensor, channels: usize, size: usize) -> Result<Tensor> {
    if t.rank() != 3 {
        return Err(Error::shape(format!("expected CxHxW tensor, got {:?}", t.shape())));
    }
    let (c_in, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if c_in == channels && h == size && w == size {
        return Ok(t.clone());
    }
    let sample = |ch: usize, y: usize, x: usize| -> f32 {
        match (c_in, channels) {
            (a, b) if a == b => t.data()[(ch * h + y) * w + x],
            (1, _) => t.data()[y * w + x],
            (_, 1) => (0..c_in).map(|k| t.data()[(k * h + y) * w + x]).sum::<f32>() / c_in as f32,
            _ => t.data()[(ch.min(c_in - 1) * h + y) * w + x],
        }
    };
    let scale = (size as f64 / w as f64).min(size as f64 / h as f64);
    let (new_w, new_h) = (
        ((w as f64 * scale).round() as usize).clamp(1, size),
        ((h as f64 * scale).round() as usize).clamp(1, size),
    );
    let (off_x, off_y) = ((size - new_w) / 2, (size - new_h) / 2);
    let mut out = vec![1.0f32; channels * size * size];
    for y in 0..new_h {
        let sy = ((y as f64 + 0.5) / scale) as usize;
        for x in 0..new_w {
            let sx = ((x as f64 + 0.5) / scale) as usize;
            for ch in 0..channels {
                out[(ch * size + off_y + y) * size + off_x + x] =
                    sample(ch, sy.min(h - 1), sx.min(w - 1));
            }
        }
    }
    Tensor::from_vec(&[channels, size, size], out)
}

pub fn read_file(path: &Path) -> Result<PnmImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_file(path: &Path, img: &PnmImage) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::arg("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn next_byte(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.pos).copied();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comments, then parses a decimal number.
    fn read_header_number(&mut self) -> Result<usize> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => {
                    self.pos += 1;
                }
                Some(b'#') => {
                    while let Some(b) = self.next_byte() {
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let mut value: usize = 0;
        let mut digits = 0;
        while let Some(b) = self.peek() {
            if !b.is_ascii_digit() {
                break;
            }
            self.pos += 1;
            digits += 1;
            if digits > 8 {
                return Err(Error::arg("header number too long"));
            }
            value = value * 10 + (b - b'0') as usize;
        }
        if digits == 0 {
            return Err(Error::arg("expected a number in header"));
        }
        Ok(value)
    }
}
