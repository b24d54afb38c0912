//! Grayscale rasters, binary PGM I/O, interpolation, smoothing and patch
//! extraction.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Domain(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image filled with a single intensity.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Geometric center `((w - 1) / 2, (h - 1) / 2)` used as the warp anchor.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Whether a `side` x `side` window centered at `(x, y)` fits inside the image.
    pub fn admits_patch(&self, x: i64, y: i64, side: usize) -> bool {
        let half = (side / 2) as i64;
        let extent = side as i64;
        x - half >= 0
            && y - half >= 0
            && x - half + extent <= self.width as i64
            && y - half + extent <= self.height as i64
    }
}

/// Reads a binary (P5) PGM file.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes)
}

/// Parses an in-memory binary PGM stream.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = read_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 {
        return Err(Error::Format("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::Unsupported(format!(
            "maxval {maxval} needs 16-bit samples"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("header not terminated by whitespace".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("invalid dimensions {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!(
                "truncated PGM payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        )));
    }
    GrayImage::new(width, height, payload[..expected].to_vec())
}

fn read_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("unexpected end of PGM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("expected a number in PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("header number out of range".into()))
}

/// Encodes an image as `P5\n<w> <h>\n255\n` followed by the raw raster.
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.data);
    out
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_pgm(image))?;
    Ok(())
}

/// Bilinear interpolation at a subpixel location inside the image.
pub fn sample_bilinear(image: &GrayImage, x: f64, y: f64) -> Result<f64> {
    let max_x = (image.width - 1) as f64;
    let max_y = (image.height - 1) as f64;
    if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
        return Err(Error::Domain(format!(
            "sample ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]"
        )));
    }
    Ok(bilinear_unchecked(image, x, y))
}

/// Caller guarantees `0 <= x <= w - 1` and `0 <= y <= h - 1`.
#[inline]
pub(crate) fn bilinear_unchecked(image: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = (x.floor() as usize).min(image.width - 1);
    let y0 = (y.floor() as usize).min(image.height - 1);
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = image.get(x0, y0) as f64;
    let p10 = image.get(x1, y0) as f64;
    let p01 = image.get(x0, y1) as f64;
    let p11 = image.get(x1, y1) as f64;
    let top = p00 + (p10 - p00) * fx;
    let bottom = p01 + (p11 - p01) * fx;
    top + (bottom - top) * fy
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= sum);
    kernel
}

/// Separable Gaussian blur in floating point with clamp-to-edge borders.
pub(crate) fn smooth_to_f32(image: &GrayImage, sigma: f64) -> Vec<f32> {
    let (w, h) = (image.width, image.height);
    let src: Vec<f32> = image.data.iter().map(|&v| v as f32).collect();
    if sigma == 0.0 {
        return src;
    }
    let kernel: Vec<f32> = gaussian_kernel(sigma).into_iter().map(|k| k as f32).collect();
    let radius = (kernel.len() / 2) as i64;

    let mut horizontal = vec![0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (i, k) in kernel.iter().enumerate() {
                let sx = (x as i64 + i as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += k * row[sx];
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (i, k) in kernel.iter().enumerate() {
            let sy = (y as i64 + i as i64 - radius).clamp(0, h as i64 - 1) as usize;
            let src_row = &horizontal[sy * w..(sy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out
}

pub fn gaussian_smooth(image: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let data = smooth_to_f32(image, sigma)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(image.width, image.height, data)
}

/// Square window of intensities surrounding a keypoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    side: usize,
    data: Vec<u8>,
}

impl Patch {
    pub fn new(side: usize, data: Vec<u8>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(Error::Domain(format!("patch side must be odd, got {side}")));
        }
        if data.len() != side * side {
            return Err(Error::Domain(format!(
                "patch of side {side} needs {} bytes, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Self { side, data })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Index of the center pixel along either axis.
    #[inline]
    pub fn center(&self) -> usize {
        self.side / 2
    }

    /// Intensity at an offset from the center. Offsets must stay inside the patch.
    #[inline]
    pub fn at_offset(&self, dx: i16, dy: i16) -> u8 {
        let c = self.center() as isize;
        let x = (c + dx as isize) as usize;
        let y = (c + dy as isize) as usize;
        self.data[y * self.side + x]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.side + x]
    }
}

/// Copies the `side` x `side` window centered at `center`.
pub fn extract_patch(image: &GrayImage, center: (i64, i64), side: usize) -> Result<Patch> {
    let (cx, cy) = center;
    if side.is_multiple_of(2) || side == 0 {
        return Err(Error::Domain(format!("patch side must be odd, got {side}")));
    }
    if !image.admits_patch(cx, cy, side) {
        return Err(Error::Border {
            x: cx,
            y: cy,
            side,
        });
    }
    let half = (side / 2) as i64;
    let x0 = (cx - half) as usize;
    let y0 = (cy - half) as usize;
    let mut data = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        let start = y * image.width + x0;
        data.extend_from_slice(&image.data[start..start + side]);
    }
    Ok(Patch { side, data })
}
