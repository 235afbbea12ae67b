//! Linear RGB images, 8-bit PNG I/O and PSNR.

use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::bytes::{put_f32, put_u32};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels, top row first.
    pub pixels: Vec<[T; 3]>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, fill: [T; 3]) -> Self {
        Self { width, height, pixels: vec![fill; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [T; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.map(|v| U::lit(v.to_f64().unwrap_or(0.0)))).collect(),
        }
    }

    /// 8-bit RGB bytes: each linear value clamped to [0, 1], scaled and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(|v| quantize(v.to_f64().unwrap_or(0.0)))).collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(BufWriter::new(&mut out), self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory PNG header");
            w.write_image_data(&self.to_rgb8()).expect("in-memory PNG data");
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png())?;
        Ok(())
    }

    /// Raw dump: `u32` width, `u32` height, then `width·height·3` little-endian `f32`.
    pub fn to_raw_f32(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.pixels.len() * 12);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        for p in &self.pixels {
            for v in p {
                put_f32(&mut out, v.to_f32_lossy());
            }
        }
        out
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

impl Image<f32> {
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::Image("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => return Err(Error::Image(format!("unsupported PNG color type {other:?}"))),
        };
        let pixels = buf[..w * h * channels]
            .chunks(channels)
            .map(|c| {
                let v = |i: usize| c[i] as f32 / 255.0;
                if channels >= 3 {
                    [v(0), v(1), v(2)]
                } else {
                    [v(0); 3]
                }
            })
            .collect();
        Ok(Self { width: w, height: h, pixels })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png(&std::fs::read(path)?)
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "image size mismatch");
    let n = (a.pixels.len() * 3).max(1) as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]).to_f64().unwrap_or(0.0).powi(2)))
        .sum();
    sum / n
}

/// Peak signal-to-noise ratio in dB for values in [0, 1]; `inf` for identical images.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * m.log10()
    }
}
