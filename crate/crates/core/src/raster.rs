//! 8-bit RGB raster buffers and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height}")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("image decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Rgb = [u8; 3];

/// Row-major RGB image, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, color: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, c: Rgb) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Applies `f` to every pixel in place.
    pub fn map_pixels(&self, mut f: impl FnMut(Rgb) -> Rgb) -> Self {
        let mut out = self.clone();
        for px in out.pixels.chunks_exact_mut(3) {
            let c = f([px[0], px[1], px[2]]);
            px.copy_from_slice(&c);
        }
        out
    }

    /// Copies a sub-rectangle. The rectangle must lie inside the image.
    pub fn sub_image(&self, x0: u32, y0: u32, width: u32, height: u32) -> Self {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for y in y0..y0 + height {
            let start = self.offset(x0, y);
            pixels.extend_from_slice(&self.pixels[start..start + width as usize * 3]);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    /// Decodes any format the `image` crate recognises and converts to RGB8.
    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_rgb_image(img.to_rgb8()))
    }

    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

/// Box blur over a `(2r+1)²` window with edge clamping.
///
/// Sums are exact integers; the single division at the end rounds half up.
pub fn box_blur(img: &RasterImage, radius: u32) -> RasterImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // Horizontal pass: exact window sums per channel.
    let mut rows = vec![0u32; w * h * 3];
    for y in 0..h {
        let row = &img.pixels[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let mut acc = [0u32; 3];
            for dx in -r..=r {
                let sx = clamp(x as isize + dx, w);
                for c in 0..3 {
                    acc[c] += row[sx * 3 + c] as u32;
                }
            }
            rows[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }

    let n = ((2 * radius + 1) * (2 * radius + 1)) as u64;
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u64; 3];
            for dy in -r..=r {
                let sy = clamp(y as isize + dy, h);
                let o = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += rows[o + c] as u64;
                }
            }
            for c in 0..3 {
                // floor(sum / n + 1/2)
                out[(y * w + x) * 3 + c] = ((2 * acc[c] + n) / (2 * n)) as u8;
            }
        }
    }
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}
