//! 8-bit RGB raster plus decode/encode and letterbox resampling.

use std::io::Cursor;

use crate::error::ImageError;
use crate::geometry::{BoxXYXY, LetterboxTransform};

/// Gray level used to fill letterbox padding.
pub const LETTERBOX_PAD: u8 = 114;

/// Row-major RGB image, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension);
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImageError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Applies `f` to every channel value.
    pub fn map_values(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Decodes PNG or JPEG bytes. Grayscale and alpha inputs are converted to RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self, ImageError> {
        let format = image::guess_format(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
        if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
            return Err(ImageError::Decode(format!("unsupported format {format:?}")));
        }
        let img = image::load_from_memory_with_format(bytes, format)
            .map_err(|e| ImageError::Decode(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    fn to_rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked on construction")
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        self.encode(image::ImageFormat::Png)
    }

    pub fn encode_jpeg(&self) -> Result<Vec<u8>, ImageError> {
        self.encode(image::ImageFormat::Jpeg)
    }

    fn encode(&self, format: image::ImageFormat) -> Result<Vec<u8>, ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, format)
            .map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Resamples the image into the letterbox square described by `t`, bilinear,
    /// padding with [`LETTERBOX_PAD`].
    pub fn letterbox(&self, t: &LetterboxTransform) -> Self {
        let side = t.dst_side;
        let mut out = vec![LETTERBOX_PAD; side as usize * side as usize * 3];
        let (sw, sh) = (f64::from(self.width), f64::from(self.height));
        for v in 0..side {
            let sy = (f64::from(v) + 0.5 - t.pad_y) / t.scale;
            if !(0.0..sh).contains(&sy) {
                continue;
            }
            for u in 0..side {
                let sx = (f64::from(u) + 0.5 - t.pad_x) / t.scale;
                if !(0.0..sw).contains(&sx) {
                    continue;
                }
                let px = self.sample_bilinear(sx - 0.5, sy - 0.5);
                let o = (v as usize * side as usize + u as usize) * 3;
                out[o..o + 3].copy_from_slice(&px);
            }
        }
        Self {
            width: side,
            height: side,
            data: out,
        }
    }

    fn sample_bilinear(&self, x: f64, y: f64) -> [u8; 3] {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - f64::from(x0), y - f64::from(y0));
        let (a, b, c, d) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let top = f64::from(a[ch]) * (1.0 - fx) + f64::from(b[ch]) * fx;
            let bottom = f64::from(c[ch]) * (1.0 - fx) + f64::from(d[ch]) * fx;
            px[ch] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        px
    }

    /// Draws a rectangle outline, clipped to the image.
    pub fn draw_rect(&mut self, b: &BoxXYXY, rgb: [u8; 3], thickness: u32) {
        let clamp_x = |v: f64| (v.max(0.0) as u32).min(self.width - 1);
        let clamp_y = |v: f64| (v.max(0.0) as u32).min(self.height - 1);
        let (x1, x2) = (clamp_x(b.x1), clamp_x(b.x2));
        let (y1, y2) = (clamp_y(b.y1), clamp_y(b.y2));
        for t in 0..thickness {
            for x in x1..=x2 {
                self.put_pixel(x, (y1 + t).min(y2), rgb);
                self.put_pixel(x, y2.saturating_sub(t).max(y1), rgb);
            }
            for y in y1..=y2 {
                self.put_pixel((x1 + t).min(x2), y, rgb);
                self.put_pixel(x2.saturating_sub(t).max(x1), y, rgb);
            }
        }
    }
}
