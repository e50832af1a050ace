//! Planar RGB images with `f32` channels in `[0, 1]`.
//!
//! Pixel centers sit at half-integer coordinates: pixel `(x, y)` covers the
//! square `[x, x + 1) x [y, y + 1)` and its center is `(x + 0.5, y + 0.5)`.
//! All resampling in the crate follows this convention.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("expected a {expected_w}x{expected_h} image, got {width}x{height}")]
    Size {
        expected_w: usize,
        expected_h: usize,
        width: usize,
        height: usize,
    },
    #[error("crop {w}x{h} at ({x}, {y}) exceeds {width}x{height} image")]
    Crop {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
    #[error("tensor of shape {0:?} is not a 3-channel image")]
    Tensor(Vec<usize>),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// Channel-major planes: `data[(c * height + y) * width + x]`.
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Result<Self, ImageError> {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        let plane = width * height;
        let mut data = Vec::with_capacity(3 * plane);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Ok(Image { width, height, data })
    }

    /// Builds an image from a per-pixel color function `f(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, ImageError> {
        let mut img = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(x, y, f(x, y));
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.get(0, x, y), self.get(1, x, y), self.get(2, x, y)]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[(c * self.height + y) * self.width + x] = v;
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[3, self.height, self.width], self.data.clone())
            .expect("image buffer matches its dimensions")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ImageError> {
        match t.shape()[..] {
            [3, h, w] => Ok(Image {
                width: w,
                height: h,
                data: t.data().to_vec(),
            }),
            _ => Err(ImageError::Tensor(t.shape().to_vec())),
        }
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image, ImageError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(ImageError::Crop {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(3 * w * h);
        for c in 0..3 {
            for row in y..y + h {
                let start = (c * self.height + row) * self.width + x;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Image { width: w, height: h, data })
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                let row = (c * self.height + y) * self.width;
                out.data[row..row + self.width].reverse();
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                let src = (c * self.height + y) * self.width;
                let dst = (c * self.height + self.height - 1 - y) * self.width;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        out
    }

    /// Bilinear resample to `width x height`.
    ///
    /// Destination pixel center `xd + 0.5` maps to source coordinate
    /// `(xd + 0.5) * src_w / dst_w`; samples beyond the outermost source
    /// pixel centers clamp to the edge. Resizing to the same size is the
    /// identity.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Image, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { width, height });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
            let scale = src as f64 / dst as f64;
            (0..dst)
                .map(|d| {
                    let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, (s - i0 as f64) as f32)
                })
                .collect()
        };
        let xs = axis(width, self.width);
        let ys = axis(height, self.height);
        let mut out = Image::new(width, height)?;
        for c in 0..3 {
            for (yd, &(y0, y1, ty)) in ys.iter().enumerate() {
                for (xd, &(x0, x1, tx)) in xs.iter().enumerate() {
                    let top = self.get(c, x0, y0) * (1.0 - tx) + self.get(c, x1, y0) * tx;
                    let bottom = self.get(c, x0, y1) * (1.0 - tx) + self.get(c, x1, y1) * tx;
                    out.data[(c * height + yd) * width + xd] = top * (1.0 - ty) + bottom * ty;
                }
            }
        }
        Ok(out)
    }

    /// Mean of each channel over all pixels.
    pub fn channel_means(&self) -> [f64; 3] {
        let plane = self.width * self.height;
        let mut out = [0.0; 3];
        for (c, m) in out.iter_mut().enumerate() {
            *m = self.data[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        }
        out
    }

    /// Decodes PNG or binary PPM bytes (format sniffed from the header).
    pub fn decode(bytes: &[u8]) -> Result<Image, ImageError> {
        let decoded = image::ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()?
            .decode()?
            .to_rgb8();
        Ok(Self::from_rgb8(&decoded))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Image {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image {
            width: w,
            height: h,
            data: vec![0.0; 3 * w * h],
        };
        for (x, y, p) in img.enumerate_pixels() {
            out.set_pixel(x as usize, y as usize, p.0.map(|v| v as f32 / 255.0));
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Rgb(self.pixel(x as usize, y as usize).map(quant))
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut buf = Vec::new();
        self.to_rgb8()
            .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)?;
        Ok(buf)
    }

    /// Binary (P6) portable pixmap with maxval 255.
    pub fn encode_ppm(&self) -> Vec<u8> {
        encode_ppm(self.width, self.height, self.to_rgb8().as_raw())
    }

    /// Writes PNG unless the extension is `.ppm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => self.encode_ppm(),
            _ => self.encode_png()?,
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// P6 header followed by the raw RGB triples.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5]).unwrap()
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = gradient(128, 128);
        assert_eq!(img.resize_bilinear(128, 128).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(256, 256, [0.25, 0.5, 0.75]).unwrap();
        let small = img.resize_bilinear(128, 128).unwrap();
        assert!(small.data()[..128 * 128].iter().all(|&v| v == 0.25));
        assert!(small.data()[2 * 128 * 128..].iter().all(|&v| v == 0.75));
    }

    #[test]
    fn checkerboard_upscale_weights() {
        // 2x2 -> 4x4: destination centers 0.5,1.5,2.5,3.5 map to source
        // coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
        let board = Image::from_fn(2, 2, |x, y| {
            let v = ((x + y) % 2) as f32;
            [v, v, v]
        })
        .unwrap();
        let up = board.resize_bilinear(4, 4).unwrap();
        assert_eq!(up.get(0, 0, 0), 0.0);
        assert_eq!(up.get(0, 3, 0), 1.0);
        assert_eq!(up.get(0, 0, 3), 1.0);
        assert_eq!(up.get(0, 3, 3), 0.0);
        // Interior sample at (1, 0): tx = 0.25, ty = 0 -> 0.25.
        assert!((up.get(0, 1, 0) - 0.25).abs() < 1e-6);
        // (1, 1): average weights 0.75*0.75*0 + 0.25*0.75*1 + 0.75*0.25*1 + 0.25*0.25*0.
        assert!((up.get(0, 1, 1) - 0.375).abs() < 1e-6);
    }

    #[test]
    fn zero_size_rejected() {
        assert!(Image::new(0, 3).is_err());
        assert!(gradient(4, 4).resize_bilinear(0, 2).is_err());
    }

    #[test]
    fn crop_and_flip() {
        let img = gradient(6, 4);
        let c = img.crop(1, 2, 3, 2).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(1, 2));
        assert!(img.crop(4, 0, 3, 1).is_err());
        let h = img.flip_horizontal();
        assert_eq!(h.pixel(0, 1), img.pixel(5, 1));
        let v = img.flip_vertical();
        assert_eq!(v.pixel(2, 0), img.pixel(2, 3));
        assert_eq!(h.flip_horizontal(), img);
    }

    #[test]
    fn png_and_ppm_codecs_round_trip_8bit() {
        let img = Image::from_fn(5, 3, |x, y| [(x * 40) as f32 / 255.0, (y * 60) as f32 / 255.0, 1.0]).unwrap();
        for bytes in [img.encode_png().unwrap(), img.encode_ppm()] {
            let back = Image::decode(&bytes).unwrap();
            assert_eq!(back, img);
        }
    }
}
