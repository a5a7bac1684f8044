use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Default letterbox fill, 114/255 grey.
pub const PAD_FILL: f32 = 114.0 / 255.0;

/// RGB image, channel-major `[3, height, width]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Image(format!("{} values for a {width}x{height} RGB image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; 3 * width * height] }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Decodes PNG or binary PPM/PGM (format chosen from the file contents).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px.0[c];
            }
        }
        Ok(Self { width: w, height: h, data })
    }

    /// Writes 8-bit RGB; the extension picks PNG or PPM.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            for c in 0..3 {
                px.0[c] = (self.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        buf.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Self::filled(width, height, 0.0);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |o: usize, s: f64, n: usize| {
            let src = ((o as f64 + 0.5) * s - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, (src - i0 as f64) as f32)
        };
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = taps(x, sx, self.width);
                for c in 0..3 {
                    let top = self.get(c, y0, x0) * (1.0 - fx) + self.get(c, y0, x1) * fx;
                    let bot = self.get(c, y1, x0) * (1.0 - fx) + self.get(c, y1, x1) * fx;
                    out.set(c, y, x, top * (1.0 - fy) + bot * fy);
                }
            }
        }
        out
    }

    /// `[1, 3, H, W]`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of_f64(v as f64)).collect();
        Tensor::new(&[1, 3, self.height, self.width], data).expect("consistent extents")
    }

    /// One-pixel rectangle outline, clipped to the image.
    pub fn draw_box(&mut self, bbox: [f64; 4], color: [f32; 3]) {
        if self.is_empty() {
            return;
        }
        let cx = |v: f64| (v.round().max(0.0) as usize).min(self.width - 1);
        let cy = |v: f64| (v.round().max(0.0) as usize).min(self.height - 1);
        let (x1, y1, x2, y2) = (cx(bbox[0]), cy(bbox[1]), cx(bbox[2]), cy(bbox[3]));
        for c in 0..3 {
            for x in x1..=x2 {
                self.set(c, y1, x, color[c]);
                self.set(c, y2, x, color[c]);
            }
            for y in y1..=y2 {
                self.set(c, y, x1, color[c]);
                self.set(c, y, x2, color[c]);
            }
        }
    }
}

/// How an original image sits inside its letterboxed square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterboxInfo {
    pub scale: f64,
    pub pad_left: usize,
    pub pad_top: usize,
    pub orig_width: usize,
    pub orig_height: usize,
    pub target: usize,
}

impl LetterboxInfo {
    /// Original-image box to letterboxed coordinates.
    pub fn map_box(&self, b: [f64; 4]) -> [f64; 4] {
        let (l, t) = (self.pad_left as f64, self.pad_top as f64);
        [b[0] * self.scale + l, b[1] * self.scale + t, b[2] * self.scale + l, b[3] * self.scale + t]
    }

    pub fn unmap_box(&self, b: [f64; 4]) -> [f64; 4] {
        let (l, t) = (self.pad_left as f64, self.pad_top as f64);
        [(b[0] - l) / self.scale, (b[1] - t) / self.scale, (b[2] - l) / self.scale, (b[3] - t) / self.scale]
    }

    pub fn clip_box(&self, b: [f64; 4]) -> [f64; 4] {
        let (w, h) = (self.orig_width as f64, self.orig_height as f64);
        [b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)]
    }
}

/// Aspect-preserving resize into a `target × target` square, padded evenly
/// (the odd pixel goes right/bottom) with `fill`.
pub fn letterbox(image: &Image, target: usize, fill: f32) -> Result<(Image, LetterboxInfo)> {
    if image.is_empty() || target == 0 {
        return Err(Error::Image(format!("cannot letterbox a {}x{} image to {target}", image.width, image.height)));
    }
    let scale = (target as f64 / image.width as f64).min(target as f64 / image.height as f64);
    let nw = ((image.width as f64 * scale).round() as usize).clamp(1, target);
    let nh = ((image.height as f64 * scale).round() as usize).clamp(1, target);
    let (pad_left, pad_top) = ((target - nw) / 2, (target - nh) / 2);
    let resized = image.resize(nw, nh);
    let mut out = Image::filled(target, target, fill);
    for c in 0..3 {
        for y in 0..nh {
            let src = (c * nh + y) * nw;
            let dst = (c * target + y + pad_top) * target + pad_left;
            out.data[dst..dst + nw].copy_from_slice(&resized.data[src..src + nw]);
        }
    }
    let info = LetterboxInfo { scale, pad_left, pad_top, orig_width: image.width, orig_height: image.height, target };
    Ok((out, info))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letterbox_examples() {
        let (img, info) = letterbox(&Image::filled(1280, 960, 0.5), 1280, PAD_FILL).unwrap();
        assert_eq!((info.scale, info.pad_left, info.pad_top), (1.0, 0, 160));
        assert_eq!(img.get(0, 0, 0), PAD_FILL);
        assert_eq!(img.get(0, 160, 0), 0.5);
        assert_eq!(img.get(0, 1279 - 160, 0), 0.5);
        assert_eq!(img.get(0, 1280 - 160, 0), PAD_FILL);

        let src = Image::filled(1280, 1280, 0.25);
        let (img, info) = letterbox(&src, 1280, PAD_FILL).unwrap();
        assert_eq!((info.scale, info.pad_left, info.pad_top), (1.0, 0, 0));
        assert_eq!(img, src);

        let (_, info) = letterbox(&Image::filled(640, 640, 0.0), 1280, PAD_FILL).unwrap();
        assert_eq!((info.scale, info.pad_left, info.pad_top), (2.0, 0, 0));

        assert!(letterbox(&Image::filled(0, 5, 0.0), 1280, PAD_FILL).is_err());
    }

    #[test]
    fn resize_keeps_constants_and_corners() {
        let mut img = Image::filled(4, 3, 0.3);
        assert!(img.resize(9, 7).data.iter().all(|&v| (v - 0.3).abs() < 1e-6));
        img.set(1, 0, 0, 1.0);
        let up = img.resize(8, 6);
        assert_eq!(up.get(1, 0, 0), 1.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::filled(5, 3, 0.0);
        img.set(0, 1, 2, 1.0);
        img.set(2, 2, 4, 128.0 / 255.0);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(Image::load(&p).unwrap(), img);
        }
    }
}
