//! `f32` RGB image buffer with PNG round-tripping and resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// H×W RGB image, values in `[0,1]`, pixel-major with channels contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![0.0; h * w * 3] }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * 3);
        Image { h, w, data }
    }

    #[inline]
    pub fn px(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_px(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Snap every channel to the 8-bit grid, exactly matching a PNG round trip.
    pub fn quantize_u8(&mut self) {
        for v in self.data.iter_mut() {
            let q = (*v * 255.0).round().clamp(0.0, 255.0) as u8;
            *v = q as f32 / 255.0;
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(h: usize, w: usize, bytes: &[u8]) -> Self {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Image { h, w, data }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.to_rgb8())
            .expect("raw buffer size");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image { path: path.to_path_buf(), source: e })?
            .to_rgb8();
        Ok(Image::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw()))
    }

    /// Exact box average for integer downscale factors.
    pub fn downsample_box(&self, factor: usize) -> Image {
        assert!(factor >= 1 && self.h % factor == 0 && self.w % factor == 0);
        let (oh, ow) = (self.h / factor, self.w / factor);
        let mut out = Image::new(oh, ow);
        let norm = 1.0 / (factor * factor) as f32;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.px(oy * factor + dy, ox * factor + dx);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_px(oy, ox, [acc[0] * norm, acc[1] * norm, acc[2] * norm]);
            }
        }
        out
    }

    /// Bilinear resize with half-pixel centers; box average when the target
    /// evenly divides the source.
    pub fn resize(&self, oh: usize, ow: usize) -> Image {
        if oh == self.h && ow == self.w {
            return self.clone();
        }
        if self.h % oh == 0 && self.w % ow == 0 && self.h / oh == self.w / ow {
            return self.downsample_box(self.h / oh);
        }
        let mut out = Image::new(oh, ow);
        let sy = self.h as f64 / oh as f64;
        let sx = self.w as f64 / ow as f64;
        for oy in 0..oh {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.h - 1);
            let ty = (fy - y0 as f64) as f32;
            for ox in 0..ow {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.w - 1);
                let tx = (fx - x0 as f64) as f32;
                let mut rgb = [0.0f32; 3];
                for c in 0..3 {
                    let p00 = self.px(y0, x0)[c];
                    let p01 = self.px(y0, x1)[c];
                    let p10 = self.px(y1, x0)[c];
                    let p11 = self.px(y1, x1)[c];
                    let top = p00 + (p01 - p00) * tx;
                    let bot = p10 + (p11 - p10) * tx;
                    rgb[c] = top + (bot - top) * ty;
                }
                out.set_px(oy, ox, rgb);
            }
        }
        out
    }

    /// Catmull-Rom bicubic upscale by an integer factor; the non-learned
    /// upsampling baseline.
    pub fn upscale_bicubic(&self, factor: usize) -> Image {
        let (oh, ow) = (self.h * factor, self.w * factor);
        let mut out = Image::new(oh, ow);
        let kernel = |t: f32| -> f32 {
            // Catmull-Rom (a = -0.5)
            let t = t.abs();
            if t < 1.0 {
                1.5 * t * t * t - 2.5 * t * t + 1.0
            } else if t < 2.0 {
                -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
            } else {
                0.0
            }
        };
        let s = factor as f32;
        for oy in 0..oh {
            let fy = (oy as f32 + 0.5) / s - 0.5;
            let y0 = fy.floor() as isize;
            for ox in 0..ow {
                let fx = (ox as f32 + 0.5) / s - 0.5;
                let x0 = fx.floor() as isize;
                let mut rgb = [0.0f32; 3];
                let mut wsum = 0.0f32;
                for dy in -1..3isize {
                    let yy = (y0 + dy).clamp(0, self.h as isize - 1) as usize;
                    let wy = kernel(fy - (y0 + dy) as f32);
                    for dx in -1..3isize {
                        let xx = (x0 + dx).clamp(0, self.w as isize - 1) as usize;
                        let wgt = wy * kernel(fx - (x0 + dx) as f32);
                        wsum += wgt;
                        let p = self.px(yy, xx);
                        for c in 0..3 {
                            rgb[c] += wgt * p[c];
                        }
                    }
                }
                for c in rgb.iter_mut() {
                    *c = (*c / wsum).clamp(0.0, 1.0);
                }
                out.set_px(oy, ox, rgb);
            }
        }
        out
    }

    /// Mean squared error between two same-shape images.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let mut s = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b) as f64;
            s += d * d;
        }
        s / self.data.len() as f64
    }
}
