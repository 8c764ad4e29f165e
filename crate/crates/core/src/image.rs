//! 8-bit grayscale images, float planes, resampling and PGM I/O.
//!
//! Coordinates are pixel indices: pixel `(x, y)` sits at integer position
//! `(x, y)`. Resizing a region of side `n` to side `m` maps destination pixel
//! `j` to source position `origin + j * n / m`, the same similarity the
//! geometry module uses to relate views.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!("image size {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidConfig(format!(
                "pixel buffer of {} for {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn to_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|&p| p as f32).collect(),
        }
    }

    /// Copy out an integer-aligned sub-rectangle.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::OutOfBounds(format!(
                "region {w}x{h}+{x0}+{y0} in {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn mean_and_std(&self) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
        let var = self
            .pixels
            .iter()
            .map(|&p| (p as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    /// Bilinearly resample the square region of side `size` at `(ox, oy)` to
    /// an `out`×`out` image. Samples outside the image clamp to the border.
    pub fn resample_region(&self, ox: f64, oy: f64, size: f64, out: usize) -> GrayImage {
        let step = size / out as f64;
        let mut pixels = Vec::with_capacity(out * out);
        for i in 0..out {
            let sy = oy + i as f64 * step;
            for j in 0..out {
                let sx = ox + j as f64 * step;
                pixels.push(quantize(bilinear_u8(self, sx, sy)));
            }
        }
        GrayImage {
            width: out,
            height: out,
            pixels,
        }
    }

    /// Bilinear sample with border clamping.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        bilinear_u8(self, x, y)
    }

    /// Resize the whole (square) image to `out`×`out`.
    pub fn resize_square(&self, out: usize) -> GrayImage {
        self.resample_region(0.0, 0.0, self.width as f64, out)
    }

    pub fn read_pgm(path: &Path) -> Result<GrayImage> {
        let reader = BufReader::new(File::open(path)?);
        let decoded = image::ImageReader::with_format(reader, image::ImageFormat::Pnm)
            .decode()
            .map_err(|e| Error::BadImage {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        let luma = decoded.into_luma8();
        let (w, h) = luma.dimensions();
        GrayImage::new(w as usize, h as usize, luma.into_raw())
    }

    /// Write binary PGM (P5, maxval 255).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn bilinear_u8(img: &GrayImage, x: f64, y: f64) -> f64 {
    let maxx = (img.width - 1) as f64;
    let maxy = (img.height - 1) as f64;
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: usize, yy: usize| img.pixels[yy * img.width + xx] as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Row-major `f32` image used by the aligner and the scene generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return None;
        }
        let x0 = (x as usize).min(self.width.saturating_sub(2));
        let y0 = (y as usize).min(self.height.saturating_sub(2));
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let i = y0 * self.width + x0;
        let (x1, y1) = (
            usize::from(self.width > 1),
            if self.height > 1 { self.width } else { 0 },
        );
        let d = &self.data;
        let top = d[i] + (d[i + x1] - d[i]) * fx;
        let bot = d[i + y1] + (d[i + y1 + x1] - d[i + y1]) * fx;
        Some(top + (bot - top) * fy)
    }

    /// Sample with border clamping.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.sample(x, y).unwrap_or(0.0)
    }

    /// Separable `[1 4 6 4 1] / 16` binomial blur with clamped borders.
    pub fn blur5(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kw) in K.iter().enumerate() {
                    let xx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += kw * row[xx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0f32; w * h];
        for y in 0..h {
            for (k, kw) in K.iter().enumerate() {
                let yy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                let src = &tmp[yy * w..(yy + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += kw * s;
                }
            }
        }
        Plane {
            width: w,
            height: h,
            data: out,
        }
    }

    /// Blur then keep every second pixel, so level-`l` pixel `x` sits at
    /// level-0 position `x * 2^l`.
    pub fn pyr_down(&self) -> Plane {
        let b = self.blur5();
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(b.at(2 * x, 2 * y));
            }
        }
        Plane {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.data.iter().map(|&v| quantize(v as f64)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn identity_resample() {
        let img = GrayImage::from_fn(7, 7, |x, y| (x * 13 + y * 29) as u8);
        assert_eq!(img.resample_region(0.0, 0.0, 7.0, 7), img);
        let sub = img.sub_image(2, 1, 3, 3).unwrap();
        assert_eq!(img.resample_region(2.0, 1.0, 3.0, 3), sub);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 50 + y) as u8);
        img.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(GrayImage::read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn plane_sampling_and_pyramid() {
        let img = GrayImage::from_fn(4, 4, |x, _| (x * 10) as u8).to_plane();
        assert_eq!(img.sample(1.5, 2.0), Some(15.0));
        assert_eq!(img.sample(3.0, 3.0), Some(30.0));
        assert_eq!(img.sample(3.01, 0.0), None);
        let flat = Plane {
            width: 9,
            height: 9,
            data: vec![3.0; 81],
        };
        let down = flat.pyr_down();
        assert_eq!((down.width, down.height), (5, 5));
        assert!(down.data.iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }
}
