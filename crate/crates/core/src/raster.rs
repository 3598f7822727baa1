//! Single-channel floating point rasters with 8-bit PGM import/export.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, GrayImage, ImageEncoder, Luma};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster shape mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ShapeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
}

/// Row-major grayscale image. Intensities are nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::ShapeMismatch {
                expected_w: width,
                expected_h: height,
                got_w: data.len(),
                got_h: 1,
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn ensure_shape(&self, width: usize, height: usize) -> Result<(), RasterError> {
        if self.width != width || self.height != height {
            return Err(RasterError::ShapeMismatch {
                expected_w: width,
                expected_h: height,
                got_w: self.width,
                got_h: self.height,
            });
        }
        Ok(())
    }

    /// Bilinear sample at a sub-pixel location; `None` outside
    /// `[0, w-1] × [0, h-1]`. Integer locations return the stored value exactly.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = if fx == 0.0 {
            self.get(x0, y0)
        } else {
            self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx
        };
        if fy == 0.0 {
            return Some(top);
        }
        let bottom = if fx == 0.0 {
            self.get(x0, y1)
        } else {
            self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx
        };
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Intensity-weighted centroid `(x, y)`, or `None` for an all-zero image.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                m += v;
                mx += v * x as f64;
                my += v * y as f64;
            }
        }
        (m > 0.0).then(|| (mx / m, my / m))
    }

    /// Quantizes `[0, 1]` to 8 bits (clamped, rounded).
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize);
            Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
        })
    }

    /// Writes a binary (P5) 8-bit PGM.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path).map_err(image::ImageError::IoError)?);
        let img = self.to_gray8();
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)?;
        Ok(())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let img = image::open(path)?.to_luma8();
        Ok(Self::from_gray8(&img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_exact_at_integers() {
        let r = Raster::from_fn(5, 4, |x, y| (x * 7 + y * 3) as f64 * 0.01);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(r.sample_bilinear(x as f64, y as f64), Some(r.get(x, y)));
            }
        }
        assert_eq!(r.sample_bilinear(4.5, 0.0), None);
        assert_eq!(r.sample_bilinear(-0.1, 0.0), None);
        let mid = r.sample_bilinear(1.5, 2.5).unwrap();
        let expect = (r.get(1, 2) + r.get(2, 2) + r.get(1, 3) + r.get(2, 3)) / 4.0;
        assert!((mid - expect).abs() < 1e-15);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let r = Raster::from_fn(7, 3, |x, y| ((x + 7 * y) * 12) as f64 / 255.0);
        r.save_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let back = Raster::load_pgm(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn centroid_of_single_pixel() {
        let mut r = Raster::zeros(9, 9);
        r.set(2, 6, 1.0);
        assert_eq!(r.centroid(), Some((2.0, 6.0)));
        assert_eq!(Raster::zeros(3, 3).centroid(), None);
    }
}
