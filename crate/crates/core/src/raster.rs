//! RGB raster helpers: bounding-box crops, bilinear resampling and affine warps.
//!
//! Sampling convention: pixel `(i, j)` has its center at continuous
//! coordinate `(i, j)`. Bilinear weights come from the four surrounding
//! centers and the result is rounded half-up to 8 bits.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("image is empty")]
    EmptyImage,
    #[error("bounding box does not intersect the image")]
    EmptyCrop,
    #[error("target size must be positive")]
    ZeroSize,
}

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Integer pixel rectangle, half-open on the right and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self { x, y, width, height }
    }

    /// Grows the box by `fraction` of its size on every side.
    pub fn with_margin(self, fraction: f64) -> Self {
        let dx = self.width * fraction;
        let dy = self.height * fraction;
        Self::new(self.x - dx, self.y - dy, self.width + 2.0 * dx, self.height + 2.0 * dy)
    }

    /// Intersection with a `width × height` image, or `None` when empty.
    pub fn clamp(&self, width: u32, height: u32) -> Option<PixelRect> {
        if ![self.x, self.y, self.width, self.height].iter().all(|v| v.is_finite()) {
            return None;
        }
        let clip = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
        let x0 = clip(self.x.floor(), width);
        let y0 = clip(self.y.floor(), height);
        let x1 = clip((self.x + self.width).ceil(), width);
        let y1 = clip((self.y + self.height).ceil(), height);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(PixelRect {
            x: x0 as u32,
            y: y0 as u32,
            width: (x1 - x0) as u32,
            height: (y1 - y0) as u32,
        })
    }
}

pub fn crop_bbox(image: &RgbImage, bbox: &BBox) -> Result<RgbImage, RasterError> {
    if image.width() == 0 || image.height() == 0 {
        return Err(RasterError::EmptyImage);
    }
    let r = bbox
        .clamp(image.width(), image.height())
        .ok_or(RasterError::EmptyCrop)?;
    Ok(image::imageops::crop_imm(image, r.x, r.y, r.width, r.height).to_image())
}

/// How samples outside the source raster are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillPolicy {
    #[default]
    EdgeReplicate,
    ConstantBlack,
}

fn to_u8(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at continuous position `(x, y)`.
pub fn sample_bilinear(image: &RgbImage, x: f32, y: f32, fill: FillPolicy) -> [f32; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let texel = |ix: i64, iy: i64| -> [f32; 3] {
        let inside = ix >= 0 && iy >= 0 && ix < w && iy < h;
        if !inside && fill == FillPolicy::ConstantBlack {
            return [0.0; 3];
        }
        let p = image.get_pixel(ix.clamp(0, w - 1) as u32, iy.clamp(0, h - 1) as u32).0;
        [p[0] as f32, p[1] as f32, p[2] as f32]
    };
    let a = texel(x0, y0);
    let b = texel(x0 + 1, y0);
    let c = texel(x0, y0 + 1);
    let d = texel(x0 + 1, y0 + 1);
    let mut out = [0.0f32; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bottom = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bottom - top) * fy;
    }
    out
}

/// Resamples an image through an inverse map from output to source coordinates.
pub fn warp<F>(image: &RgbImage, width: u32, height: u32, fill: FillPolicy, inverse: F) -> RgbImage
where
    F: Fn(f32, f32) -> (f32, f32),
{
    RgbImage::from_fn(width, height, |i, j| {
        let (sx, sy) = inverse(i as f32, j as f32);
        let v = sample_bilinear(image, sx, sy, fill);
        image::Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])])
    })
}

/// Bilinear resize with pixel-center alignment and edge replication.
/// Same-size requests return an exact copy.
pub fn resize_bilinear(image: &RgbImage, width: u32, height: u32) -> Result<RgbImage, RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::ZeroSize);
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(RasterError::EmptyImage);
    }
    if image.width() == width && image.height() == height {
        return Ok(image.clone());
    }
    let sx = image.width() as f32 / width as f32;
    let sy = image.height() as f32 / height as f32;
    Ok(warp(image, width, height, FillPolicy::EdgeReplicate, |i, j| {
        ((i + 0.5) * sx - 0.5, (j + 0.5) * sy - 0.5)
    }))
}

/// Flattens an image into channel-major values scaled to `[0, 1]`.
pub fn to_chw<T: crate::scalar::Scalar>(image: &RgbImage) -> Vec<T> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut out = vec![T::zero(); 3 * w * h];
    let scale = T::of(1.0 / 255.0);
    for (i, j, p) in image.enumerate_pixels() {
        let idx = j as usize * w + i as usize;
        for c in 0..3 {
            out[c * w * h + idx] = T::of(p.0[c] as f64) * scale;
        }
    }
    out
}

pub fn flip_horizontal(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |i, j| image::Rgb([(i * 20) as u8, (j * 20) as u8, 7]))
    }

    #[test]
    fn full_box_crop_is_identity() {
        let img = gradient(10, 8);
        let out = crop_bbox(&img, &BBox::new(0.0, 0.0, 10.0, 8.0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn overhanging_box_is_clamped() {
        let img = gradient(10, 10);
        let out = crop_bbox(&img, &BBox::new(-5.0, 0.0, 20.0, 10.0)).unwrap();
        assert_eq!(out.dimensions(), (10, 10));
        let rect = BBox::new(-5.0, 2.0, 8.0, 3.0).clamp(10, 10).unwrap();
        assert_eq!(rect, PixelRect { x: 0, y: 2, width: 3, height: 3 });
    }

    #[test]
    fn outside_box_is_empty_crop() {
        let img = gradient(10, 10);
        assert_eq!(crop_bbox(&img, &BBox::new(20.0, 0.0, 5.0, 5.0)), Err(RasterError::EmptyCrop));
        assert_eq!(crop_bbox(&img, &BBox::new(2.0, 2.0, 0.0, 5.0)), Err(RasterError::EmptyCrop));
        assert_eq!(
            crop_bbox(&RgbImage::new(0, 0), &BBox::new(0.0, 0.0, 1.0, 1.0)),
            Err(RasterError::EmptyImage)
        );
    }

    #[test]
    fn crop_copies_the_right_pixels() {
        let img = gradient(10, 10);
        let out = crop_bbox(&img, &BBox::new(3.0, 4.0, 2.0, 2.0)).unwrap();
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(3, 4));
        assert_eq!(out.get_pixel(1, 1), img.get_pixel(4, 5));
    }

    #[test]
    fn margin_expands_symmetrically() {
        let b = BBox::new(10.0, 10.0, 20.0, 10.0).with_margin(0.1);
        assert_eq!(b, BBox::new(8.0, 9.0, 24.0, 12.0));
    }

    #[test]
    fn resize_same_size_is_exact() {
        let img = gradient(6, 6);
        assert_eq!(resize_bilinear(&img, 6, 6).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbImage::from_pixel(7, 3, image::Rgb([90, 10, 200]));
        let out = resize_bilinear(&img, 16, 11).unwrap();
        assert!(out.pixels().all(|p| p.0 == [90, 10, 200]));
    }

    #[test]
    fn upsample_doubles_with_known_weights() {
        // 2x1 image [0, 100] -> 4x1: source x = -0.25, 0.25, 0.75, 1.25
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, image::Rgb([100, 100, 100]));
        let out = resize_bilinear(&img, 4, 1).unwrap();
        let row: Vec<u8> = (0..4).map(|i| out.get_pixel(i, 0).0[0]).collect();
        assert_eq!(row, vec![0, 25, 75, 100]);
    }

    #[test]
    fn constant_black_fill_outside() {
        let img = RgbImage::from_pixel(4, 4, image::Rgb([200, 200, 200]));
        assert_eq!(sample_bilinear(&img, -3.0, 1.0, FillPolicy::ConstantBlack), [0.0; 3]);
        assert_eq!(sample_bilinear(&img, -3.0, 1.0, FillPolicy::EdgeReplicate), [200.0; 3]);
        assert_eq!(sample_bilinear(&img, -0.5, 1.0, FillPolicy::ConstantBlack), [100.0; 3]);
    }

    #[test]
    fn chw_layout() {
        let img = gradient(2, 2);
        let v: Vec<f64> = to_chw(&img);
        assert_eq!(v.len(), 12);
        assert!((v[1] - 20.0 / 255.0).abs() < 1e-12);
        assert!((v[4 + 2] - 20.0 / 255.0).abs() < 1e-12);
        assert!((v[8] - 7.0 / 255.0).abs() < 1e-12);
    }
}
