//! Dense 3D location fields.
//!
//! A location field has the size of an image and stores, for every pixel
//! covered by the model, the model-space point visible at the pixel center.
//! Background pixels hold `(0, 0, 0)` and are marked false in the mask.

mod raster;
mod sampler;

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::camera::BoundingBox2D;

pub use raster::rasterize_field;
pub use sampler::{sample_pose, PoseSamplerConfig};

/// Side length of fields after the RoI crop.
pub const DEFAULT_FIELD_SIZE: usize = 56;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("crop contains no foreground")]
    EmptyCrop,
    #[error("invalid sampler configuration: {0}")]
    BadConfig(&'static str),
    #[error("field size must be at least 1x1")]
    EmptyField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationField {
    width: usize,
    height: usize,
    coords: Vec<[f32; 3]>,
    mask: Vec<bool>,
}

impl LocationField {
    /// All-background field.
    pub fn background(width: usize, height: usize) -> Self {
        LocationField {
            width,
            height,
            coords: vec![[0.0; 3]; width * height],
            mask: vec![false; width * height],
        }
    }

    /// Builds a field from row-major buffers. Background coordinates are
    /// forced to zero.
    pub fn from_parts(
        width: usize,
        height: usize,
        mut coords: Vec<[f32; 3]>,
        mask: Vec<bool>,
    ) -> Option<Self> {
        let n = width.checked_mul(height)?;
        if coords.len() != n || mask.len() != n {
            return None;
        }
        for (c, m) in coords.iter_mut().zip(&mask) {
            if !m {
                *c = [0.0; 3];
            }
        }
        Some(LocationField { width, height, coords, mask })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[[f32; 3]] {
        &self.coords
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    /// Stored point at column `x`, row `y`, or `None` for background.
    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 3]> {
        let i = self.index(x, y);
        self.mask[i].then(|| self.coords[i])
    }

    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, value: Option<[f32; 3]>) {
        let i = self.index(x, y);
        self.mask[i] = value.is_some();
        self.coords[i] = value.unwrap_or([0.0; 3]);
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `(x, y, point)` for every foreground pixel in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize, [f32; 3])> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(move |(i, _)| (i % self.width, i / self.width, self.coords[i]))
    }
}

/// Nearest-neighbor sampling grid of an `out_size x out_size` crop of a
/// `source_width x source_height` field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropFrame {
    pub roi: BoundingBox2D,
    pub out_size: usize,
    pub source_width: usize,
    pub source_height: usize,
}

impl CropFrame {
    pub fn new(roi: BoundingBox2D, out_size: usize, source_width: usize, source_height: usize) -> Self {
        CropFrame { roi, out_size, source_width, source_height }
    }

    fn axis(min: f64, extent: f64, out: usize, i: usize, limit: usize) -> Option<usize> {
        let pos = min + (i as f64 + 0.5) * (extent / out as f64);
        let idx = pos.floor();
        (idx >= 0.0 && idx < limit as f64).then_some(idx as usize)
    }

    /// Source pixel sampled by output pixel `(col, row)`; `None` when the
    /// sample falls outside the source field.
    pub fn source_pixel(&self, col: usize, row: usize) -> Option<(usize, usize)> {
        let x = Self::axis(self.roi.min_x, self.roi.width(), self.out_size, col, self.source_width)?;
        let y = Self::axis(self.roi.min_y, self.roi.height(), self.out_size, row, self.source_height)?;
        Some((x, y))
    }
}

/// Relation between field pixels and image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PixelFrame {
    /// The field is the full image.
    Image,
    /// The field is a nearest-neighbor crop of an image-sized field.
    Crop(CropFrame),
}

impl PixelFrame {
    /// Image position of the point stored at field pixel `(col, row)`: the
    /// center of the image pixel the value was taken from.
    pub fn image_position(&self, col: usize, row: usize) -> Option<(f64, f64)> {
        match self {
            PixelFrame::Image => Some((col as f64 + 0.5, row as f64 + 0.5)),
            PixelFrame::Crop(frame) => {
                let (x, y) = frame.source_pixel(col, row)?;
                Some((x as f64 + 0.5, y as f64 + 0.5))
            }
        }
    }
}

/// Nearest-neighbor crop of `roi` resampled to `out_size x out_size`.
///
/// Output pixel centers are mapped linearly onto the RoI and each takes the
/// value and mask of the source pixel containing the mapped point; samples
/// outside the source are background. Values are copied, never blended.
pub fn crop_resize_field(
    field: &LocationField,
    roi: &BoundingBox2D,
    out_size: usize,
) -> Result<LocationField, FieldError> {
    if out_size == 0 {
        return Err(FieldError::EmptyField);
    }
    if !roi_has_foreground(field, roi) {
        return Err(FieldError::EmptyCrop);
    }
    let frame = CropFrame::new(*roi, out_size, field.width, field.height);
    let mut out = LocationField::background(out_size, out_size);
    for row in 0..out_size {
        for col in 0..out_size {
            if let Some((x, y)) = frame.source_pixel(col, row) {
                let i = field.index(x, y);
                let o = out.index(col, row);
                out.mask[o] = field.mask[i];
                out.coords[o] = field.coords[i];
            }
        }
    }
    Ok(out)
}

fn roi_has_foreground(field: &LocationField, roi: &BoundingBox2D) -> bool {
    let clamp = |v: f64, limit: usize| v.max(0.0).min(limit as f64);
    let x0 = clamp(roi.min_x.floor(), field.width) as usize;
    let x1 = clamp(roi.max_x.ceil(), field.width) as usize;
    let y0 = clamp(roi.min_y.floor(), field.height) as usize;
    let y1 = clamp(roi.max_y.ceil(), field.height) as usize;
    (y0..y1).any(|y| (x0..x1).any(|x| field.mask[y * field.width + x]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patterned(w: usize, h: usize) -> LocationField {
        let mut f = LocationField::background(w, h);
        for y in 0..h {
            for x in 0..w {
                if (x * 7 + y * 3) % 5 != 0 {
                    f.set(x, y, Some([x as f32, y as f32, (x * y) as f32 * 0.25]));
                }
            }
        }
        f
    }

    #[test]
    fn identity_crop_is_identity() {
        let f = patterned(17, 17);
        let roi = BoundingBox2D::new(0.0, 0.0, 17.0, 17.0).unwrap();
        assert_eq!(crop_resize_field(&f, &roi, 17).unwrap(), f);
    }

    #[test]
    fn up_then_down_is_identity() {
        let f = patterned(13, 13);
        let up = crop_resize_field(&f, &BoundingBox2D::new(0.0, 0.0, 13.0, 13.0).unwrap(), 26).unwrap();
        let down = crop_resize_field(&up, &BoundingBox2D::new(0.0, 0.0, 26.0, 26.0).unwrap(), 13).unwrap();
        assert_eq!(down, f);
    }

    #[test]
    fn empty_crop_is_an_error() {
        let mut f = LocationField::background(10, 10);
        f.set(9, 9, Some([1.0, 1.0, 1.0]));
        let roi = BoundingBox2D::new(0.0, 0.0, 5.0, 5.0).unwrap();
        assert_eq!(crop_resize_field(&f, &roi, 4), Err(FieldError::EmptyCrop));
        let outside = BoundingBox2D::new(20.0, 20.0, 30.0, 30.0).unwrap();
        assert_eq!(crop_resize_field(&f, &outside, 4), Err(FieldError::EmptyCrop));
    }

    #[test]
    fn crop_values_are_copied() {
        let f = patterned(40, 30);
        let roi = BoundingBox2D::new(3.3, 4.1, 27.9, 29.2).unwrap();
        let out = crop_resize_field(&f, &roi, 11).unwrap();
        let frame = CropFrame::new(roi, 11, 40, 30);
        for row in 0..11 {
            for col in 0..11 {
                let (x, y) = frame.source_pixel(col, row).unwrap();
                assert_eq!(out.get(col, row), f.get(x, y));
            }
        }
    }

    #[test]
    fn crop_outside_source_is_background() {
        let f = patterned(8, 8);
        let roi = BoundingBox2D::new(-8.0, -8.0, 8.0, 8.0).unwrap();
        let out = crop_resize_field(&f, &roi, 4).unwrap();
        assert!(!out.is_foreground(0, 0));
        assert!(!out.is_foreground(1, 3));
        assert_eq!(out.get(0, 0), None);
        assert_eq!(out.coords()[0], [0.0; 3]);
    }

    #[test]
    fn from_parts_zeroes_background() {
        let f = LocationField::from_parts(2, 1, vec![[1.0; 3], [2.0; 3]], vec![true, false]).unwrap();
        assert_eq!(f.coords(), &[[1.0; 3], [0.0; 3]]);
        assert!(LocationField::from_parts(2, 2, vec![[0.0; 3]], vec![false]).is_none());
    }
}
