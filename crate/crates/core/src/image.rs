//! Dense per-pixel maps (color, depth, masks) and their PNG encodings.
//!
//! Pixels are addressed as `(x, y)` with `x` along the width. Depth maps use
//! `f64::INFINITY` as the "nothing here" sentinel.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::IoError;

pub type Rgb3 = [f64; 3];

/// Sentinel stored in depth maps where nothing was rendered.
pub const DEPTH_SENTINEL: f64 = f64::INFINITY;

/// Row-major `width × height` map.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbImage = Grid<Rgb3>;
pub type DepthMap = Grid<f64>;
pub type Mask = Grid<bool>;
pub type ScalarMap = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index(x, y);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Grid<V> {
        assert!(self.same_dims(other), "grid dimension mismatch");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Mask) -> Mask {
        self.zip_map(other, |&a, &b| a || b)
    }

    pub fn intersection(&self, other: &Mask) -> Mask {
        self.zip_map(other, |&a, &b| a && b)
    }

    pub fn complement(&self) -> Mask {
        self.map(|&b| !b)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_dims(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn to_scalar(&self) -> ScalarMap {
        self.map(|&b| if b { 1.0 } else { 0.0 })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), IoError> {
        let buf =
            ImageBuffer::<Luma<u8>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
                Luma([if *self.get(x as usize, y as usize) {
                    255
                } else {
                    0
                }])
            });
        buf.save(path).map_err(|e| IoError::image(path, e))
    }

    /// Loads an 8-bit mask; any value ≥ 128 reads as set.
    pub fn load_png(path: &Path) -> Result<Mask, IoError> {
        let img = image::open(path)
            .map_err(|e| IoError::image(path, e))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
            img.get_pixel(x as u32, y as u32)[0] >= 128
        }))
    }
}

impl ScalarMap {
    /// Writes values in `[0, 1]` as 8-bit gray, `round(v * 255)`.
    pub fn save_unit_png(&self, path: &Path) -> Result<(), IoError> {
        let buf =
            ImageBuffer::<Luma<u8>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
                Luma([unit_to_u8(*self.get(x as usize, y as usize))])
            });
        buf.save(path).map_err(|e| IoError::image(path, e))
    }

    pub fn load_unit_png(path: &Path) -> Result<ScalarMap, IoError> {
        let img = image::open(path)
            .map_err(|e| IoError::image(path, e))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
            f64::from(img.get_pixel(x as u32, y as u32)[0]) / 255.0
        }))
    }

    /// 16-bit depth encoding: `round(d / scale)`, with 0 reserved for the
    /// sentinel and values clamped to the representable range.
    pub fn save_depth_png(&self, path: &Path, scale: f64) -> Result<(), IoError> {
        let buf =
            ImageBuffer::<Luma<u16>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
                Luma([depth_to_u16(*self.get(x as usize, y as usize), scale)])
            });
        buf.save(path).map_err(|e| IoError::image(path, e))
    }

    pub fn load_depth_png(path: &Path, scale: f64) -> Result<DepthMap, IoError> {
        let img = image::open(path)
            .map_err(|e| IoError::image(path, e))?
            .into_luma16();
        let (w, h) = img.dimensions();
        Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
            match img.get_pixel(x as u32, y as u32)[0] {
                0 => DEPTH_SENTINEL,
                v => f64::from(v) * scale,
            }
        }))
    }
}

impl RgbImage {
    pub fn save_png(&self, path: &Path) -> Result<(), IoError> {
        let buf =
            ImageBuffer::<Rgb<u8>, _>::from_fn(self.width as u32, self.height as u32, |x, y| {
                let c = self.get(x as usize, y as usize);
                Rgb([unit_to_u8(c[0]), unit_to_u8(c[1]), unit_to_u8(c[2])])
            });
        buf.save(path).map_err(|e| IoError::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<RgbImage, IoError> {
        let img = image::open(path)
            .map_err(|e| IoError::image(path, e))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
            let p = img.get_pixel(x as u32, y as u32);
            [
                f64::from(p[0]) / 255.0,
                f64::from(p[1]) / 255.0,
                f64::from(p[2]) / 255.0,
            ]
        }))
    }

    /// Per-pixel mean absolute color difference over the three channels.
    pub fn mean_abs_diff(&self, other: &RgbImage) -> ScalarMap {
        self.zip_map(other, |a, b| {
            ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
        })
    }
}

pub fn unit_to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn depth_to_u16(d: f64, scale: f64) -> u16 {
    if !d.is_finite() || d <= 0.0 {
        return 0;
    }
    (d / scale).round().clamp(1.0, f64::from(u16::MAX)) as u16
}
