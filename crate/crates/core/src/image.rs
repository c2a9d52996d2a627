//! Linear-light RGB image buffer.
//!
//! Values are linear radiance in [0, 1] (not clamped while rendering);
//! conversion to and from 8-bit sRGB happens only at the PNG boundary.

use nalgebra::Vector3;

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer<T: Real> {
    width: usize,
    height: usize,
    /// Row-major, RGB interleaved: `data[3 * (y * width + x) + channel]`.
    data: Vec<T>,
}

impl<T: Real> ImageBuffer<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![T::zero(); 3 * width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: Vector3<T>) -> Self {
        let mut img = Self::new(width, height);
        for p in 0..width * height {
            img.data[3 * p] = rgb.x;
            img.data[3 * p + 1] = rgb.y;
            img.data[3 * p + 2] = rgb.z;
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
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

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<T> {
        let i = 3 * (y * self.width + x);
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: Vector3<T>) {
        let i = 3 * (y * self.width + x);
        self.data[i] = rgb.x;
        self.data[i + 1] = rgb.y;
        self.data[i + 2] = rgb.z;
    }

    /// Extracts one channel as a planar image (used by SSIM).
    pub fn channel(&self, c: usize) -> Vec<T> {
        assert!(c < 3);
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Largest absolute per-component difference to another image.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), |m, d| m.max(d))
    }

    /// Mean squared error over all components.
    pub fn mse(&self, other: &Self) -> T {
        assert_eq!(self.data.len(), other.data.len());
        let n = T::from_usize(self.data.len()).unwrap();
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            / n
    }
}
