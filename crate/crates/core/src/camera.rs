//! Pinhole camera model and posed views.
//!
//! Camera frame convention: +x right, +y down, +z forward (optical axis).
//! Poses map camera coordinates to world coordinates.

use nalgebra::Vector2;

use crate::geometry::Pose;
use crate::image::ImageBuffer;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={fx} fy={fy}")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside image {width}x{height}")]
    PrincipalPointOutside {
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    },
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(CameraError::NonPositiveFocal {
                fx: fx.to_f64().unwrap_or(f64::NAN),
                fy: fy.to_f64().unwrap_or(f64::NAN),
            });
        }
        let inside = cx > T::zero()
            && cx < T::from_usize(width).unwrap()
            && cy > T::zero()
            && cy < T::from_usize(height).unwrap();
        if !inside {
            return Err(CameraError::PrincipalPointOutside {
                cx: cx.to_f64().unwrap_or(f64::NAN),
                cy: cy.to_f64().unwrap_or(f64::NAN),
                width,
                height,
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point (z > 0) to pixel coordinates.
    pub fn project(&self, p: &nalgebra::Vector3<T>) -> Vector2<T> {
        Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// A posed camera with its reference image.
#[derive(Clone, Debug)]
pub struct View<T: Real> {
    /// Frame index within the dataset, in timestamp order.
    pub id: usize,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: Pose<T>,
    pub image: ImageBuffer<T>,
}
