//! View-dependent color from real spherical harmonics, degree <= 2.
//!
//! Basis order is fixed as (l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2),
//! (2,-1), (2,0), (2,1), (2,2); nine coefficients per channel, 27 per
//! Gaussian. Color decodes as `max(0, sum_j k_j * Y_j(v) + 0.5)` so a zero
//! coefficient vector is mid-gray.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::gaussian::SH_COEFFS;
use crate::geometry::Pose;
use crate::scalar::Real;

/// Y(0,0); also the factor converting between DC coefficient and mean color.
pub const Y00: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_XY: f64 = 1.092_548_430_592_079_2;
const C2_Z2: f64 = 0.315_391_565_252_520_05;
const C2_X2Y2: f64 = 0.546_274_215_296_039_6;

/// Frame the view direction is expressed in before basis evaluation.
///
/// `Camera` follows the sensor: the same Gaussian shows a different lobe as
/// the camera orbits even without re-orienting the map. `World` fixes the
/// lobe to the scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShFrame {
    #[default]
    Camera,
    World,
}

/// Unit view direction for a Gaussian seen from a camera, plus its polar
/// angles (theta from +z, phi = atan2(y, x)).
pub fn view_direction<T: Real>(
    mean: &Vector3<T>,
    camera_pose: &Pose<T>,
    frame: ShFrame,
) -> (Vector3<T>, (T, T)) {
    let v = match frame {
        ShFrame::Camera => camera_pose.inverse_transform_point(mean),
        ShFrame::World => mean - camera_pose.translation,
    };
    let dir = v / v.norm();
    let theta = dir.z.clamp(-T::one(), T::one()).acos();
    let phi = dir.y.atan2(dir.x);
    (dir, (theta, phi))
}

/// Evaluates the nine basis functions at a unit direction.
pub fn sh_basis<T: Real>(dir: &Vector3<T>) -> [T; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let three = T::c(3.0);
    [
        T::c(Y00),
        -T::c(C1) * y,
        T::c(C1) * z,
        -T::c(C1) * x,
        T::c(C2_XY) * x * y,
        -T::c(C2_XY) * y * z,
        T::c(C2_Z2) * (three * z * z - T::one()),
        -T::c(C2_XY) * x * z,
        T::c(C2_X2Y2) * (x * x - y * y),
    ]
}

/// Gradients of the basis polynomials with respect to the direction
/// components (unconstrained; project onto the tangent plane when chaining
/// through a normalization).
pub fn sh_basis_grad<T: Real>(dir: &Vector3<T>) -> [Vector3<T>; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let z6 = T::c(6.0) * z;
    let two = T::c(2.0);
    [
        Vector3::zeros(),
        Vector3::new(T::zero(), -T::c(C1), T::zero()),
        Vector3::new(T::zero(), T::zero(), T::c(C1)),
        Vector3::new(-T::c(C1), T::zero(), T::zero()),
        Vector3::new(T::c(C2_XY) * y, T::c(C2_XY) * x, T::zero()),
        Vector3::new(T::zero(), -T::c(C2_XY) * z, -T::c(C2_XY) * y),
        Vector3::new(T::zero(), T::zero(), T::c(C2_Z2) * z6),
        Vector3::new(-T::c(C2_XY) * z, T::zero(), -T::c(C2_XY) * x),
        Vector3::new(T::c(C2_X2Y2) * two * x, -T::c(C2_X2Y2) * two * y, T::zero()),
    ]
}

/// Decoded color plus everything the backward pass needs.
pub struct ShEval<T: Real> {
    pub color: Vector3<T>,
    pub basis: [T; SH_COEFFS],
    /// True where the channel was clamped at zero (gradient is cut there).
    pub clamped: [bool; 3],
}

pub fn eval_sh_color<T: Real>(
    sh: &[Vector3<T>; SH_COEFFS],
    dir: &Vector3<T>,
) -> ShEval<T> {
    let basis = sh_basis(dir);
    let half = T::c(0.5);
    let mut color = Vector3::new(half, half, half);
    for j in 0..SH_COEFFS {
        color += sh[j] * basis[j];
    }
    let mut clamped = [false; 3];
    for ch in 0..3 {
        if color[ch] < T::zero() {
            color[ch] = T::zero();
            clamped[ch] = true;
        }
    }
    ShEval {
        color,
        basis,
        clamped,
    }
}

/// `d color / d dir` (rows: channels) for unclamped channels; clamped rows
/// are zero. Gradient of the raw polynomials; see [`sh_basis_grad`].
pub fn sh_color_dir_jacobian<T: Real>(
    sh: &[Vector3<T>; SH_COEFFS],
    dir: &Vector3<T>,
    clamped: &[bool; 3],
) -> nalgebra::Matrix3<T> {
    let grads = sh_basis_grad(dir);
    let mut jac = nalgebra::Matrix3::zeros();
    for ch in 0..3 {
        if clamped[ch] {
            continue;
        }
        let mut row = Vector3::zeros();
        for j in 0..SH_COEFFS {
            row += grads[j] * sh[j][ch];
        }
        jac.set_row(ch, &row.transpose());
    }
    jac
}

/// DC coefficient whose decoded color (at any direction, other coefficients
/// zero) equals `rgb`.
pub fn dc_from_rgb<T: Real>(rgb: &Vector3<T>) -> Vector3<T> {
    let half = T::c(0.5);
    (rgb - Vector3::new(half, half, half)) / T::c(Y00)
}
