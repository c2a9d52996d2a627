//! The map primitive: an anisotropic surface Gaussian with factored
//! covariance and view-dependent color.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::geometry::SymMat3;
use crate::scalar::Real;
use crate::tolerances::EIG_FLOOR;

/// Number of spherical-harmonic coefficients per color channel (degree <= 2).
pub const SH_COEFFS: usize = 9;

/// One surface element. Covariance is never stored densely; it is always the
/// factored form `R * diag(exp(2 * log_scale)) * R^T`, which stays positive
/// semi-definite under unconstrained optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceGaussian<T: Real> {
    pub mean: Vector3<T>,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vector3<T>,
    pub rotation: UnitQuaternion<T>,
    /// Opacity before the logistic squash; keeps opacity in (0, 1).
    pub opacity_logit: T,
    /// `sh[j]` holds the RGB triple for basis function `j`; `sh[0]` is the
    /// view-independent (DC) component.
    pub sh: [Vector3<T>; SH_COEFFS],
}

impl<T: Real> SurfaceGaussian<T> {
    pub fn opacity(&self) -> T {
        logistic(self.opacity_logit)
    }

    /// Per-axis standard deviations `exp(log_scale)`.
    pub fn scale(&self) -> Vector3<T> {
        self.log_scale.map(|s| s.exp())
    }

    /// Square-root factor `M = R * diag(exp(log_scale))`, so `cov = M * M^T`.
    pub fn sqrt_factor(&self) -> Matrix3<T> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s = self.scale();
        Matrix3::from_columns(&[
            r.column(0) * s.x,
            r.column(1) * s.y,
            r.column(2) * s.z,
        ])
    }

    pub fn covariance(&self) -> Matrix3<T> {
        let m = self.sqrt_factor();
        m * m.transpose()
    }
}

/// Recovers `(log_scale, rotation)` factors from a symmetric covariance.
///
/// Eigenvalues are clamped to [`EIG_FLOOR`] so flat (rank-deficient)
/// covariances map to very thin but finite Gaussians. The eigenvector basis
/// is made right-handed before conversion to a quaternion.
pub fn factors_from_covariance<T: Real>(
    cov: &SymMat3<T>,
) -> (Vector3<T>, UnitQuaternion<T>) {
    let (vals, mut vecs) = cov.eigen_ascending();
    if vecs.determinant() < T::zero() {
        let flipped = -vecs.column(2).into_owned();
        vecs.set_column(2, &flipped);
    }
    let floor = T::c(EIG_FLOOR);
    let half = T::c(0.5);
    let log_scale = Vector3::new(
        vals.x.max(floor).ln() * half,
        vals.y.max(floor).ln() * half,
        vals.z.max(floor).ln() * half,
    );
    let rotation = UnitQuaternion::from_matrix(&vecs);
    (log_scale, rotation)
}

pub fn logistic<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse of [`logistic`]; `p` must lie strictly inside (0, 1).
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Order-sensitive fingerprint of a whole map, used to detect mutation
/// between a forward render and its backward pass.
pub fn map_fingerprint<T: Real>(gaussians: &[SurfaceGaussian<T>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ (gaussians.len() as u64);
    let mut mix = |v: f64| {
        h = (h.rotate_left(5) ^ v.to_bits()).wrapping_mul(0x1000_0000_01b3);
    };
    for g in gaussians {
        for k in 0..3 {
            mix(g.mean[k].to_f64().unwrap_or(f64::NAN));
            mix(g.log_scale[k].to_f64().unwrap_or(f64::NAN));
        }
        let q = g.rotation.as_ref();
        for v in [q.w, q.i, q.j, q.k] {
            mix(v.to_f64().unwrap_or(f64::NAN));
        }
        mix(g.opacity_logit.to_f64().unwrap_or(f64::NAN));
        for j in 0..SH_COEFFS {
            for k in 0..3 {
                mix(g.sh[j][k].to_f64().unwrap_or(f64::NAN));
            }
        }
    }
    h
}
