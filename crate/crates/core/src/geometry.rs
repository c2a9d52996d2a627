//! Minimal geometric primitives: exactly-symmetric 3x3 matrices and SE(3)
//! poses stored as unit quaternion + translation.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::tolerances::QUAT_NORM_REJECT;

/// Symmetric 3x3 matrix stored as its upper triangle.
///
/// Storing six entries keeps accumulated scatter matrices symmetric by
/// construction; a full `Matrix3` drifts off symmetry under repeated
/// floating-point updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymMat3<T: Real> {
    pub xx: T,
    pub xy: T,
    pub xz: T,
    pub yy: T,
    pub yz: T,
    pub zz: T,
}

impl<T: Real> SymMat3<T> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn identity() -> Self {
        Self {
            xx: T::one(),
            yy: T::one(),
            zz: T::one(),
            ..Self::default()
        }
    }

    /// v * v^T
    pub fn outer(v: &Vector3<T>) -> Self {
        Self {
            xx: v.x * v.x,
            xy: v.x * v.y,
            xz: v.x * v.z,
            yy: v.y * v.y,
            yz: v.y * v.z,
            zz: v.z * v.z,
        }
    }

    /// Symmetric part of an arbitrary matrix (off-diagonal entries averaged).
    pub fn from_matrix(m: &Matrix3<T>) -> Self {
        let half = T::c(0.5);
        Self {
            xx: m[(0, 0)],
            xy: (m[(0, 1)] + m[(1, 0)]) * half,
            xz: (m[(0, 2)] + m[(2, 0)]) * half,
            yy: m[(1, 1)],
            yz: (m[(1, 2)] + m[(2, 1)]) * half,
            zz: m[(2, 2)],
        }
    }

    pub fn to_matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.xx += other.xx;
        self.xy += other.xy;
        self.xz += other.xz;
        self.yy += other.yy;
        self.yz += other.yz;
        self.zz += other.zz;
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            xx: self.xx * s,
            xy: self.xy * s,
            xz: self.xz * s,
            yy: self.yy * s,
            yz: self.yz * s,
            zz: self.zz * s,
        }
    }

    /// v^T * M * v
    pub fn quadratic_form(&self, v: &Vector3<T>) -> T {
        let two = T::c(2.0);
        self.xx * v.x * v.x
            + self.yy * v.y * v.y
            + self.zz * v.z * v.z
            + two * (self.xy * v.x * v.y + self.xz * v.x * v.z + self.yz * v.y * v.z)
    }

    /// Eigenvalues in ascending order with matching eigenvector columns.
    ///
    /// Eigenvector signs are canonicalized (largest-magnitude component
    /// positive) so results are reproducible; callers that need a specific
    /// orientation flip afterwards.
    pub fn eigen_ascending(&self) -> (Vector3<T>, Matrix3<T>) {
        let eig = nalgebra::SymmetricEigen::new(self.to_matrix());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("non-finite eigenvalue")
        });
        let mut values = Vector3::zeros();
        let mut vectors = Matrix3::zeros();
        for (dst, &src) in order.iter().enumerate() {
            values[dst] = eig.eigenvalues[src];
            let mut col = eig.eigenvectors.column(src).into_owned();
            let mut dominant = 0;
            for k in 1..3 {
                if col[k].abs() > col[dominant].abs() {
                    dominant = k;
                }
            }
            if col[dominant] < T::zero() {
                col = -col;
            }
            vectors.set_column(dst, &col);
        }
        (values, vectors)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PoseError {
    #[error("quaternion norm {norm} outside [{lo}, {hi}]")]
    QuaternionNorm { norm: f64, lo: f64, hi: f64 },
}

/// Rigid transform mapping camera coordinates to world coordinates.
///
/// `transform_point` applies R * p + t; `inverse_transform_point` brings a
/// world point into the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components.
    ///
    /// Rejects grossly non-unit quaternions (norm outside
    /// [`QUAT_NORM_REJECT`] of 1) and renormalizes mild drift.
    pub fn from_raw(wxyz: [T; 4], translation: Vector3<T>) -> Result<Self, PoseError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        let (lo, hi) = (1.0 - QUAT_NORM_REJECT, 1.0 + QUAT_NORM_REJECT);
        let n = norm.to_f64().unwrap_or(f64::NAN);
        if !(lo..=hi).contains(&n) {
            return Err(PoseError::QuaternionNorm { norm: n, lo, hi });
        }
        Ok(Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation,
        })
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = self.rotation.inverse();
        Self {
            rotation: inv_rot,
            translation: -(inv_rot * self.translation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_rng::rng_for;
    use rand::Rng;

    fn random_sym(rng: &mut impl Rng) -> SymMat3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = rng.gen_range(-2.0..2.0);
            }
        }
        SymMat3::from_matrix(&(m * m.transpose() + Matrix3::identity() * 0.1))
    }

    #[test]
    fn eigen_reconstructs_input() {
        let mut rng = rng_for("eigen-reconstruct");
        for _ in 0..200 {
            let s = random_sym(&mut rng);
            let (vals, vecs) = s.eigen_ascending();
            let rebuilt = vecs * Matrix3::from_diagonal(&vals) * vecs.transpose();
            let err = (rebuilt - s.to_matrix()).norm() / s.to_matrix().norm();
            assert!(err < 1e-9, "reconstruction error {err}");
            assert!(vals.x <= vals.y && vals.y <= vals.z);
            let gram = vecs.transpose() * vecs;
            assert!((gram - Matrix3::identity()).norm() < 1e-10);
        }
    }

    #[test]
    fn quadratic_form_matches_dense() {
        let mut rng = rng_for("quadratic-form");
        for _ in 0..100 {
            let s = random_sym(&mut rng);
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let dense = (v.transpose() * s.to_matrix() * v)[(0, 0)];
            assert!((s.quadratic_form(&v) - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn pose_compose_inverse_round_trip() {
        let mut rng = rng_for("pose-roundtrip");
        for _ in 0..100 {
            let axis = nalgebra::Unit::new_normalize(Vector3::new(
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ));
            let pose = Pose::new(
                UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
                Vector3::new(rng.gen(), rng.gen(), rng.gen()),
            );
            let round = pose.compose(&pose.inverse());
            assert!(round.translation.norm() < 1e-9);
            assert!(round.rotation.angle() < 1e-9);

            let p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            let back = pose.inverse_transform_point(&pose.transform_point(&p));
            assert!((back - p).norm() < 1e-9);
        }
    }

    #[test]
    fn raw_quaternion_norm_is_validated() {
        assert!(Pose::<f64>::from_raw([0.5, 0.0, 0.0, 0.0], Vector3::zeros()).is_err());
        let ok = Pose::<f64>::from_raw([1.05, 0.0, 0.0, 0.0], Vector3::zeros()).unwrap();
        assert!((ok.rotation.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn works_in_f32() {
        let pose = Pose::<f32>::identity();
        let p = Vector3::new(1.0f32, 2.0, 3.0);
        assert_eq!(pose.transform_point(&p), p);
    }
}
