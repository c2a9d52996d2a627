//! Point cloud container.

use nalgebra::Vector3;

use crate::scalar::Real;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Vector3<T>>,
    /// Per-point capture time in seconds, when the source provides one.
    pub timestamps: Option<Vec<f64>>,
}

impl<T: Real> PointCloud<T> {
    pub fn from_points(points: Vec<Vector3<T>>) -> Self {
        Self {
            points,
            timestamps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Axis-aligned bounding box as (min, max); `None` when empty.
    pub fn aabb(&self) -> Option<(Vector3<T>, Vector3<T>)> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aabb_spans_all_points() {
        let cloud = PointCloud::from_points(vec![
            Vector3::new(1.0f64, -2.0, 0.5),
            Vector3::new(-1.0, 3.0, 0.0),
            Vector3::new(0.0, 0.0, 2.0),
        ]);
        let (lo, hi) = cloud.aabb().unwrap();
        assert_eq!(lo, Vector3::new(-1.0, -2.0, 0.0));
        assert_eq!(hi, Vector3::new(1.0, 3.0, 2.0));
        assert!(PointCloud::<f64>::default().aabb().is_none());
    }
}
