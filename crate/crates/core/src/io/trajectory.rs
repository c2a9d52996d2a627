//! TUM-format camera trajectories: `t tx ty tz qx qy qz qw` per line,
//! timestamps in seconds, poses camera-to-world.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::geometry::{Pose, PoseError};

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected 8 values (t tx ty tz qx qy qz qw), found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: bad number '{token}'")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: timestamp {t} does not increase (previous {prev})")]
    NonMonotone { line: usize, t: f64, prev: f64 },
    #[error("line {line}: {source}")]
    BadPose { line: usize, source: PoseError },
}

pub fn load_trajectory(
    path: impl AsRef<Path>,
) -> Result<Vec<(f64, Pose<f64>)>, TrajectoryError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut out: Vec<(f64, Pose<f64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut vals = [0.0f64; 8];
        let mut count = 0usize;
        for tok in trimmed.split_whitespace() {
            if count == 8 {
                count += 1;
                break;
            }
            vals[count] = tok
                .parse()
                .map_err(|_| TrajectoryError::BadNumber {
                    line,
                    token: tok.to_string(),
                })?;
            count += 1;
        }
        if count != 8 {
            return Err(TrajectoryError::FieldCount { line, found: count });
        }
        let [t, tx, ty, tz, qx, qy, qz, qw] = vals;
        if let Some((prev, _)) = out.last() {
            if t <= *prev {
                return Err(TrajectoryError::NonMonotone {
                    line,
                    t,
                    prev: *prev,
                });
            }
        }
        let pose = Pose::from_raw([qw, qx, qy, qz], Vector3::new(tx, ty, tz))
            .map_err(|source| TrajectoryError::BadPose { line, source })?;
        out.push((t, pose));
    }
    Ok(out)
}

pub fn save_trajectory(
    poses: &[(f64, Pose<f64>)],
    path: impl AsRef<Path>,
) -> Result<(), TrajectoryError> {
    let mut text = String::new();
    for (t, pose) in poses {
        let p = &pose.translation;
        let q = pose.rotation.as_ref();
        writeln!(
            text,
            "{t:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            p.x, p.y, p.z, q.i, q.j, q.k, q.w
        )
        .expect("string write");
    }
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn identity_line_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(&path, "# header comment\n0.0 0 0 0 0 0 0 1\n").unwrap();
        let traj = load_trajectory(&path).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].0, 0.0);
        let p = &traj[0].1;
        assert_eq!(p.translation, Vector3::zeros());
        assert_eq!(p.rotation, UnitQuaternion::identity());
    }

    #[test]
    fn equal_timestamps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(&path, "1.0 0 0 0 0 0 0 1\n1.0 1 0 0 0 0 0 1\n").unwrap();
        assert!(matches!(
            load_trajectory(&path),
            Err(TrajectoryError::NonMonotone { line: 2, .. })
        ));
    }

    #[test]
    fn bad_quaternion_norm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(&path, "0.0 0 0 0 0 0 0 0.2\n").unwrap();
        assert!(matches!(
            load_trajectory(&path),
            Err(TrajectoryError::BadPose { line: 1, .. })
        ));
    }

    #[test]
    fn circle_round_trips_through_disk() {
        let poses: Vec<(f64, Pose<f64>)> = (0..16)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / 16.0;
                let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a);
                (
                    i as f64 * 0.1,
                    Pose::new(rot, Vector3::new(2.0 * a.cos(), -0.3, 2.0 * a.sin())),
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("circle.txt");
        save_trajectory(&poses, &path).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.len(), poses.len());
        for ((ta, pa), (tb, pb)) in back.iter().zip(&poses) {
            assert!((ta - tb).abs() < 1e-9);
            assert!((pa.translation - pb.translation).norm() < 1e-6);
            assert!(pa.rotation.angle_to(&pb.rotation) < 1e-6);
        }
    }

    #[test]
    fn short_line_reports_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        std::fs::write(&path, "0.0 1 2 3\n").unwrap();
        assert!(matches!(
            load_trajectory(&path),
            Err(TrajectoryError::FieldCount { line: 1, found: 4 })
        ));
    }
}
