//! Dataset manifest: one TOML file tying together the cloud, trajectory,
//! image directory, camera intrinsics, and the held-out view split.
//!
//! Image filenames encode their timestamps (seconds, the file stem); each
//! image binds to the nearest trajectory pose within 5 ms, otherwise the
//! frame is dropped with a warning. View ids are indices in timestamp order
//! after binding, and the held-out lists refer to those ids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraError, CameraIntrinsics, View};
use crate::cloud::PointCloud;
use crate::io::ply::{self, PlyError};
use crate::io::png::{self, PngError};
use crate::io::trajectory::{self, TrajectoryError};

/// Maximum image-to-pose timestamp distance; frames farther from every pose
/// are unsynchronized and get dropped.
const BIND_TOLERANCE_S: f64 = 5e-3;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

fn default_units_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Relative to the manifest's directory, like every path here.
    pub point_cloud: String,
    pub trajectory: String,
    pub images: String,
    pub intrinsics: IntrinsicsSpec,
    #[serde(default)]
    pub held_out_interp: Vec<usize>,
    #[serde(default)]
    pub held_out_extrap: Vec<usize>,
    /// Multiplier taking stored coordinates to metres.
    #[serde(default = "default_units_scale")]
    pub units_scale: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{what} path does not exist: {path}")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("view {0} appears in both held-out lists")]
    SplitOverlap(usize),
    #[error("held-out view {id} out of range ({views} views bound)")]
    SplitOutOfRange { id: usize, views: usize },
    #[error("no image bound to any trajectory pose")]
    NoViews,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Cloud(#[from] PlyError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Image(#[from] PngError),
}

impl DatasetManifest {
    /// Parses and validates; returns the manifest with its base directory.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf), ManifestError> {
        let path = path.as_ref();
        let manifest: Self = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        manifest.validate(&base)?;
        Ok((manifest, base))
    }

    pub fn validate(&self, base: &Path) -> Result<(), ManifestError> {
        for (what, rel) in [
            ("point cloud", &self.point_cloud),
            ("trajectory", &self.trajectory),
            ("image directory", &self.images),
        ] {
            let path = base.join(rel);
            if !path.exists() {
                return Err(ManifestError::MissingPath { what, path });
            }
        }
        for id in &self.held_out_interp {
            if self.held_out_extrap.contains(id) {
                return Err(ManifestError::SplitOverlap(*id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Train,
    HeldOutInterp,
    HeldOutExtrap,
}

/// A fully loaded dataset: cloud in metres, bound views, split roles.
pub struct Dataset {
    pub cloud: PointCloud<f64>,
    pub views: Vec<View<f64>>,
    /// Parallel to `views`.
    pub roles: Vec<ViewRole>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let (manifest, base) = DatasetManifest::load(manifest_path)?;

        let mut cloud = ply::load_point_cloud(base.join(&manifest.point_cloud))?;
        let scale = manifest.units_scale;
        if scale != 1.0 {
            for p in cloud.points.iter_mut() {
                *p *= scale;
            }
        }

        let poses = trajectory::load_trajectory(base.join(&manifest.trajectory))?;

        let mut frames: Vec<(f64, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(base.join(&manifest.images))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            match stem.parse::<f64>() {
                Ok(t) if t.is_finite() => frames.push((t, path)),
                _ => eprintln!(
                    "warning: skipping image with non-timestamp name: {}",
                    path.display()
                ),
            }
        }
        frames.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

        let i = &manifest.intrinsics;
        let intrinsics =
            CameraIntrinsics::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height)?;

        let mut views = Vec::new();
        for (t, path) in frames {
            let Some((pose_t, pose)) = nearest_pose(&poses, t) else {
                continue;
            };
            if (pose_t - t).abs() > BIND_TOLERANCE_S {
                eprintln!(
                    "warning: no pose within {BIND_TOLERANCE_S} s of image {} (nearest {:.6});\
                     dropping frame",
                    path.display(),
                    pose_t
                );
                continue;
            }
            let mut pose = pose;
            pose.translation *= scale;
            views.push(View {
                id: views.len(),
                timestamp: t,
                intrinsics,
                pose,
                image: png::load_image(&path)?,
            });
        }
        if views.is_empty() {
            return Err(ManifestError::NoViews);
        }

        let mut roles = vec![ViewRole::Train; views.len()];
        for (ids, role) in [
            (&manifest.held_out_interp, ViewRole::HeldOutInterp),
            (&manifest.held_out_extrap, ViewRole::HeldOutExtrap),
        ] {
            for id in ids {
                if *id >= views.len() {
                    return Err(ManifestError::SplitOutOfRange {
                        id: *id,
                        views: views.len(),
                    });
                }
                roles[*id] = role;
            }
        }

        Ok(Self {
            cloud,
            views,
            roles,
            manifest,
        })
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View<f64>> {
        self.views
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r == ViewRole::Train)
            .map(|(v, _)| v)
    }

    pub fn held_out_views(&self) -> impl Iterator<Item = (&View<f64>, ViewRole)> {
        self.views
            .iter()
            .zip(&self.roles)
            .filter(|(_, r)| **r != ViewRole::Train)
            .map(|(v, r)| (v, *r))
    }
}

fn nearest_pose(
    poses: &[(f64, crate::geometry::Pose<f64>)],
    t: f64,
) -> Option<(f64, crate::geometry::Pose<f64>)> {
    if poses.is_empty() {
        return None;
    }
    let i = poses.partition_point(|(pt, _)| *pt < t);
    let candidates = [i.checked_sub(1), Some(i)];
    candidates
        .iter()
        .flatten()
        .filter_map(|&j| poses.get(j))
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .copied()
}
