//! Seeds surface Gaussians from voxel-map leaves.
//!
//! Planar leaves spawn one Gaussian per retained point, all sharing the
//! leaf's scatter shape scaled so the retained set's combined 1-sigma
//! footprint matches the leaf face area. Sparse leaves fall back to small
//! isotropic Gaussians.

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{factors_from_covariance, logit, SurfaceGaussian, SH_COEFFS};
use crate::scalar::Real;
use crate::sh::dc_from_rgb;
use crate::voxel::{voxel_plane_stats, LeafClass, NodeBody, VoxelMap};
use crate::camera::View;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(
    bound(serialize = "T: serde::Serialize", deserialize = "T: serde::de::DeserializeOwned"),
    default,
    deny_unknown_fields
)]
pub struct InitParams<T: Real> {
    /// Most Gaussians a single leaf may emit; denser leaves are subsampled.
    pub budget: usize,
    /// Clamp range for the area-matching scale factor alpha.
    pub alpha_min: T,
    pub alpha_max: T,
    /// Initial opacity (pre-logit) for every seeded Gaussian.
    pub opacity_init: T,
    /// Seed for the subsampling stream.
    pub seed: u64,
}

impl<T: Real> Default for InitParams<T> {
    fn default() -> Self {
        Self {
            budget: 50,
            alpha_min: T::c(1e-4),
            alpha_max: T::c(100.0),
            opacity_init: T::c(0.9),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InitReport {
    pub planar_leaves: usize,
    pub sparse_leaves: usize,
    pub from_planar: usize,
    pub from_sparse: usize,
}

impl InitReport {
    pub fn total(&self) -> usize {
        self.from_planar + self.from_sparse
    }
}

/// Uniform subsample of `k` indices out of `n`, ascending.
fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

pub fn seed_from_voxel<T: Real>(
    map: &VoxelMap<T>,
    params: &InitParams<T>,
) -> (Vec<SurfaceGaussian<T>>, InitReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = Vec::new();
    let mut report = InitReport::default();
    let opacity_logit = logit(params.opacity_init);
    // Edge of a fully subdivided voxel, halved: the radius for isolated points.
    let sparse_radius = map.params.root_size
        / T::from_usize(1 << map.params.max_depth).unwrap()
        * T::c(0.5);
    let sparse_log_scale = Vector3::from_element(sparse_radius.ln());

    for (_, leaf) in map.leaves() {
        let NodeBody::Leaf { class, points } = &leaf.body else {
            continue;
        };
        let retained = sample_indices(&mut rng, points.len(), params.budget);
        match class {
            LeafClass::Planar | LeafClass::MaxDepth => {
                let ps = voxel_plane_stats(&leaf.stats, map.sensor_origin.as_ref());
                let area = leaf.edge * leaf.edge;
                let n_ret = T::from_usize(retained.len()).unwrap();
                let spread = (ps.lambda.y * ps.lambda.z).sqrt();
                let alpha = if spread > T::zero() {
                    (area / (T::pi() * n_ret * spread))
                        .clamp(params.alpha_min, params.alpha_max)
                } else {
                    params.alpha_max
                };
                let cov = leaf.stats.scatter().scaled(alpha);
                let (log_scale, rotation) = factors_from_covariance(&cov);
                for &i in &retained {
                    out.push(SurfaceGaussian {
                        mean: points[i],
                        log_scale,
                        rotation,
                        opacity_logit,
                        sh: [Vector3::zeros(); SH_COEFFS],
                    });
                }
                report.planar_leaves += 1;
                report.from_planar += retained.len();
            }
            LeafClass::Sparse => {
                for &i in &retained {
                    out.push(SurfaceGaussian {
                        mean: points[i],
                        log_scale: sparse_log_scale,
                        rotation: UnitQuaternion::identity(),
                        opacity_logit,
                        sh: [Vector3::zeros(); SH_COEFFS],
                    });
                }
                report.sparse_leaves += 1;
                report.from_sparse += retained.len();
            }
        }
    }
    (out, report)
}

/// Assigns each Gaussian's DC color from the first view whose camera sees
/// its mean: the mean is projected and the nearest pixel sampled. Gaussians
/// visible in no view keep the mid-gray default.
pub fn seed_colors<T: Real>(
    gaussians: &mut [SurfaceGaussian<T>],
    views: &[View<T>],
    near_clip: T,
) -> usize {
    let mut colored = 0;
    for g in gaussians.iter_mut() {
        for view in views {
            let p_cam = view.pose.inverse_transform_point(&g.mean);
            if p_cam.z <= near_clip {
                continue;
            }
            let uv = view.intrinsics.project(&p_cam);
            let (w, h) = (view.intrinsics.width, view.intrinsics.height);
            let x = uv.x.round().to_i64().unwrap_or(-1);
            let y = uv.y.round().to_i64().unwrap_or(-1);
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let rgb = view.image.get(x as usize, y as usize);
            g.sh[0] = dc_from_rgb(&rgb);
            colored += 1;
            break;
        }
    }
    colored
}
