//! Image and structure metrics.
//!
//! PSNR/SSIM compare renders against references; Chamfer, EMD, and F-score
//! compare a map (sampled to a cloud) against ground-truth points. Chamfer
//! uses a uniform grid with expanding-ring search and is exact: rings stop
//! only once no farther cell can hold a closer point. EMD solves the
//! assignment problem exactly with shortest augmenting paths.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::gaussian::SurfaceGaussian;
use crate::image::ImageBuffer;
use crate::scalar::Real;
use crate::tolerances::{PSNR_CAP_DB, PSNR_MSE_FLOOR};

/// `10 log10(1 / MSE)` over all pixel channels, capped at 99 dB so exact
/// matches stay finite.
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> T {
    let mse = a.mse(b);
    if mse < T::c(PSNR_MSE_FLOOR) {
        return T::c(PSNR_CAP_DB);
    }
    (T::c(10.0) * (T::one() / mse).log10()).min(T::c(PSNR_CAP_DB))
}

/// Mean SSIM (window and constants shared with the training loss). Requires
/// both dimensions to cover the 11-pixel window.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> T {
    assert!(
        a.width().min(a.height()) >= 11,
        "SSIM needs at least 11x11 images, got {}x{}",
        a.width(),
        a.height()
    );
    crate::ssim::ssim(a, b)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error("scene has no gaussians")]
    EmptyScene,
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
}

/// Structure comparison summary, serialized by the eval CLI.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    pub cd: f64,
    pub emd: f64,
    pub fscore: f64,
    pub tau: f64,
    pub pred_points: usize,
    pub gt_points: usize,
}

/// Uniform grid over a fixed point set answering exact nearest-neighbor
/// distance queries.
struct GridIndex<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: Vector3<f64>,
    dims: [i64; 3],
    bins: std::collections::HashMap<(i64, i64, i64), Vec<u32>>,
    /// Smallest cell edge along axes with more than one cell; ring k+1 cells
    /// hold points at least `k * min_cell` away.
    min_cell: f64,
}

impl<'a> GridIndex<'a> {
    fn build(points: &'a [Vector3<f64>]) -> Self {
        assert!(!points.is_empty());
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        // Around one point per cell on average, capped so the table stays
        // small even for huge clouds.
        let per_axis = ((points.len() as f64).cbrt().ceil() as i64).clamp(1, 64);
        let mut dims = [1i64; 3];
        let mut cell = Vector3::new(1.0, 1.0, 1.0);
        let mut min_cell = f64::INFINITY;
        for k in 0..3 {
            let extent = hi[k] - lo[k];
            if extent > 0.0 {
                dims[k] = per_axis;
                cell[k] = extent / per_axis as f64 * (1.0 + 1e-12);
                min_cell = min_cell.min(cell[k]);
            }
        }
        let mut bins: std::collections::HashMap<(i64, i64, i64), Vec<u32>> =
            std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            bins.entry(Self::clamped_coords(p, &lo, &cell, &dims))
                .or_default()
                .push(i as u32);
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            bins,
            min_cell,
        }
    }

    fn clamped_coords(
        p: &Vector3<f64>,
        origin: &Vector3<f64>,
        cell: &Vector3<f64>,
        dims: &[i64; 3],
    ) -> (i64, i64, i64) {
        let c = |k: usize| {
            (((p[k] - origin[k]) / cell[k]).floor() as i64).clamp(0, dims[k] - 1)
        };
        (c(0), c(1), c(2))
    }

    /// Cell coordinates without clamping; the ring lower bound needs the
    /// query's true cell even outside the grid.
    fn raw_coords(&self, p: &Vector3<f64>) -> [i64; 3] {
        let c = |k: usize| ((p[k] - self.origin[k]) / self.cell[k]).floor() as i64;
        [c(0), c(1), c(2)]
    }

    fn nearest_distance(&self, p: &Vector3<f64>) -> f64 {
        let c = self.raw_coords(p);
        let mut best = f64::INFINITY;
        // Once every in-range cell is at ring <= k_max, later rings are empty.
        let k_max = (0..3)
            .map(|k| c[k].max(self.dims[k] - 1 - c[k]).max(-c[k]))
            .max()
            .unwrap();
        for k in 0.. {
            if best.is_finite() && k > 0 && best <= (k - 1) as f64 * self.min_cell {
                break;
            }
            if k > k_max {
                break;
            }
            for dx in -k..=k {
                for dy in -k..=k {
                    for dz in -k..=k {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != k {
                            continue;
                        }
                        let key = (c[0] + dx, c[1] + dy, c[2] + dz);
                        if key.0 < 0
                            || key.1 < 0
                            || key.2 < 0
                            || key.0 >= self.dims[0]
                            || key.1 >= self.dims[1]
                            || key.2 >= self.dims[2]
                        {
                            continue;
                        }
                        if let Some(ids) = self.bins.get(&key) {
                            for &i in ids {
                                let d = (self.points[i as usize] - p).norm();
                                if d < best {
                                    best = d;
                                }
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

fn nearest_distances(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Vec<f64> {
    let index = GridIndex::build(to);
    from.par_iter()
        .map(|p| index.nearest_distance(p))
        .collect()
}

/// Symmetric mean nearest-neighbor Euclidean distance,
/// `0.5 (mean_p min_q |p-q| + mean_q min_p |q-p|)`.
pub fn chamfer(pred: &PointCloud<f64>, gt: &PointCloud<f64>) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyCloud("pred"));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyCloud("gt"));
    }
    let forward: f64 = nearest_distances(&pred.points, &gt.points).iter().sum();
    let backward: f64 = nearest_distances(&gt.points, &pred.points).iter().sum();
    Ok(0.5 * (forward / pred.len() as f64 + backward / gt.len() as f64))
}

/// Exact minimum-cost assignment by shortest augmenting paths with
/// potentials; `cost` is row-major n x n. Returns the column of each row.
fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    const UNSET: usize = usize::MAX;
    // 1-based with column 0 as the virtual start of every augmenting path.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_row = vec![UNSET; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == UNSET {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_col = vec![UNSET; n];
    for j in 1..=n {
        if col_row[j] != UNSET {
            row_col[col_row[j] - 1] = j - 1;
        }
    }
    row_col
}

pub const EMD_MAX_POINTS: usize = 2048;

/// Mean per-point distance under the optimal one-to-one assignment. Clouds
/// larger than `max_points` (or of unequal sizes) are uniformly subsampled
/// to a common size with the seeded RNG; each cloud draws from a fresh
/// stream so identical inputs pick identical subsets.
pub fn emd(
    pred: &PointCloud<f64>,
    gt: &PointCloud<f64>,
    max_points: usize,
    seed: u64,
) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyCloud("pred"));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyCloud("gt"));
    }
    let n = max_points.min(pred.len()).min(gt.len());
    let subsample = |points: &[Vector3<f64>]| -> Vec<Vector3<f64>> {
        if points.len() == n {
            return points.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, points.len(), n).into_vec();
        idx.sort_unstable();
        idx.iter().map(|&i| points[i]).collect()
    };
    let a = subsample(&pred.points);
    let b = subsample(&gt.points);

    let mut cost = vec![0.0f64; n * n];
    cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, c) in row.iter_mut().enumerate() {
            *c = (a[i] - b[j]).norm();
        }
    });
    let assignment = solve_assignment(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok(total / n as f64)
}

/// Harmonic mean of precision (pred points within `tau` of gt) and recall
/// (gt points within `tau` of pred); 0 when both vanish.
pub fn fscore(
    pred: &PointCloud<f64>,
    gt: &PointCloud<f64>,
    tau: f64,
) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyCloud("pred"));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyCloud("gt"));
    }
    if tau <= 0.0 {
        return Err(MetricsError::BadThreshold(tau));
    }
    let within = |dists: &[f64]| dists.iter().filter(|d| **d <= tau).count() as f64;
    let precision = within(&nearest_distances(&pred.points, &gt.points)) / pred.len() as f64;
    let recall = within(&nearest_distances(&gt.points, &pred.points)) / gt.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Samples a cloud from the map: the means themselves at one sample per
/// Gaussian, i.i.d. draws from each Gaussian otherwise.
pub fn gaussians_to_cloud(
    scene: &[SurfaceGaussian<f64>],
    samples_per_gaussian: usize,
    seed: u64,
) -> Result<PointCloud<f64>, MetricsError> {
    if scene.is_empty() {
        return Err(MetricsError::EmptyScene);
    }
    if samples_per_gaussian <= 1 {
        return Ok(PointCloud::from_points(
            scene.iter().map(|g| g.mean).collect(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(scene.len() * samples_per_gaussian);
    for g in scene {
        let m = g.sqrt_factor();
        for _ in 0..samples_per_gaussian {
            let z = Vector3::new(
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            );
            points.push(g.mean + m * z);
        }
    }
    Ok(PointCloud::from_points(points))
}

pub fn structure_report(
    pred: &PointCloud<f64>,
    gt: &PointCloud<f64>,
    tau: f64,
    emd_max_points: usize,
    seed: u64,
) -> Result<StructureReport, MetricsError> {
    Ok(StructureReport {
        cd: chamfer(pred, gt)?,
        emd: emd(pred, gt, emd_max_points, seed)?,
        fscore: fscore(pred, gt, tau)?,
        tau,
        pred_points: pred.len(),
        gt_points: gt.len(),
    })
}
