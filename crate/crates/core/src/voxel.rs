//! Adaptive voxel map over a LiDAR cloud.
//!
//! Space is cut into root cells of `root_size` metres; each cell carries an
//! octree that subdivides while the enclosed points are numerous enough and
//! not yet planar. Per-node statistics (mean and scatter) are maintained
//! incrementally so streaming insertion and batch construction agree.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::cloud::PointCloud;
use crate::geometry::SymMat3;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(
    bound(serialize = "T: serde::Serialize", deserialize = "T: serde::de::DeserializeOwned"),
    default,
    deny_unknown_fields
)]
pub struct VoxelParams<T: Real> {
    /// Edge length of a root cell in metres.
    pub root_size: T,
    /// Maximum subdivision depth below the root (root itself is depth 0).
    pub max_depth: usize,
    /// Planarity threshold: a node subdivides while `eta >= eta_threshold`.
    pub eta_threshold: T,
    /// Nodes with fewer points than this never subdivide and are kept as
    /// sparse leaves.
    pub min_points: usize,
}

impl<T: Real> Default for VoxelParams<T> {
    fn default() -> Self {
        Self {
            root_size: T::one(),
            max_depth: 3,
            eta_threshold: T::c(0.05),
            min_points: 10,
        }
    }
}

/// Discrete root-cell coordinate: `floor(p / root_size)` per axis.
pub type VoxelKey = (i64, i64, i64);

pub fn voxel_key<T: Real>(p: &Vector3<T>, root_size: T) -> VoxelKey {
    (
        (p.x / root_size).floor_i64(),
        (p.y / root_size).floor_i64(),
        (p.z / root_size).floor_i64(),
    )
}

/// Streaming mean and scatter of a point set (Welford update).
///
/// `m2` accumulates `sum (p - mean)(p - mean)^T`; dividing by the count gives
/// the population scatter matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VoxelStats<T: Real> {
    pub count: usize,
    pub mean: Vector3<T>,
    m2: SymMat3<T>,
}

impl<T: Real> VoxelStats<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: &Vector3<T>) {
        self.count += 1;
        let n = T::from_usize(self.count).unwrap();
        let delta = p - self.mean;
        self.mean += delta / n;
        // delta * (p - new_mean)^T == ((n-1)/n) * delta * delta^T
        self.m2
            .add_assign(&SymMat3::outer(&delta).scaled((n - T::one()) / n));
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<T>>) -> Self {
        let mut s = Self::new();
        for p in points {
            s.insert(p);
        }
        s
    }

    /// Population scatter `sum (p - mean)(p - mean)^T / count`.
    pub fn scatter(&self) -> SymMat3<T> {
        if self.count == 0 {
            return SymMat3::zero();
        }
        self.m2.scaled(T::one() / T::from_usize(self.count).unwrap())
    }
}

/// Plane fit summary of a voxel's scatter.
#[derive(Clone, Copy, Debug)]
pub struct PlaneStats<T: Real> {
    pub centroid: Vector3<T>,
    /// Eigenvalues of the scatter, ascending.
    pub lambda: Vector3<T>,
    /// Unit normal (eigenvector of the smallest eigenvalue), oriented toward
    /// the sensor origin.
    pub normal: Vector3<T>,
    /// Planarity in [0, 1/sqrt(3)]: small when the scatter is flat.
    pub eta: T,
}

/// Fits a plane to accumulated statistics.
///
/// `eta = lambda_min / sqrt(lambda_min^2 + lambda_mid^2 + lambda_max^2)`,
/// zero for a degenerate (all-zero) scatter. The normal is flipped so it
/// points from the centroid toward `sensor_origin` (+z half-space when no
/// origin is known); an exactly tangent normal falls back to making its
/// first nonzero component positive.
pub fn voxel_plane_stats<T: Real>(
    stats: &VoxelStats<T>,
    sensor_origin: Option<&Vector3<T>>,
) -> PlaneStats<T> {
    let (mut lambda, vecs) = stats.scatter().eigen_ascending();
    // The scatter is PSD; eigenvalue roundoff can still dip barely below zero.
    lambda = lambda.map(|l| l.max(T::zero()));
    let denom = (lambda.x * lambda.x + lambda.y * lambda.y + lambda.z * lambda.z).sqrt();
    let eta = if denom > T::zero() {
        lambda.x / denom
    } else {
        T::zero()
    };
    let mut normal = vecs.column(0).into_owned();
    let toward = match sensor_origin {
        Some(o) => o - stats.mean,
        None => Vector3::z(),
    };
    let d = normal.dot(&toward);
    if d < T::zero() {
        normal = -normal;
    } else if d == T::zero() {
        if let Some(first) = normal.iter().find(|v| **v != T::zero()) {
            if *first < T::zero() {
                normal = -normal;
            }
        }
    }
    PlaneStats {
        centroid: stats.mean,
        lambda,
        normal,
        eta,
    }
}

/// How a leaf terminated the subdivision recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafClass {
    /// Enough points and eta below threshold: a usable plane fit.
    Planar,
    /// Fewer than `min_points`; statistics are unreliable.
    Sparse,
    /// Hit `max_depth` while still above the planarity threshold.
    MaxDepth,
}

#[derive(Clone, Debug)]
pub enum NodeBody<T: Real> {
    Leaf {
        class: LeafClass,
        points: Vec<Vector3<T>>,
    },
    /// Children ordered by octant index; empty octants are absent.
    Internal { children: Vec<VoxelNode<T>> },
}

#[derive(Clone, Debug)]
pub struct VoxelNode<T: Real> {
    pub depth: usize,
    /// Octant indices from the root cell down to this node.
    pub path: Vec<u8>,
    pub center: Vector3<T>,
    pub edge: T,
    pub stats: VoxelStats<T>,
    pub body: NodeBody<T>,
}

impl<T: Real> VoxelNode<T> {
    fn build(
        points: Vec<Vector3<T>>,
        depth: usize,
        path: Vec<u8>,
        center: Vector3<T>,
        edge: T,
        params: &VoxelParams<T>,
        sensor_origin: Option<&Vector3<T>>,
    ) -> Self {
        let mut stats = VoxelStats::new();
        for p in &points {
            stats.insert(p);
        }

        let class = if stats.count < params.min_points {
            Some(LeafClass::Sparse)
        } else {
            let eta = voxel_plane_stats(&stats, sensor_origin).eta;
            if eta < params.eta_threshold {
                Some(LeafClass::Planar)
            } else if depth >= params.max_depth {
                Some(LeafClass::MaxDepth)
            } else {
                None
            }
        };

        let body = match class {
            Some(class) => NodeBody::Leaf { class, points },
            None => {
                let mut buckets: [Vec<Vector3<T>>; 8] = Default::default();
                for p in points {
                    let mut idx = 0usize;
                    if p.x >= center.x {
                        idx |= 1;
                    }
                    if p.y >= center.y {
                        idx |= 2;
                    }
                    if p.z >= center.z {
                        idx |= 4;
                    }
                    buckets[idx].push(p);
                }
                let half = edge * T::c(0.5);
                let quarter = edge * T::c(0.25);
                let children = buckets
                    .into_iter()
                    .enumerate()
                    .filter(|(_, b)| !b.is_empty())
                    .map(|(idx, bucket)| {
                        let offset = Vector3::new(
                            if idx & 1 != 0 { quarter } else { -quarter },
                            if idx & 2 != 0 { quarter } else { -quarter },
                            if idx & 4 != 0 { quarter } else { -quarter },
                        );
                        let mut child_path = path.clone();
                        child_path.push(idx as u8);
                        VoxelNode::build(
                            bucket,
                            depth + 1,
                            child_path,
                            center + offset,
                            half,
                            params,
                            sensor_origin,
                        )
                    })
                    .collect();
                NodeBody::Internal { children }
            }
        };

        Self {
            depth,
            path,
            center,
            edge,
            stats,
            body,
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a VoxelNode<T>>) {
        match &self.body {
            NodeBody::Leaf { .. } => out.push(self),
            NodeBody::Internal { children } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct VoxelMap<T: Real> {
    pub params: VoxelParams<T>,
    pub sensor_origin: Option<Vector3<T>>,
    /// Root cells keyed by discrete coordinate; BTreeMap fixes iteration
    /// order so downstream seeding is reproducible.
    pub roots: BTreeMap<VoxelKey, VoxelNode<T>>,
}

pub fn build_voxel_map<T: Real>(
    cloud: &PointCloud<T>,
    params: &VoxelParams<T>,
    sensor_origin: Option<Vector3<T>>,
) -> VoxelMap<T> {
    let mut cells: BTreeMap<VoxelKey, Vec<Vector3<T>>> = BTreeMap::new();
    for p in &cloud.points {
        cells.entry(voxel_key(p, params.root_size)).or_default().push(*p);
    }
    let half = T::c(0.5);
    let roots = cells
        .into_iter()
        .map(|(key, points)| {
            let center = Vector3::new(
                (T::from_i64(key.0).unwrap() + half) * params.root_size,
                (T::from_i64(key.1).unwrap() + half) * params.root_size,
                (T::from_i64(key.2).unwrap() + half) * params.root_size,
            );
            let node = VoxelNode::build(
                points,
                0,
                Vec::new(),
                center,
                params.root_size,
                params,
                sensor_origin.as_ref(),
            );
            (key, node)
        })
        .collect();
    VoxelMap {
        params: *params,
        sensor_origin,
        roots,
    }
}

impl<T: Real> VoxelMap<T> {
    /// All leaves in deterministic order (root key order, then octant order).
    pub fn leaves(&self) -> Vec<(VoxelKey, &VoxelNode<T>)> {
        let mut out = Vec::new();
        for (key, node) in &self.roots {
            let mut nodes = Vec::new();
            node.collect_leaves(&mut nodes);
            out.extend(nodes.into_iter().map(|n| (*key, n)));
        }
        out
    }

    pub fn total_points(&self) -> usize {
        self.leaves().iter().map(|(_, n)| n.stats.count).sum()
    }

    /// One line per leaf: `depth key N eta l_min l_mid l_max nx ny nz`.
    ///
    /// `key` is the root cell coordinate plus the octant path, e.g.
    /// `3,0,-1:25` for the leaf reached through octants 2 then 5.
    pub fn dump_leaves(&self) -> String {
        let mut out = String::new();
        for (key, leaf) in self.leaves() {
            let ps = voxel_plane_stats(&leaf.stats, self.sensor_origin.as_ref());
            let mut key_s = format!("{},{},{}", key.0, key.1, key.2);
            if !leaf.path.is_empty() {
                key_s.push(':');
                for p in &leaf.path {
                    let _ = write!(key_s, "{p}");
                }
            }
            let f = |v: T| v.to_f64().unwrap();
            let _ = writeln!(
                out,
                "{} {} {} {:.9e} {:.9e} {:.9e} {:.9e} {:.6} {:.6} {:.6}",
                leaf.depth,
                key_s,
                leaf.stats.count,
                f(ps.eta),
                f(ps.lambda.x),
                f(ps.lambda.y),
                f(ps.lambda.z),
                f(ps.normal.x),
                f(ps.normal.y),
                f(ps.normal.z),
            );
        }
        out
    }
}

/// Two-pass reference for the streaming statistics; tests compare the
/// incremental path against this.
pub fn batch_stats<T: Real>(points: &[Vector3<T>]) -> (Vector3<T>, Matrix3<T>) {
    let n = T::from_usize(points.len()).unwrap();
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let scatter = points
        .iter()
        .map(|p| {
            let d = p - mean;
            d * d.transpose()
        })
        .fold(Matrix3::zeros(), |a, m| a + m)
        / n;
    (mean, scatter)
}
