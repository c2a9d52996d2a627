//! LiDAR-seeded Gaussian surface mapping.
//!
//! The crate builds an adaptive voxel map over a LiDAR cloud, seeds
//! anisotropic surface Gaussians from per-voxel plane statistics, renders
//! them with a tiled EWA splatter, and refines all Gaussian parameters
//! photometrically with analytic gradients.
//!
//! The numeric core is generic over [`scalar::Real`]; the aliases below fix
//! the `f64` instantiation the pipeline and CLI use.

pub mod camera;
pub mod cloud;
pub mod control;
pub mod gaussian;
pub mod geometry;
pub mod grad;
pub mod image;
pub mod init;
pub mod io;
pub mod metrics;
pub mod render;
pub mod scalar;
pub mod sh;
pub mod ssim;
pub mod synth;
pub mod tolerances;
pub mod train;
pub mod voxel;

pub use scalar::Real;

/// Default scalar for the pipeline.
pub type S = f64;

pub type Vec2 = nalgebra::Vector2<S>;
pub type Vec3 = nalgebra::Vector3<S>;
pub type Mat3 = nalgebra::Matrix3<S>;
pub type SymMat3 = geometry::SymMat3<S>;
pub type Pose = geometry::Pose<S>;
pub type PointCloud = cloud::PointCloud<S>;
pub type SurfaceGaussian = gaussian::SurfaceGaussian<S>;
pub type CameraIntrinsics = camera::CameraIntrinsics<S>;
pub type View = camera::View<S>;
pub type ImageBuffer = image::ImageBuffer<S>;
