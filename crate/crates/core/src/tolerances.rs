//! Numeric guards used across the crate, collected in one place.
//!
//! Each constant documents why its value is what it is; tests pin behaviour
//! against these, so changing one is an interface change.

/// Eigenvalues are clamped to this floor before taking logarithms when
/// recovering scale factors from a covariance. Degenerate (flat) voxel
/// scatter matrices produce exact zeros; the floor keeps log-scales finite
/// while staying far below any physically meaningful extent.
pub const EIG_FLOOR: f64 = 1e-12;

/// Raw quaternions further than this from unit norm are rejected as corrupt
/// input rather than silently renormalized. Drift below the bound (file
/// round-trips, accumulated integration error) is renormalized.
pub const QUAT_NORM_REJECT: f64 = 0.1;

/// MSE below this is treated as a perfect reconstruction when converting to
/// PSNR; avoids `log10` blowing up on bit-identical images.
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

/// PSNR reported for (near-)identical images instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Transmittance factors `1 - alpha` are floored here in the backward pass;
/// an exactly saturated splat would otherwise divide by zero. Alpha values
/// reachable through the logistic stay far from the floor.
pub const ONE_MINUS_ALPHA_FLOOR: f64 = 1e-12;

/// Relative tolerance for the incremental-vs-batch voxel statistics
/// equivalence. Welford updates and the two-pass formula agree to roughly
/// machine precision times condition number; 1e-9 leaves headroom.
pub const STATS_REL_TOL: f64 = 1e-9;

/// Splats whose camera-frame view tangents exceed the image's by this factor
/// are culled before projection. The affine projection Jacobian is only
/// valid near the mean; far off-axis it inflates thin splats into
/// screen-crossing streaks. 1.3 keeps everything that can legitimately
/// straddle a frame border.
pub const FRUSTUM_CULL_MARGIN: f64 = 1.3;
