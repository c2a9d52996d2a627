//! Training configuration: TOML with full defaults, so an empty file (or no
//! file at all) is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlParams;
use crate::grad::LossKind;
use crate::init::InitParams;
use crate::sh::ShFrame;
use crate::voxel::VoxelParams;

/// Where the initial Gaussians come from: the LiDAR voxel map, or uniform
/// draws inside the cloud bounds (the photometric-only baseline).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Lidar,
    Random,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Position rate; multiplied by the scene extent at runtime so the step
    /// size is scale-free.
    pub mean: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 1.25e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Weight of the structural (D-SSIM) term in the photometric loss.
    pub lambda_dssim: f64,
    pub loss: LossKind,
    /// Highest SH degree optimized; coefficients above it stay zero.
    pub max_sh_degree: usize,
    /// Iterations with only the DC color active; directional coefficients
    /// join once geometry has settled.
    pub sh_warmup_iterations: usize,
    pub sh_frame: ShFrame,
    /// Background color composited behind the splats.
    pub background: [f64; 3],
    /// Checkpoint every this many iterations; 0 disables.
    pub checkpoint_interval: usize,
    /// Evaluate held-out views every this many iterations; 0 disables.
    pub eval_interval: usize,
    pub init_mode: InitMode,
    /// Gaussian count for random initialization; ignored for LiDAR seeding.
    pub random_init_count: usize,
    /// With this off, position/scale/rotation stay at their seeded values
    /// and adaptive control is skipped; only appearance is optimized.
    pub optimize_structure: bool,
    pub lr: LearningRates,
    pub control: ControlParams,
    pub voxel: VoxelParams<f64>,
    pub init: InitParams<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 7000,
            seed: 0,
            lambda_dssim: 0.2,
            loss: LossKind::L1,
            max_sh_degree: 2,
            sh_warmup_iterations: 1000,
            sh_frame: ShFrame::Camera,
            background: [0.0; 3],
            checkpoint_interval: 1000,
            eval_interval: 250,
            init_mode: InitMode::default(),
            random_init_count: 1000,
            optimize_structure: true,
            lr: LearningRates::default(),
            control: ControlParams::default(),
            voxel: VoxelParams::default(),
            init: InitParams::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("lambda_dssim {0} outside [0, 1]")]
    BadLambda(f64),
    #[error("max_sh_degree {0} not in 0..=2")]
    BadShDegree(usize),
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path.as_ref())?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return Err(ConfigError::BadLambda(self.lambda_dssim));
        }
        if self.max_sh_degree > 2 {
            return Err(ConfigError::BadShDegree(self.max_sh_degree));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let config = TrainConfig::from_toml_str("").unwrap();
        assert_eq!(config.iterations, 7000);
        assert_eq!(config.lambda_dssim, 0.2);
        assert_eq!(config.lr.sh_rest, 1.25e-4);
        assert_eq!(config.control.densify_interval, 100);
        assert_eq!(config.voxel.max_depth, 3);
        assert_eq!(config.loss, LossKind::L1);
    }

    #[test]
    fn sections_override_selected_fields() {
        let text = r#"
            iterations = 2000
            lambda_dssim = 0.5
            loss = "l2"
            init_mode = "random"
            optimize_structure = false

            [lr]
            mean = 1e-3

            [control]
            densify_grad_threshold = 1e-3

            [voxel]
            root_size = 2.0
            min_points = 20

            [init]
            budget = 10
        "#;
        let config = TrainConfig::from_toml_str(text).unwrap();
        assert_eq!(config.iterations, 2000);
        assert_eq!(config.loss, LossKind::L2);
        assert_eq!(config.init_mode, InitMode::Random);
        assert!(!config.optimize_structure);
        assert_eq!(config.lr.mean, 1e-3);
        assert_eq!(config.lr.scale, 5e-3);
        assert_eq!(config.control.densify_grad_threshold, 1e-3);
        assert_eq!(config.voxel.root_size, 2.0);
        assert_eq!(config.voxel.min_points, 20);
        assert_eq!(config.init.budget, 10);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(matches!(
            TrainConfig::from_toml_str("lambda_dssim = 1.5"),
            Err(ConfigError::BadLambda(_))
        ));
        // A zero-iteration run is legal: it returns the seeded scene as-is.
        assert!(TrainConfig::from_toml_str("iterations = 0").is_ok());
        assert!(matches!(
            TrainConfig::from_toml_str("max_sh_degree = 3"),
            Err(ConfigError::BadShDegree(3))
        ));
        assert!(TrainConfig::from_toml_str("no_such_key = 1").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = TrainConfig {
            iterations: 123,
            lambda_dssim: 0.35,
            ..TrainConfig::default()
        };
        let text = toml::to_string(&config).unwrap();
        let back = TrainConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.iterations, 123);
        assert_eq!(back.lambda_dssim, 0.35);
        assert_eq!(back.lr.opacity, config.lr.opacity);
    }
}
