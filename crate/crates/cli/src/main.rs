//! Command line front end: train, evaluate, render, and generate datasets.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gaussmap_core::io::config::TrainConfig;
use gaussmap_core::io::manifest::{Dataset, DatasetManifest};
use gaussmap_core::io::ply;
use gaussmap_core::io::png;
use gaussmap_core::io::trajectory::load_trajectory;
use gaussmap_core::metrics::{structure_report, EMD_MAX_POINTS};
use gaussmap_core::render::{render, RenderSettings};
use gaussmap_core::synth;
use gaussmap_core::train::{evaluate, render_settings, train};
use gaussmap_core::{CameraIntrinsics, Pose, Vec3};

#[derive(Parser)]
#[command(name = "gaussmap", version, about = "Gaussian surface mapping from LiDAR and images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a Gaussian map against a dataset.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// TOML training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory: final.ply, log.jsonl, eval.json, checkpoints.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render held-out views of a trained map and report PSNR/SSIM.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gaussians: PathBuf,
        /// Config used for training; supplies render settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also score the training views.
        #[arg(long)]
        include_train: bool,
    },
    /// Generate a synthetic dataset with exact ground truth.
    Synth {
        /// One of: plane-lambert, box-room, two-walls-specular, half-coverage.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a Gaussian map to a PNG.
    Render {
        /// Manifest supplying intrinsics and the trajectory.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        gaussians: PathBuf,
        /// Row index into the trajectory file.
        #[arg(long, default_value_t = 0, conflicts_with = "pose")]
        view: usize,
        /// Inline pose `tx ty tz qx qy qz qw` instead of a trajectory row.
        #[arg(long)]
        pose: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predicted cloud or map against a reference cloud.
    EvalStructure {
        /// Predicted point cloud or Gaussian PLY (means are compared).
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Distance threshold for the F-score, metres.
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
        #[arg(long, default_value_t = EMD_MAX_POINTS)]
        emd_max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => TrainConfig::default(),
    })
}

fn parse_inline_pose(text: &str) -> Result<Pose> {
    let parts: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .context("pose fields must be numbers")?;
    let [tx, ty, tz, qx, qy, qz, qw] = parts[..] else {
        bail!("pose needs exactly 7 fields: tx ty tz qx qy qz qw");
    };
    Ok(Pose::from_raw([qw, qx, qy, qz], Vec3::new(tx, ty, tz))?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { manifest, config, out } => {
            let config = load_config(&config)?;
            let dataset = Dataset::load(&manifest)
                .with_context(|| format!("manifest {}", manifest.display()))?;
            std::fs::create_dir_all(&out)?;
            let result = train(&dataset, &config, Some(&out))?;
            ply::export_gaussians(&result.gaussians, out.join("final.ply"))?;
            std::fs::write(out.join("log.jsonl"), result.log.to_jsonl())?;
            let settings = render_settings(&config);
            let report = evaluate(&result.gaussians, &dataset, &settings, false);
            std::fs::write(
                out.join("eval.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            println!(
                "trained {} gaussians in {} iterations; outputs in {}",
                result.gaussians.len(),
                config.iterations,
                out.display()
            );
            for line in summary_lines(&report) {
                println!("{line}");
            }
        }
        Command::Eval { manifest, gaussians, config, include_train } => {
            let config = load_config(&config)?;
            let dataset = Dataset::load(&manifest)
                .with_context(|| format!("manifest {}", manifest.display()))?;
            let map = ply::load_gaussians(&gaussians)
                .with_context(|| format!("gaussians {}", gaussians.display()))?;
            let settings = render_settings(&config);
            let report = evaluate(&map, &dataset, &settings, include_train);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Synth { preset, seed, out } => {
            let preset = synth::preset(&preset)?;
            let result = synth::generate(&preset, seed, &out)?;
            println!(
                "wrote {}: {} views, {} scan points, {} ground-truth gaussians",
                result.dir.display(),
                result.views,
                result.cloud_points,
                result.gt_gaussians.len()
            );
        }
        Command::Render { manifest, gaussians, view, pose, config, out } => {
            let config = load_config(&config)?;
            let (spec, base) = DatasetManifest::load(&manifest)
                .with_context(|| format!("manifest {}", manifest.display()))?;
            let i = &spec.intrinsics;
            let intrinsics = CameraIntrinsics::new(i.fx, i.fy, i.cx, i.cy, i.width, i.height)?;
            let pose = match pose {
                Some(text) => parse_inline_pose(&text)?,
                None => {
                    let poses = load_trajectory(base.join(&spec.trajectory))?;
                    poses
                        .get(view)
                        .with_context(|| {
                            format!("trajectory row {view} of {} rows", poses.len())
                        })?
                        .1
                }
            };
            let map = ply::load_gaussians(&gaussians)
                .with_context(|| format!("gaussians {}", gaussians.display()))?;
            let settings: RenderSettings<f64> = render_settings(&config);
            let image = render(&map, &intrinsics, &pose, &settings).image;
            png::save_image(&image, &out)?;
            println!("wrote {}", out.display());
        }
        Command::EvalStructure { pred, gt, tau, emd_max_points, seed } => {
            let pred_cloud = load_cloud_or_means(&pred)?;
            let gt_cloud = load_cloud_or_means(&gt)?;
            let report = structure_report(&pred_cloud, &gt_cloud, tau, emd_max_points, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// Accepts either a plain point cloud PLY or a Gaussian PLY, in which case
/// the means stand in for the cloud.
fn load_cloud_or_means(path: &PathBuf) -> Result<gaussmap_core::PointCloud> {
    if let Ok(cloud) = ply::load_point_cloud(path) {
        return Ok(cloud);
    }
    let map = ply::load_gaussians(path)
        .with_context(|| format!("{} is neither a point cloud nor a gaussian PLY", path.display()))?;
    Ok(gaussmap_core::PointCloud::from_points(
        map.iter().map(|g| g.mean).collect(),
    ))
}

fn summary_lines(report: &gaussmap_core::train::EvalReport) -> Vec<String> {
    report
        .means
        .iter()
        .map(|m| {
            let ssim = m
                .mean_ssim
                .map(|s| format!(", ssim {s:.4}"))
                .unwrap_or_default();
            format!(
                "{}: {} views, psnr {:.2} dB{}",
                m.split, m.views, m.mean_psnr, ssim
            )
        })
        .collect()
}
