//! Optimization loop: per-iteration view sampling, render, photometric
//! loss, backward, Adam, periodic clone/prune, checkpoints, logging.
//!
//! Everything downstream of the seed is deterministic: view order, control,
//! and random initialization each draw from their own ChaCha stream, and
//! wall-clock timing never enters the log.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::View;
use crate::control::{densify, prune, CloneRecord, ControlEvent, DensifyAccum};
use crate::gaussian::{logit, SurfaceGaussian, SH_COEFFS};
use crate::grad::{backward, photometric_loss, ParamGrads};
use crate::init::{seed_colors, seed_from_voxel};
use crate::io::config::{InitMode, TrainConfig};
use crate::io::manifest::{Dataset, ViewRole};
use crate::io::ply::export_gaussians;
use crate::metrics::psnr;
use crate::render::{render, RenderSettings};
use crate::voxel::build_voxel_map;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

/// First/second moments for every parameter group, shapes always matching
/// the current Gaussian count. Serialized alongside checkpoint PLYs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    m_mean: Vec<Vector3<f64>>,
    v_mean: Vec<Vector3<f64>>,
    m_log_scale: Vec<Vector3<f64>>,
    v_log_scale: Vec<Vector3<f64>>,
    m_rotation: Vec<Vector4<f64>>,
    v_rotation: Vec<Vector4<f64>>,
    m_opacity: Vec<f64>,
    v_opacity: Vec<f64>,
    m_sh: Vec<[Vector3<f64>; SH_COEFFS]>,
    v_sh: Vec<[Vector3<f64>; SH_COEFFS]>,
}

/// Learning rates after scene scaling; `mean` already includes the extent
/// factor.
#[derive(Clone, Copy, Debug)]
pub struct EffectiveRates {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

/// Position rate multiplier at the end of training; the rate follows an
/// exponential ramp from 1x down to this so splats settle instead of
/// oscillating around their converged placement.
const MEAN_LR_FINAL_FACTOR: f64 = 0.01;

impl EffectiveRates {
    pub fn new(lr: &crate::io::config::LearningRates, scene_extent: f64) -> Self {
        Self {
            mean: lr.mean * scene_extent,
            log_scale: lr.scale,
            rotation: lr.rotation,
            opacity: lr.opacity,
            sh_dc: lr.sh_dc,
            sh_rest: lr.sh_rest,
        }
    }

    /// Rates for iteration `it` of `total`: only the position rate decays.
    pub fn at(&self, it: usize, total: usize) -> Self {
        let t = if total == 0 {
            0.0
        } else {
            it as f64 / total as f64
        };
        Self {
            mean: self.mean * MEAN_LR_FINAL_FACTOR.powf(t),
            ..*self
        }
    }
}

/// Which groups skip this step. Structure freezing covers position, scale
/// and rotation; SH coefficients above `max_sh_degree` never move.
#[derive(Clone, Copy, Debug)]
pub struct FreezeMask {
    pub structure: bool,
    pub sh_rest: bool,
    pub max_sh_degree: usize,
}

fn sh_degree(j: usize) -> usize {
    match j {
        0 => 0,
        1..=3 => 1,
        _ => 2,
    }
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m_mean: vec![Vector3::zeros(); n],
            v_mean: vec![Vector3::zeros(); n],
            m_log_scale: vec![Vector3::zeros(); n],
            v_log_scale: vec![Vector3::zeros(); n],
            m_rotation: vec![Vector4::zeros(); n],
            v_rotation: vec![Vector4::zeros(); n],
            m_opacity: vec![0.0; n],
            v_opacity: vec![0.0; n],
            m_sh: vec![[Vector3::zeros(); SH_COEFFS]; n],
            v_sh: vec![[Vector3::zeros(); SH_COEFFS]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_mean.is_empty()
    }

    /// One biased-corrected update over every unfrozen group, followed by
    /// quaternion renormalization.
    pub fn step(
        &mut self,
        gaussians: &mut [SurfaceGaussian<f64>],
        grads: &ParamGrads<f64>,
        rates: &EffectiveRates,
        frozen: &FreezeMask,
    ) {
        assert_eq!(gaussians.len(), self.len());
        assert_eq!(gaussians.len(), grads.len());
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let axis = |m: &mut f64, v: &mut f64, g: f64, lr: f64, theta: &mut f64| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *theta -= lr * (*m / bias1) / ((*v / bias2).sqrt() + ADAM_EPSILON);
        };

        for (i, g) in gaussians.iter_mut().enumerate() {
            if !frozen.structure {
                for k in 0..3 {
                    axis(
                        &mut self.m_mean[i][k],
                        &mut self.v_mean[i][k],
                        grads.mean[i][k],
                        rates.mean,
                        &mut g.mean[k],
                    );
                    axis(
                        &mut self.m_log_scale[i][k],
                        &mut self.v_log_scale[i][k],
                        grads.log_scale[i][k],
                        rates.log_scale,
                        &mut g.log_scale[k],
                    );
                }
                let q = g.rotation.quaternion();
                let mut qv = Vector4::new(q.w, q.i, q.j, q.k);
                for k in 0..4 {
                    axis(
                        &mut self.m_rotation[i][k],
                        &mut self.v_rotation[i][k],
                        grads.rotation[i][k],
                        rates.rotation,
                        &mut qv[k],
                    );
                }
                if qv.norm() > 1e-12 {
                    g.rotation = UnitQuaternion::from_quaternion(Quaternion::new(
                        qv[0], qv[1], qv[2], qv[3],
                    ));
                }
            }
            axis(
                &mut self.m_opacity[i],
                &mut self.v_opacity[i],
                grads.opacity_logit[i],
                rates.opacity,
                &mut g.opacity_logit,
            );
            for j in 0..SH_COEFFS {
                if sh_degree(j) > frozen.max_sh_degree || (j > 0 && frozen.sh_rest) {
                    continue;
                }
                let lr = if j == 0 { rates.sh_dc } else { rates.sh_rest };
                for k in 0..3 {
                    axis(
                        &mut self.m_sh[i][j][k],
                        &mut self.v_sh[i][j][k],
                        grads.sh[i][j][k],
                        lr,
                        &mut g.sh[j][k],
                    );
                }
            }
        }
    }

    /// Clones copy their parent's moments, preserving the optimizer's view
    /// of the neighborhood.
    pub fn apply_clones(&mut self, clones: &[CloneRecord]) {
        for c in clones {
            assert_eq!(c.new_id, self.len());
            self.m_mean.push(self.m_mean[c.parent]);
            self.v_mean.push(self.v_mean[c.parent]);
            self.m_log_scale.push(self.m_log_scale[c.parent]);
            self.v_log_scale.push(self.v_log_scale[c.parent]);
            self.m_rotation.push(self.m_rotation[c.parent]);
            self.v_rotation.push(self.v_rotation[c.parent]);
            self.m_opacity.push(self.m_opacity[c.parent]);
            self.v_opacity.push(self.v_opacity[c.parent]);
            self.m_sh.push(self.m_sh[c.parent]);
            self.v_sh.push(self.v_sh[c.parent]);
        }
    }

    /// Drops the moment rows of pruned Gaussians, keeping survivor order.
    pub fn apply_prune(&mut self, remap: &[Option<usize>]) {
        assert_eq!(remap.len(), self.len());
        macro_rules! compact {
            ($field:ident) => {{
                let mut i = 0usize;
                self.$field.retain(|_| {
                    let keep = remap[i].is_some();
                    i += 1;
                    keep
                });
            }};
        }
        compact!(m_mean);
        compact!(v_mean);
        compact!(m_log_scale);
        compact!(v_log_scale);
        compact!(m_rotation);
        compact!(v_rotation);
        compact!(m_opacity);
        compact!(v_opacity);
        compact!(m_sh);
        compact!(v_sh);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Init {
        gaussians: usize,
    },
    Loss {
        iteration: usize,
        total: f64,
        data: f64,
        dssim: f64,
        gaussians: usize,
    },
    Control {
        event: ControlEvent,
    },
    Eval {
        iteration: usize,
        split: String,
        views: usize,
        mean_psnr: f64,
        mean_ssim: Option<f64>,
    },
}

/// Per-iteration record of the run; identical seeds and inputs reproduce it
/// bit for bit, so it carries no wall-clock fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.entries.iter().rev().find_map(|e| match e {
            LogEntry::Loss { total, .. } => Some(*total),
            _ => None,
        })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Loss { total, .. } => Some(*total),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset has no training views")]
    NoTrainingViews,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("initialization produced no gaussians")]
    EmptyInit,
    #[error("non-finite loss at iteration {iteration} on view {view_id}\n{dump}")]
    NonFiniteLoss {
        iteration: usize,
        view_id: usize,
        dump: String,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
    #[error("{0}")]
    Ply(#[from] crate::io::ply::PlyError),
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub gaussians: Vec<SurfaceGaussian<f64>>,
    pub log: TrainLog,
    pub adam: AdamState,
}

/// Half the diagonal of the cloud's bounding box; the position learning
/// rate scales with it so steps are scene-size free.
pub fn scene_extent(dataset: &Dataset) -> f64 {
    dataset
        .cloud
        .aabb()
        .map(|(lo, hi)| 0.5 * (hi - lo).norm())
        .filter(|e| *e > 0.0)
        .unwrap_or(1.0)
}

pub fn render_settings(config: &TrainConfig) -> RenderSettings<f64> {
    RenderSettings {
        sh_frame: config.sh_frame,
        background: Vector3::new(
            config.background[0],
            config.background[1],
            config.background[2],
        ),
        ..RenderSettings::default()
    }
}

fn initial_scene(
    dataset: &Dataset,
    config: &TrainConfig,
    train_views: &[View<f64>],
    settings: &RenderSettings<f64>,
) -> Result<Vec<SurfaceGaussian<f64>>, TrainError> {
    match config.init_mode {
        InitMode::Lidar => {
            let origin = train_views
                .iter()
                .map(|v| v.pose.translation)
                .sum::<Vector3<f64>>()
                / train_views.len() as f64;
            let map = build_voxel_map(&dataset.cloud, &config.voxel, Some(origin));
            let (mut gaussians, _report) = seed_from_voxel(&map, &config.init);
            if gaussians.is_empty() {
                return Err(TrainError::EmptyInit);
            }
            seed_colors(&mut gaussians, train_views, settings.near_clip);
            Ok(gaussians)
        }
        InitMode::Random => {
            if config.random_init_count == 0 {
                return Err(TrainError::EmptyInit);
            }
            let (lo, hi) = dataset.cloud.aabb().ok_or(TrainError::EmptyCloud)?;
            let diag = (hi - lo).norm().max(1e-6);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(3);
            let log_scale = Vector3::from_element((0.02 * diag).ln());
            let opacity_logit = logit(config.init.opacity_init);
            Ok((0..config.random_init_count)
                .map(|_| SurfaceGaussian {
                    mean: Vector3::new(
                        rng.gen_range(lo.x..=hi.x),
                        rng.gen_range(lo.y..=hi.y),
                        rng.gen_range(lo.z..=hi.z),
                    ),
                    log_scale,
                    rotation: UnitQuaternion::identity(),
                    opacity_logit,
                    // Zero SH renders mid-gray.
                    sh: [Vector3::zeros(); SH_COEFFS],
                })
                .collect())
        }
    }
}

fn parameter_extrema(gaussians: &[SurfaceGaussian<f64>]) -> String {
    use std::fmt::Write;
    let mut dump = String::new();
    let mut scan = |label: &str, values: &mut dyn Iterator<Item = f64>| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut bad = 0usize;
        for v in values {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            } else {
                bad += 1;
            }
        }
        let _ = writeln!(dump, "  {label}: min {lo:.6e} max {hi:.6e} non-finite {bad}");
    };
    scan(
        "mean",
        &mut gaussians.iter().flat_map(|g| g.mean.iter().copied()),
    );
    scan(
        "log_scale",
        &mut gaussians.iter().flat_map(|g| g.log_scale.iter().copied()),
    );
    scan(
        "opacity_logit",
        &mut gaussians.iter().map(|g| g.opacity_logit),
    );
    scan(
        "sh",
        &mut gaussians
            .iter()
            .flat_map(|g| g.sh.iter().flat_map(|c| c.iter().copied())),
    );
    format!("parameter extrema over {} gaussians:\n{dump}", gaussians.len())
}

fn write_checkpoint(
    dir: &Path,
    iteration: usize,
    gaussians: &[SurfaceGaussian<f64>],
    adam: &AdamState,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    export_gaussians(gaussians, dir.join(format!("checkpoint_{iteration:06}.ply")))?;
    let file = std::fs::File::create(dir.join(format!("checkpoint_{iteration:06}.adam.json")))?;
    serde_json::to_writer(std::io::BufWriter::new(file), adam)?;
    Ok(())
}

/// Runs the optimization. Checkpoints (gaussian PLY plus Adam state) land
/// in `checkpoint_dir` when given. Zero iterations returns the seeded scene
/// untouched.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    let train_views: Vec<View<f64>> = dataset.train_views().cloned().collect();
    if train_views.is_empty() {
        return Err(TrainError::NoTrainingViews);
    }
    if dataset.cloud.is_empty() {
        return Err(TrainError::EmptyCloud);
    }
    let settings = render_settings(config);
    let mut gaussians = initial_scene(dataset, config, &train_views, &settings)?;

    let mut rng_views = ChaCha8Rng::seed_from_u64(config.seed);
    rng_views.set_stream(1);
    let mut rng_control = ChaCha8Rng::seed_from_u64(config.seed);
    rng_control.set_stream(2);

    let rates = EffectiveRates::new(&config.lr, scene_extent(dataset));
    let mut adam = AdamState::new(gaussians.len());
    let mut accum = DensifyAccum::new(gaussians.len());
    let mut log = TrainLog::default();
    log.entries.push(LogEntry::Init {
        gaussians: gaussians.len(),
    });

    let mut order: Vec<usize> = (0..train_views.len()).collect();
    let mut pos = order.len();
    let started = std::time::Instant::now();

    for it in 1..=config.iterations {
        if pos == order.len() {
            order.shuffle(&mut rng_views);
            pos = 0;
        }
        let view = &train_views[order[pos]];
        pos += 1;

        let out = render(&gaussians, &view.intrinsics, &view.pose, &settings);
        let (loss, dl_dimage) =
            photometric_loss(&out.image, &view.image, config.lambda_dssim, config.loss);
        if !loss.total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iteration: it,
                view_id: view.id,
                dump: parameter_extrema(&gaussians),
            });
        }
        let grads = backward(&gaussians, &out, &dl_dimage)
            .expect("scene unchanged between render and backward");
        accum.record(&grads, &out);

        let frozen = FreezeMask {
            structure: !config.optimize_structure,
            sh_rest: it <= config.sh_warmup_iterations,
            max_sh_degree: config.max_sh_degree,
        };
        adam.step(&mut gaussians, &grads, &rates.at(it, config.iterations), &frozen);

        log.entries.push(LogEntry::Loss {
            iteration: it,
            total: loss.total,
            data: loss.data,
            dssim: loss.dssim,
            gaussians: gaussians.len(),
        });

        if config.optimize_structure && config.control.active_at(it, config.iterations) {
            let densify_event =
                densify(&mut gaussians, &mut accum, it, &config.control, &mut rng_control);
            adam.apply_clones(&densify_event.cloned);
            let prune_event = prune(&mut gaussians, it, config.control.prune_opacity);
            if !prune_event.pruned.is_empty() {
                adam.apply_prune(&prune_event.remap);
            }
            accum.reset(gaussians.len());
            for event in [densify_event, prune_event] {
                if !event.is_noop() {
                    log.entries.push(LogEntry::Control { event });
                }
            }
        }

        if config.eval_interval > 0 && it % config.eval_interval == 0 {
            let report = evaluate(&gaussians, dataset, &settings, true);
            for m in &report.means {
                log.entries.push(LogEntry::Eval {
                    iteration: it,
                    split: m.split.clone(),
                    views: m.views,
                    mean_psnr: m.mean_psnr,
                    mean_ssim: m.mean_ssim,
                });
            }
        }

        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 {
                write_checkpoint(dir, it, &gaussians, &adam)?;
            }
        }
    }

    if config.iterations > 0 {
        let secs = started.elapsed().as_secs_f64();
        eprintln!(
            "trained {} iterations in {:.1}s ({:.1} it/s), {} gaussians",
            config.iterations,
            secs,
            config.iterations as f64 / secs.max(1e-9),
            gaussians.len()
        );
    }

    Ok(TrainOutput {
        gaussians,
        log,
        adam,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEval {
    pub view_id: usize,
    pub split: String,
    pub psnr: f64,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMean {
    pub split: String,
    pub views: usize,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewEval>,
    pub means: Vec<SplitMean>,
}

impl EvalReport {
    pub fn mean_psnr(&self, split: &str) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.split == split)
            .map(|m| m.mean_psnr)
    }
}

fn split_name(role: ViewRole) -> &'static str {
    match role {
        ViewRole::Train => "train",
        ViewRole::HeldOutInterp => "interpolated",
        ViewRole::HeldOutExtrap => "extrapolated",
    }
}

/// Renders every dataset view (held-out always, training ones on request)
/// and reports per-view and per-split mean PSNR/SSIM.
pub fn evaluate(
    gaussians: &[SurfaceGaussian<f64>],
    dataset: &Dataset,
    settings: &RenderSettings<f64>,
    include_train: bool,
) -> EvalReport {
    let mut report = EvalReport::default();
    let mut by_split: BTreeMap<&'static str, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    for (view, role) in dataset.views.iter().zip(dataset.roles.iter().copied()) {
        if role == ViewRole::Train && !include_train {
            continue;
        }
        let out = render(gaussians, &view.intrinsics, &view.pose, settings);
        let p = psnr(&out.image, &view.image);
        let s = (view.intrinsics.width.min(view.intrinsics.height) >= 11)
            .then(|| crate::metrics::ssim(&out.image, &view.image));
        report.views.push(ViewEval {
            view_id: view.id,
            split: split_name(role).to_string(),
            psnr: p,
            ssim: s,
        });
        by_split.entry(split_name(role)).or_default().push((p, s));
    }
    // Fixed split order: train first, then interpolated, then extrapolated.
    for split in ["train", "interpolated", "extrapolated"] {
        let Some(rows) = by_split.get(split) else {
            continue;
        };
        let n = rows.len() as f64;
        let ssims: Vec<f64> = rows.iter().filter_map(|(_, s)| *s).collect();
        report.means.push(SplitMean {
            split: split.to_string(),
            views: rows.len(),
            mean_psnr: rows.iter().map(|(p, _)| p).sum::<f64>() / n,
            mean_ssim: (!ssims.is_empty())
                .then(|| ssims.iter().sum::<f64>() / ssims.len() as f64),
        });
    }
    report
}
