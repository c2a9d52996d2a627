//! Synthetic benchmark scenes with exact ground truth.
//!
//! A scene is a set of textured rectangles. From it we emit a complete
//! dataset directory: a noisy scanner cloud, a camera trajectory, reference
//! images, a manifest, plus ground-truth files the loaders never read
//! (`gt_cloud.ply`, `gt_gaussians.ply`) for structure and appearance metrics.
//!
//! Reference images are rendered from the ground-truth Gaussians by the same
//! rasterizer the trainer differentiates, so the supervision is exactly
//! realizable by the model class. Two quantization details make the written
//! files self-consistent: Gaussian parameters are rounded through f32 before
//! any use (matching PLY storage), and camera poses are rounded through the
//! trajectory text format before any image is rendered. Reloading the
//! directory therefore reproduces bit-for-bit the state that produced it.
//!
//! Generation is sequential with a fixed emission order; the same preset and
//! seed always produce byte-identical directories.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::CameraIntrinsics;
use crate::cloud::PointCloud;
use crate::gaussian::{logit, SurfaceGaussian, SH_COEFFS};
use crate::geometry::Pose;
use crate::image::ImageBuffer;
use crate::io::manifest::{DatasetManifest, IntrinsicsSpec};
use crate::io::ply::{self, PlyError};
use crate::io::png::{self, PngError};
use crate::io::trajectory::{self, TrajectoryError};
use crate::render::{render, RenderSettings};
use crate::sh::dc_from_rgb;

#[derive(Clone, Debug)]
pub enum Albedo {
    Checker {
        a: Vector3<f64>,
        b: Vector3<f64>,
        cells: (usize, usize),
    },
    /// Linear blend from `from` to `to` along the surface's u axis.
    Gradient {
        from: Vector3<f64>,
        to: Vector3<f64>,
    },
}

impl Albedo {
    /// `a`, `b` are local coordinates in [-1, 1].
    pub fn at(&self, a: f64, b: f64) -> Vector3<f64> {
        match self {
            Albedo::Checker { a: ca, b: cb, cells } => {
                let i = (((a + 1.0) / 2.0 * cells.0 as f64) as usize).min(cells.0 - 1);
                let j = (((b + 1.0) / 2.0 * cells.1 as f64) as usize).min(cells.1 - 1);
                if (i + j) % 2 == 0 {
                    *ca
                } else {
                    *cb
                }
            }
            Albedo::Gradient { from, to } => {
                let t = (a + 1.0) / 2.0;
                from + (to - from) * t
            }
        }
    }
}

/// A textured rectangle: center plus orthonormal in-plane axes `u`, `v`
/// spanning half-extents `half_u`, `half_v`. The outward normal is `u x v`.
#[derive(Clone, Debug)]
pub struct Surface {
    pub center: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub half_u: f64,
    pub half_v: f64,
    pub albedo: Albedo,
    /// Optional degree-1 SH triples layered on top of the albedo DC, giving
    /// the surface a view-dependent tint.
    pub sheen: Option<[Vector3<f64>; 3]>,
    /// Whether the scanner sweep reaches this surface. Images always see
    /// every surface; the cloud only covers these.
    pub scanned: bool,
    /// Ground-truth Gaussians tile the rectangle on this (along u, along v)
    /// grid.
    pub grid: (usize, usize),
}

impl Surface {
    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_u * self.half_v
    }

    /// `a`, `b` in [-1, 1].
    pub fn point_at(&self, a: f64, b: f64) -> Vector3<f64> {
        self.center + self.u * (a * self.half_u) + self.v * (b * self.half_v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CameraSpec {
    pub eye: Vector3<f64>,
    pub target: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct ScenePreset {
    pub name: &'static str,
    pub surfaces: Vec<Surface>,
    /// Scanner samples per square metre on scanned surfaces.
    pub density: f64,
    /// Isotropic scanner noise, metres.
    pub noise_sigma: f64,
    /// Noise-free reference samples per square metre, all surfaces.
    pub gt_density: f64,
    pub cameras: Vec<CameraSpec>,
    pub held_out_interp: Vec<usize>,
    pub held_out_extrap: Vec<usize>,
    pub intrinsics: IntrinsicsSpec,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error(transparent)]
    Png(#[from] PngError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("manifest serialization: {0}")]
    Toml(#[from] toml::ser::Error),
    #[error("preset invalid: {0}")]
    BadPreset(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ScenePreset {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadPreset(m));
        if self.surfaces.is_empty() {
            return bad("no surfaces".into());
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            if (s.u.norm() - 1.0).abs() > 1e-9
                || (s.v.norm() - 1.0).abs() > 1e-9
                || s.u.dot(&s.v).abs() > 1e-9
            {
                return bad(format!("surface {i}: u, v not orthonormal"));
            }
            if s.half_u <= 0.0 || s.half_v <= 0.0 {
                return bad(format!("surface {i}: non-positive extent"));
            }
            if s.grid.0 == 0 || s.grid.1 == 0 {
                return bad(format!("surface {i}: empty gaussian grid"));
            }
        }
        if !self.surfaces.iter().any(|s| s.scanned) {
            return bad("no scanned surface".into());
        }
        let n = self.cameras.len();
        let held: Vec<usize> = self
            .held_out_interp
            .iter()
            .chain(&self.held_out_extrap)
            .copied()
            .collect();
        if held.is_empty() {
            return bad("no held-out views".into());
        }
        for &id in &held {
            if id >= n {
                return bad(format!("held-out id {id} out of range ({n} cameras)"));
            }
        }
        for &id in &self.held_out_interp {
            if self.held_out_extrap.contains(&id) {
                return bad(format!("view {id} in both held-out lists"));
            }
        }
        if n - held.len() < 2 {
            return bad("fewer than two training views".into());
        }
        if self.density <= 0.0 || self.gt_density <= 0.0 || self.noise_sigma < 0.0 {
            return bad("non-positive density or negative noise".into());
        }
        Ok(())
    }
}

/// Camera pose looking from `eye` toward `target`, +z forward, +y down.
/// With the scene's z axis up, image up is world up; when the view direction
/// is near-vertical the y axis breaks the tie instead.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose<f64> {
    let z_c = (target - eye).normalize();
    let up = Vector3::new(0.0, 0.0, 1.0);
    let hint = if z_c.dot(&up).abs() > 0.99 {
        Vector3::new(0.0, 1.0, 0.0)
    } else {
        up
    };
    let x_c = z_c.cross(&hint).normalize();
    let y_c = z_c.cross(&x_c);
    let m = Matrix3::from_columns(&[x_c, y_c, z_c]);
    Pose::new(
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)),
        eye,
    )
}

/// Rounds a pose through the trajectory text precision, so that rendering
/// from it matches rendering from the pose a reader parses back.
fn disk_pose(pose: &Pose<f64>) -> Pose<f64> {
    let r9 = |x: f64| format!("{x:.9}").parse::<f64>().unwrap();
    let q = pose.rotation.as_ref();
    let t = pose.translation;
    Pose::from_raw(
        [r9(q.w), r9(q.i), r9(q.j), r9(q.k)],
        Vector3::new(r9(t.x), r9(t.y), r9(t.z)),
    )
    .expect("rounding keeps the quaternion unit")
}

/// Rounds every parameter through f32, the PLY storage width, so exported
/// and reloaded Gaussians match the ones used in-process.
fn quantize_f32(g: &SurfaceGaussian<f64>) -> SurfaceGaussian<f64> {
    let q = |x: f64| x as f32 as f64;
    let r = g.rotation.as_ref();
    SurfaceGaussian {
        mean: g.mean.map(q),
        log_scale: g.log_scale.map(q),
        rotation: UnitQuaternion::new_unchecked(Quaternion::new(
            q(r.w),
            q(r.i),
            q(r.j),
            q(r.k),
        )),
        opacity_logit: q(g.opacity_logit),
        sh: g.sh.map(|c| c.map(q)),
    }
}

/// Ground-truth Gaussians: each surface tiled by its grid, in-plane spread
/// 0.6x the tile spacing (neighbouring tiles overlap into a closed sheet),
/// thin along the normal.
pub fn gt_gaussians(preset: &ScenePreset) -> Vec<SurfaceGaussian<f64>> {
    let mut out = Vec::new();
    for s in &preset.surfaces {
        let (nu, nv) = s.grid;
        let su = 2.0 * s.half_u / nu as f64;
        let sv = 2.0 * s.half_v / nv as f64;
        let sigma = Vector3::new(su * 0.6, sv * 0.6, su.min(sv) * 0.05);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            Matrix3::from_columns(&[s.u, s.v, s.normal()]),
        ));
        for i in 0..nu {
            for j in 0..nv {
                let a = -1.0 + (2 * i + 1) as f64 / nu as f64;
                let b = -1.0 + (2 * j + 1) as f64 / nv as f64;
                let mut sh = [Vector3::zeros(); SH_COEFFS];
                sh[0] = dc_from_rgb(&s.albedo.at(a, b));
                if let Some(sheen) = &s.sheen {
                    sh[1..4].copy_from_slice(sheen);
                }
                out.push(quantize_f32(&SurfaceGaussian {
                    mean: s.point_at(a, b),
                    log_scale: sigma.map(f64::ln),
                    rotation: rot,
                    opacity_logit: logit(0.97),
                    sh,
                }));
            }
        }
    }
    out
}

/// Camera poses in timestamp order, rounded to trajectory precision.
pub fn camera_poses(preset: &ScenePreset) -> Vec<(f64, Pose<f64>)> {
    preset
        .cameras
        .iter()
        .enumerate()
        .map(|(i, c)| (i as f64, disk_pose(&look_at(c.eye, c.target))))
        .collect()
}

#[derive(Debug)]
pub struct SynthOutput {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub gt_gaussians: Vec<SurfaceGaussian<f64>>,
    pub views: usize,
    pub cloud_points: usize,
}

/// Writes the full dataset directory. Deterministic in `preset` and `seed`.
pub fn generate(
    preset: &ScenePreset,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<SynthOutput, SynthError> {
    preset.validate()?;
    let dir = out_dir.as_ref().to_path_buf();
    std::fs::create_dir_all(dir.join("images"))?;

    let gt = gt_gaussians(preset);
    let poses = camera_poses(preset);
    let ints = &preset.intrinsics;
    let intrinsics = CameraIntrinsics::new(ints.fx, ints.fy, ints.cx, ints.cy, ints.width, ints.height)
        .map_err(|e| SynthError::BadPreset(format!("intrinsics: {e}")))?;
    let settings = RenderSettings::default();

    for (t, pose) in &poses {
        let out = render(&gt, &intrinsics, pose, &settings);
        png::save_image(&out.image, dir.join("images").join(format!("{t:.6}.png")))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    let mut scan = Vec::new();
    for s in preset.surfaces.iter().filter(|s| s.scanned) {
        let n = (preset.density * s.area()).round() as usize;
        for _ in 0..n {
            let a = rng.gen_range(-1.0..=1.0);
            let b = rng.gen_range(-1.0..=1.0);
            let noise = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
            scan.push(s.point_at(a, b) + noise * preset.noise_sigma);
        }
    }
    let cloud_points = scan.len();
    ply::save_point_cloud(&PointCloud::from_points(scan), dir.join("cloud.ply"))?;

    let mut reference = Vec::new();
    for s in &preset.surfaces {
        let n = (preset.gt_density * s.area()).round() as usize;
        for _ in 0..n {
            let a = rng.gen_range(-1.0..=1.0);
            let b = rng.gen_range(-1.0..=1.0);
            reference.push(s.point_at(a, b));
        }
    }
    ply::save_point_cloud(&PointCloud::from_points(reference), dir.join("gt_cloud.ply"))?;

    ply::export_gaussians(&gt, dir.join("gt_gaussians.ply"))?;
    trajectory::save_trajectory(&poses, dir.join("trajectory.txt"))?;

    let manifest = DatasetManifest {
        point_cloud: "cloud.ply".into(),
        trajectory: "trajectory.txt".into(),
        images: "images".into(),
        intrinsics: *ints,
        held_out_interp: preset.held_out_interp.clone(),
        held_out_extrap: preset.held_out_extrap.clone(),
        units_scale: 1.0,
    };
    let manifest_path = dir.join("manifest.toml");
    std::fs::write(&manifest_path, toml::to_string(&manifest)?)?;

    Ok(SynthOutput {
        dir,
        manifest_path,
        gt_gaussians: gt,
        views: poses.len(),
        cloud_points,
    })
}

/// Flat-shaded ray-cast render of the preset geometry: nearest rectangle hit
/// per pixel, albedo only. Shares no code with the splatting path; used to
/// cross-check it.
pub fn flat_render(
    preset: &ScenePreset,
    intrinsics: &CameraIntrinsics<f64>,
    pose: &Pose<f64>,
) -> ImageBuffer<f64> {
    let mut img = ImageBuffer::new(intrinsics.width, intrinsics.height);
    let rot = pose.rotation.to_rotation_matrix();
    let origin = pose.translation;
    for py in 0..intrinsics.height {
        for px in 0..intrinsics.width {
            let d_cam = Vector3::new(
                (px as f64 + 0.5 - intrinsics.cx) / intrinsics.fx,
                (py as f64 + 0.5 - intrinsics.cy) / intrinsics.fy,
                1.0,
            );
            let d = rot * d_cam;
            let mut best_t = f64::INFINITY;
            let mut color = Vector3::zeros();
            for s in &preset.surfaces {
                let n = s.normal();
                let denom = n.dot(&d);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = n.dot(&(s.center - origin)) / denom;
                if t <= 1e-9 || t >= best_t {
                    continue;
                }
                let p = origin + d * t;
                let local = p - s.center;
                let a = local.dot(&s.u) / s.half_u;
                let b = local.dot(&s.v) / s.half_v;
                if a.abs() <= 1.0 && b.abs() <= 1.0 {
                    best_t = t;
                    color = s.albedo.at(a, b);
                }
            }
            img.set(px, py, color);
        }
    }
    img
}

fn ring(count: usize, radius: f64, z: f64, target: impl Fn(f64) -> Vector3<f64>) -> Vec<CameraSpec> {
    (0..count)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            CameraSpec {
                eye: Vector3::new(radius * phi.cos(), radius * phi.sin(), z),
                target: target(phi),
            }
        })
        .collect()
}

fn square(width: usize, height: usize, f: f64) -> IntrinsicsSpec {
    IntrinsicsSpec {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    }
}

/// Checkerboard plane at z = 0, ring of cameras above. The plane is axis
/// aligned so noise-free scan points satisfy z = 0 exactly, even after f32
/// storage.
pub fn plane_lambert() -> ScenePreset {
    let mut cameras = ring(6, 0.9, 1.6, |_| Vector3::zeros());
    cameras.push(CameraSpec {
        // Inside the training ring: interpolation test view.
        eye: Vector3::new(0.0, 0.45, 1.6),
        target: Vector3::zeros(),
    });
    cameras.push(CameraSpec {
        // Above and off-axis: extrapolation.
        eye: Vector3::new(0.25, -0.2, 2.4),
        target: Vector3::zeros(),
    });
    ScenePreset {
        name: "plane-lambert",
        surfaces: vec![Surface {
            center: Vector3::zeros(),
            u: Vector3::new(1.0, 0.0, 0.0),
            v: Vector3::new(0.0, 1.0, 0.0),
            half_u: 1.0,
            half_v: 1.0,
            albedo: Albedo::Checker {
                a: Vector3::new(0.85, 0.3, 0.25),
                b: Vector3::new(0.92, 0.9, 0.82),
                cells: (4, 4),
            },
            sheen: None,
            scanned: true,
            grid: (24, 24),
        }],
        density: 1500.0,
        noise_sigma: 0.004,
        gt_density: 3000.0,
        cameras,
        held_out_interp: vec![6],
        held_out_extrap: vec![7],
        intrinsics: square(96, 96, 80.0),
    }
}

/// Closed room seen from inside: floor plus four walls, cameras on an inner
/// ring looking outward. The main end-to-end benchmark scene.
pub fn box_room() -> ScenePreset {
    let x = Vector3::new(1.0, 0.0, 0.0);
    let y = Vector3::new(0.0, 1.0, 0.0);
    let z = Vector3::new(0.0, 0.0, 1.0);
    let wall = |center: Vector3<f64>,
                u: Vector3<f64>,
                v: Vector3<f64>,
                half_u: f64,
                half_v: f64,
                albedo: Albedo,
                grid: (usize, usize)| Surface {
        center,
        u,
        v,
        half_u,
        half_v,
        albedo,
        sheen: None,
        scanned: true,
        grid,
    };
    let surfaces = vec![
        wall(
            Vector3::new(0.0, 0.0, -0.8),
            x,
            y,
            1.2,
            1.2,
            Albedo::Checker {
                a: Vector3::new(0.75, 0.68, 0.6),
                b: Vector3::new(0.35, 0.3, 0.28),
                cells: (4, 4),
            },
            (12, 12),
        ),
        wall(
            Vector3::new(1.2, 0.0, 0.0),
            -y,
            z,
            1.2,
            0.8,
            Albedo::Checker {
                a: Vector3::new(0.3, 0.45, 0.8),
                b: Vector3::new(0.9, 0.9, 0.92),
                cells: (3, 2),
            },
            (12, 8),
        ),
        wall(
            Vector3::new(-1.2, 0.0, 0.0),
            y,
            z,
            1.2,
            0.8,
            Albedo::Gradient {
                from: Vector3::new(0.85, 0.3, 0.2),
                to: Vector3::new(0.95, 0.8, 0.3),
            },
            (12, 8),
        ),
        wall(
            Vector3::new(0.0, 1.2, 0.0),
            x,
            z,
            1.2,
            0.8,
            Albedo::Gradient {
                from: Vector3::new(0.25, 0.3, 0.75),
                to: Vector3::new(0.85, 0.88, 0.95),
            },
            (12, 8),
        ),
        wall(
            Vector3::new(0.0, -1.2, 0.0),
            z,
            x,
            0.8,
            1.2,
            Albedo::Checker {
                a: Vector3::new(0.35, 0.7, 0.4),
                b: Vector3::new(0.92, 0.92, 0.88),
                cells: (3, 2),
            },
            (8, 12),
        ),
    ];
    // Outward-looking from near the room center with a wide lens, heights
    // alternating, so every wall patch lands in several training frusta;
    // six views must constrain the wall geometry from more than one angle.
    let outward = |r: f64, phi: f64, z: f64, tilt: f64| CameraSpec {
        eye: Vector3::new(r * phi.cos(), r * phi.sin(), z),
        target: Vector3::new(
            r * phi.cos() + phi.cos(),
            r * phi.sin() + phi.sin(),
            z + tilt,
        ),
    };
    let mut cameras: Vec<CameraSpec> = (0..6)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / 6.0;
            let (z, tilt) = if k % 2 == 0 { (0.12, -0.3) } else { (0.12, -0.05) };
            outward(0.2, phi, z, tilt)
        })
        .collect();
    // Interpolated eyes sit at the chord midpoints of the training ring
    // (chord radius 0.2 cos 30 = 0.173), strictly inside the hull of the
    // training positions; the extrapolated eye above the ring is outside it.
    cameras.push(outward(0.17, 30f64.to_radians(), 0.12, -0.175));
    cameras.push(outward(0.17, 210f64.to_radians(), 0.12, -0.175));
    cameras.push(CameraSpec {
        eye: Vector3::new(0.0, 0.0, 0.4),
        target: Vector3::new(1.0, 0.5, 0.25),
    });
    ScenePreset {
        name: "box-room",
        surfaces,
        density: 800.0,
        noise_sigma: 0.002,
        gt_density: 1200.0,
        cameras,
        held_out_interp: vec![6, 7],
        held_out_extrap: vec![8],
        intrinsics: square(128, 128, 60.0),
    }
}

/// Two angled walls with view-dependent sheen (degree-1 SH), cameras on a
/// line so the held-out interpolation view sits between its neighbours.
pub fn two_walls_specular() -> ScenePreset {
    let tilt = 18f64.to_radians();
    let z = Vector3::new(0.0, 0.0, 1.0);
    let wall_a = Surface {
        center: Vector3::new(-0.55, 0.1, 0.0),
        u: Vector3::new(tilt.cos(), tilt.sin(), 0.0),
        v: z,
        half_u: 0.8,
        half_v: 0.55,
        albedo: Albedo::Gradient {
            from: Vector3::new(0.8, 0.35, 0.25),
            to: Vector3::new(0.9, 0.75, 0.35),
        },
        sheen: Some([
            Vector3::new(0.12, 0.12, 0.14),
            Vector3::new(0.05, 0.05, 0.06),
            Vector3::new(0.1, 0.1, 0.12),
        ]),
        scanned: true,
        grid: (16, 11),
    };
    let wall_b = Surface {
        center: Vector3::new(0.55, 0.1, 0.0),
        u: Vector3::new(tilt.cos(), -tilt.sin(), 0.0),
        v: z,
        half_u: 0.8,
        half_v: 0.55,
        albedo: Albedo::Gradient {
            from: Vector3::new(0.3, 0.4, 0.75),
            to: Vector3::new(0.6, 0.8, 0.9),
        },
        sheen: Some([
            Vector3::new(-0.1, -0.08, -0.06),
            Vector3::new(0.04, 0.05, 0.05),
            Vector3::new(-0.12, -0.1, -0.09),
        ]),
        scanned: true,
        grid: (16, 11),
    };
    let line_cam = |x: f64| CameraSpec {
        eye: Vector3::new(x, -1.9, 0.05),
        target: Vector3::new(0.0, -0.1, 0.0),
    };
    let mut cameras: Vec<CameraSpec> = [-0.8, -0.4, 0.4, 0.8].map(line_cam).to_vec();
    cameras.push(line_cam(0.0));
    cameras.push(CameraSpec {
        eye: Vector3::new(0.0, -1.3, 0.6),
        target: Vector3::zeros(),
    });
    ScenePreset {
        name: "two-walls-specular",
        surfaces: vec![wall_a, wall_b],
        density: 1400.0,
        noise_sigma: 0.004,
        gt_density: 2800.0,
        cameras,
        held_out_interp: vec![4],
        held_out_extrap: vec![5],
        intrinsics: square(96, 96, 78.0),
    }
}

/// A plane whose right half the scanner never reaches, while every image
/// sees both halves: the adaptive refinement stress case.
pub fn half_coverage() -> ScenePreset {
    let x = Vector3::new(1.0, 0.0, 0.0);
    let y = Vector3::new(0.0, 1.0, 0.0);
    let half = |cx: f64, albedo: Albedo, scanned: bool| Surface {
        center: Vector3::new(cx, 0.0, 0.0),
        u: x,
        v: y,
        half_u: 0.5,
        half_v: 1.0,
        albedo,
        sheen: None,
        scanned,
        grid: (12, 24),
    };
    let mut cameras = ring(4, 0.7, 1.5, |_| Vector3::zeros());
    // Rotate the ring so no camera sits on an axis.
    for (k, c) in cameras.iter_mut().enumerate() {
        let phi = 45f64.to_radians() + 2.0 * std::f64::consts::PI * k as f64 / 4.0;
        c.eye = Vector3::new(0.7 * phi.cos(), 0.7 * phi.sin(), 1.5);
    }
    cameras.push(CameraSpec {
        // Straight down; exercises the vertical-view axis fallback.
        eye: Vector3::new(0.0, 0.0, 1.5),
        target: Vector3::zeros(),
    });
    cameras.push(CameraSpec {
        eye: Vector3::new(0.9, 0.1, 2.1),
        target: Vector3::zeros(),
    });
    ScenePreset {
        name: "half-coverage",
        surfaces: vec![
            half(
                -0.5,
                Albedo::Checker {
                    a: Vector3::new(0.8, 0.55, 0.3),
                    b: Vector3::new(0.4, 0.35, 0.3),
                    cells: (2, 4),
                },
                true,
            ),
            half(
                0.5,
                Albedo::Gradient {
                    from: Vector3::new(0.85, 0.25, 0.2),
                    to: Vector3::new(0.25, 0.4, 0.85),
                },
                false,
            ),
        ],
        density: 2400.0,
        noise_sigma: 0.003,
        gt_density: 2400.0,
        cameras,
        held_out_interp: vec![4],
        held_out_extrap: vec![5],
        intrinsics: square(96, 96, 70.0),
    }
}

pub const PRESET_NAMES: [&str; 4] = [
    "plane-lambert",
    "box-room",
    "two-walls-specular",
    "half-coverage",
];

pub fn preset(name: &str) -> Result<ScenePreset, SynthError> {
    match name {
        "plane-lambert" => Ok(plane_lambert()),
        "box-room" => Ok(box_room()),
        "two-walls-specular" => Ok(two_walls_specular()),
        "half-coverage" => Ok(half_coverage()),
        other => Err(SynthError::UnknownPreset(other.into())),
    }
}
