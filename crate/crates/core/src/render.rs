//! Tiled EWA splat renderer.
//!
//! Each Gaussian projects through the pinhole model with the local affine
//! (Jacobian) approximation; the screen-space footprint is the 2x2
//! covariance `J W Sigma W^T J^T` plus an isotropic low-pass term so
//! sub-pixel splats never alias away. Pixels composite front to back:
//! `C = sum_i c_i * alpha_i * T_i + bg * T_final`, `T_{i+1} = T_i (1 - alpha_i)`.

use nalgebra::{Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::CameraIntrinsics;
use crate::gaussian::{map_fingerprint, SurfaceGaussian};
use crate::geometry::Pose;
use crate::image::ImageBuffer;
use crate::scalar::Real;
use crate::sh::{eval_sh_color, view_direction, ShFrame};
use crate::tolerances::FRUSTUM_CULL_MARGIN;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings<T: Real> {
    /// Splats closer than this (camera z) are culled.
    pub near_clip: T,
    /// Isotropic variance (px^2) added to every screen footprint.
    pub lowpass: T,
    pub tile_size: usize,
    /// Contributions below this alpha are skipped; zero disables the skip.
    pub skip_min_alpha: T,
    /// Compositing stops once transmittance drops below this; zero disables.
    pub stop_transmittance: T,
    pub background: Vector3<T>,
    pub sh_frame: ShFrame,
}

impl<T: Real> Default for RenderSettings<T> {
    fn default() -> Self {
        Self {
            near_clip: T::c(0.05),
            lowpass: T::c(0.3),
            tile_size: 16,
            skip_min_alpha: T::c(1.0 / 255.0),
            stop_transmittance: T::c(1e-4),
            background: Vector3::zeros(),
            sh_frame: ShFrame::Camera,
        }
    }
}

impl<T: Real> RenderSettings<T> {
    /// Thresholds off: every projected splat reaches every covered pixel.
    /// Gradient checks and compositing invariants use this.
    pub fn exact(mut self) -> Self {
        self.skip_min_alpha = T::zero();
        self.stop_transmittance = T::zero();
        self
    }
}

/// A Gaussian after projection, with everything compositing needs.
#[derive(Clone, Copy, Debug)]
pub struct Splat2D<T: Real> {
    /// Index of the source Gaussian.
    pub id: usize,
    pub center: Vector2<T>,
    /// Screen covariance (a, b, c) of [[a, b], [b, c]].
    pub cov: [T; 3],
    /// Inverse of `cov`.
    pub conic: [T; 3],
    /// Camera-frame z of the mean; compositing order.
    pub depth: T,
    pub color: Vector3<T>,
    /// Channels clamped during SH decode (kills their gradient).
    pub color_clamped: [bool; 3],
    pub opacity: T,
    /// Conservative 3-sigma screen radius.
    pub radius: T,
}

/// Projects one Gaussian; `None` when culled (behind the near plane or
/// entirely outside the image).
pub fn project_gaussian<T: Real>(
    g: &SurfaceGaussian<T>,
    id: usize,
    intrinsics: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    settings: &RenderSettings<T>,
) -> Option<Splat2D<T>> {
    let p_cam = pose.inverse_transform_point(&g.mean);
    if p_cam.z <= settings.near_clip {
        return None;
    }
    // The affine Jacobian below linearizes the projection at the mean; far
    // outside the frustum that linearization degenerates into screen-wide
    // streaks (small z, large x/z), so such splats are culled on their view
    // tangents with a margin. 1.3x keeps splats that straddle the border.
    let margin = T::c(FRUSTUM_CULL_MARGIN);
    let ndx = p_cam.x / p_cam.z;
    let ndy = p_cam.y / p_cam.z;
    if ndx < -margin * intrinsics.cx / intrinsics.fx
        || ndx > margin * (T::from_usize(intrinsics.width).unwrap() - intrinsics.cx) / intrinsics.fx
        || ndy < -margin * intrinsics.cy / intrinsics.fy
        || ndy > margin * (T::from_usize(intrinsics.height).unwrap() - intrinsics.cy) / intrinsics.fy
    {
        return None;
    }
    let center = intrinsics.project(&p_cam);

    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let inv_z = T::one() / z;
    let inv_z2 = inv_z * inv_z;
    let j = Matrix2x3::new(
        intrinsics.fx * inv_z,
        T::zero(),
        -intrinsics.fx * x * inv_z2,
        T::zero(),
        intrinsics.fy * inv_z,
        -intrinsics.fy * y * inv_z2,
    );
    let w = pose.rotation.inverse().to_rotation_matrix().into_inner();
    let p = j * w;
    let cov2 = p * g.covariance() * p.transpose();
    let a = cov2[(0, 0)] + settings.lowpass;
    let b = (cov2[(0, 1)] + cov2[(1, 0)]) * T::c(0.5);
    let c = cov2[(1, 1)] + settings.lowpass;

    let det = a * c - b * b;
    if det <= T::zero() {
        return None;
    }
    let inv_det = T::one() / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];

    let mid = (a + c) * T::c(0.5);
    let disc = ((a - c) * (a - c) * T::c(0.25) + b * b).sqrt();
    let radius = T::c(3.0) * (mid + disc).max(T::zero()).sqrt();

    let (w_img, h_img) = (
        T::from_usize(intrinsics.width).unwrap(),
        T::from_usize(intrinsics.height).unwrap(),
    );
    if center.x + radius < T::zero()
        || center.x - radius > w_img
        || center.y + radius < T::zero()
        || center.y - radius > h_img
    {
        return None;
    }

    let (dir, _) = view_direction(&g.mean, pose, settings.sh_frame);
    let sh = eval_sh_color(&g.sh, &dir);

    Some(Splat2D {
        id,
        center,
        cov: [a, b, c],
        conic,
        depth: z,
        color: sh.color,
        color_clamped: sh.clamped,
        opacity: g.opacity(),
        radius,
    })
}

pub struct RenderOutput<T: Real> {
    pub image: ImageBuffer<T>,
    /// Transmittance left after the last contributor, per pixel.
    pub transmittance: Vec<T>,
    /// Sum of blending weights, per pixel (`weight_sum + transmittance = 1`).
    pub weight_sum: Vec<T>,
    /// Number of splats that contributed, per pixel.
    pub contrib_count: Vec<u32>,
    /// Projected splats in compositing order (depth, ties by id).
    pub splats: Vec<Splat2D<T>>,
    /// Per-tile indices into `splats`, order preserved.
    pub tile_splats: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub settings: RenderSettings<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: Pose<T>,
    /// Fingerprint of the map at forward time; the backward pass refuses to
    /// run if the map has changed since.
    pub map_fingerprint: u64,
}

pub fn render<T: Real>(
    gaussians: &[SurfaceGaussian<T>],
    intrinsics: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    settings: &RenderSettings<T>,
) -> RenderOutput<T> {
    let mut splats: Vec<Splat2D<T>> = gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(id, g)| project_gaussian(g, id, intrinsics, pose, settings))
        .collect();
    splats.sort_unstable_by(|p, q| {
        p.depth
            .partial_cmp(&q.depth)
            .expect("non-finite depth")
            .then(p.id.cmp(&q.id))
    });

    let (width, height) = (intrinsics.width, intrinsics.height);
    let ts = settings.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);

    let mut tile_splats: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let x0 = ((s.center.x - s.radius).floor_i64().max(0) as usize).min(width - 1) / ts;
        let x1 = ((s.center.x + s.radius).floor_i64().max(0) as usize).min(width - 1) / ts;
        let y0 = ((s.center.y - s.radius).floor_i64().max(0) as usize).min(height - 1) / ts;
        let y1 = ((s.center.y + s.radius).floor_i64().max(0) as usize).min(height - 1) / ts;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_splats[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    struct Tile<T> {
        rgb: Vec<T>,
        trans: Vec<T>,
        wsum: Vec<T>,
        count: Vec<u32>,
    }

    let tiles: Vec<Tile<T>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|ti| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let x_lo = tx * ts;
            let y_lo = ty * ts;
            let tw = ts.min(width - x_lo);
            let th = ts.min(height - y_lo);
            let mut tile = Tile {
                rgb: vec![T::zero(); 3 * tw * th],
                trans: vec![T::zero(); tw * th],
                wsum: vec![T::zero(); tw * th],
                count: vec![0u32; tw * th],
            };
            let list = &tile_splats[ti];
            let half = T::c(0.5);
            for py in 0..th {
                for px in 0..tw {
                    let pix = Vector2::new(
                        T::from_usize(x_lo + px).unwrap() + half,
                        T::from_usize(y_lo + py).unwrap() + half,
                    );
                    let mut color = Vector3::zeros();
                    let mut trans = T::one();
                    let mut wsum = T::zero();
                    let mut count = 0u32;
                    for &si in list {
                        let s = &splats[si as usize];
                        let d = pix - s.center;
                        let q = s.conic[0] * d.x * d.x
                            + T::c(2.0) * s.conic[1] * d.x * d.y
                            + s.conic[2] * d.y * d.y;
                        let alpha = s.opacity * (-half * q).exp();
                        if alpha < settings.skip_min_alpha
                            || (settings.skip_min_alpha == T::zero() && alpha == T::zero())
                        {
                            continue;
                        }
                        let weight = alpha * trans;
                        color += s.color * weight;
                        wsum += weight;
                        count += 1;
                        trans *= T::one() - alpha;
                        if trans < settings.stop_transmittance {
                            break;
                        }
                    }
                    color += settings.background * trans;
                    let o = py * tw + px;
                    tile.rgb[3 * o] = color.x;
                    tile.rgb[3 * o + 1] = color.y;
                    tile.rgb[3 * o + 2] = color.z;
                    tile.trans[o] = trans;
                    tile.wsum[o] = wsum;
                    tile.count[o] = count;
                }
            }
            tile
        })
        .collect();

    let mut image = ImageBuffer::new(width, height);
    let mut transmittance = vec![T::zero(); width * height];
    let mut weight_sum = vec![T::zero(); width * height];
    let mut contrib_count = vec![0u32; width * height];
    for (ti, tile) in tiles.iter().enumerate() {
        let (tx, ty) = (ti % tiles_x, ti / tiles_x);
        let x_lo = tx * ts;
        let y_lo = ty * ts;
        let tw = ts.min(width - x_lo);
        let th = ts.min(height - y_lo);
        for py in 0..th {
            for px in 0..tw {
                let o = py * tw + px;
                let gx = x_lo + px;
                let gy = y_lo + py;
                image.set(
                    gx,
                    gy,
                    Vector3::new(tile.rgb[3 * o], tile.rgb[3 * o + 1], tile.rgb[3 * o + 2]),
                );
                let go = gy * width + gx;
                transmittance[go] = tile.trans[o];
                weight_sum[go] = tile.wsum[o];
                contrib_count[go] = tile.count[o];
            }
        }
    }

    RenderOutput {
        image,
        transmittance,
        weight_sum,
        contrib_count,
        splats,
        tile_splats,
        tiles_x,
        tiles_y,
        settings: *settings,
        intrinsics: *intrinsics,
        pose: *pose,
        map_fingerprint: map_fingerprint(gaussians),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{logit, SH_COEFFS};
    use crate::sh::dc_from_rgb;
    use crate::test_rng::rng_for;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn test_camera() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(60.0, 60.0, 24.0, 24.0, 48, 48).unwrap()
    }

    pub fn random_scene(rng: &mut impl Rng, n: usize) -> Vec<SurfaceGaussian<f64>> {
        (0..n)
            .map(|_| {
                let axis = nalgebra::Unit::new_normalize(Vector3::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ));
                let mut sh = [Vector3::zeros(); SH_COEFFS];
                sh[0] = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                for c in sh.iter_mut().skip(1) {
                    *c = Vector3::new(
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                        rng.gen_range(-0.1..0.1),
                    );
                }
                SurfaceGaussian {
                    mean: Vector3::new(
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(-0.5..0.5),
                        rng.gen_range(1.5..3.0),
                    ),
                    log_scale: Vector3::new(
                        rng.gen_range(-3.5..-1.5),
                        rng.gen_range(-3.5..-1.5),
                        rng.gen_range(-3.5..-1.5),
                    ),
                    rotation: UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
                    opacity_logit: rng.gen_range(-1.5..1.5),
                    sh,
                }
            })
            .collect()
    }

    /// Reference compositor: no tiles, one flat loop per pixel over every
    /// sorted splat. Thresholds are honored so outputs are comparable.
    fn brute_force(
        splats: &[Splat2D<f64>],
        intr: &CameraIntrinsics<f64>,
        settings: &RenderSettings<f64>,
    ) -> ImageBuffer<f64> {
        let mut img = ImageBuffer::new(intr.width, intr.height);
        for y in 0..intr.height {
            for x in 0..intr.width {
                let pix = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let mut color = Vector3::zeros();
                let mut trans = 1.0;
                for s in splats {
                    let d = pix - s.center;
                    let q = s.conic[0] * d.x * d.x
                        + 2.0 * s.conic[1] * d.x * d.y
                        + s.conic[2] * d.y * d.y;
                    let alpha = s.opacity * (-0.5 * q).exp();
                    if alpha < settings.skip_min_alpha || alpha == 0.0 {
                        continue;
                    }
                    color += s.color * (alpha * trans);
                    trans *= 1.0 - alpha;
                    if trans < settings.stop_transmittance {
                        break;
                    }
                }
                img.set(x, y, color + settings.background * trans);
            }
        }
        img
    }

    #[test]
    fn weights_and_transmittance_sum_to_one() {
        let mut rng = rng_for("compositing-identity");
        let scene = random_scene(&mut rng, 100);
        let settings = RenderSettings::default().exact();
        let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
        for p in 0..out.weight_sum.len() {
            let total = out.weight_sum[p] + out.transmittance[p];
            assert!((total - 1.0).abs() < 1e-6, "pixel {p}: {total}");
        }
    }

    #[test]
    fn tiled_matches_brute_force() {
        let mut rng = rng_for("tiled-vs-brute");
        for trial in 0..3 {
            let scene = random_scene(&mut rng, 60 + trial * 20);
            let settings = RenderSettings::default().exact();
            let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
            let reference = brute_force(&out.splats, &test_camera(), &settings);
            let diff = out.image.max_abs_diff(&reference);
            assert!(diff <= 2.0 / 255.0, "trial {trial}: max diff {diff}");
        }
    }

    #[test]
    fn saturated_splat_hits_exact_color_and_zero_transmittance() {
        let want = Vector3::new(0.7, 0.2, 0.4);
        let mut sh = [Vector3::zeros(); SH_COEFFS];
        sh[0] = dc_from_rgb(&want);
        // Mean chosen so the projection lands exactly on the center of pixel
        // (24, 24): u = 60 * x / z + 24 = 24.5. There G2D = 1 exactly, and
        // with opacity saturated to 1.0 the pixel must equal the splat color
        // with zero transmittance left.
        let g = SurfaceGaussian {
            mean: Vector3::new(1.0 / 60.0, 1.0 / 60.0, 2.0),
            log_scale: Vector3::repeat(0.0),
            rotation: UnitQuaternion::identity(),
            // Far past logistic saturation: opacity is exactly 1.0 in f64.
            opacity_logit: 1000.0,
            sh,
        };
        let intr = test_camera();
        let out = render(
            &[g],
            &intr,
            &Pose::identity(),
            &RenderSettings::default().exact(),
        );
        let got = out.image.get(24, 24);
        assert!((got - want).norm() < 1e-12, "{got:?}");
        assert_eq!(out.transmittance[24 * 48 + 24], 0.0);
    }

    #[test]
    fn empty_scene_renders_background() {
        let settings = RenderSettings {
            background: Vector3::new(0.1, 0.2, 0.3),
            ..RenderSettings::default()
        };
        let out = render(&[], &test_camera(), &Pose::identity(), &settings);
        for y in 0..48 {
            for x in 0..48 {
                assert_eq!(out.image.get(x, y), Vector3::new(0.1, 0.2, 0.3));
            }
        }
        assert!(out.transmittance.iter().all(|t| *t == 1.0));
        assert!(out.contrib_count.iter().all(|c| *c == 0));
    }

    #[test]
    fn near_clip_and_behind_camera_cull() {
        let mut rng = rng_for("cull");
        let mut scene = random_scene(&mut rng, 1);
        scene[0].mean = Vector3::new(0.0, 0.0, -2.0);
        let settings = RenderSettings::default();
        let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
        assert!(out.splats.is_empty());

        scene[0].mean = Vector3::new(0.0, 0.0, 0.04);
        let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
        assert!(out.splats.is_empty());

        scene[0].mean = Vector3::new(0.0, 0.0, 0.06);
        let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
        assert_eq!(out.splats.len(), 1);
    }

    #[test]
    fn out_of_frame_splat_is_culled() {
        let mut rng = rng_for("offscreen");
        let mut scene = random_scene(&mut rng, 1);
        scene[0].mean = Vector3::new(50.0, 0.0, 2.0);
        scene[0].log_scale = Vector3::repeat(-3.0);
        let out = render(
            &scene,
            &test_camera(),
            &Pose::identity(),
            &RenderSettings::default(),
        );
        assert!(out.splats.is_empty());
    }

    #[test]
    fn far_off_axis_splat_is_culled_before_projection() {
        // A thin wall splat just past the near plane but a metre off-axis:
        // the affine Jacobian would smear it across the whole frame (its
        // naive bbox overlaps the image), so the frustum cull must drop it.
        let mut rng = rng_for("streak");
        let mut scene = random_scene(&mut rng, 1);
        scene[0].mean = Vector3::new(1.2, 0.0, 0.2);
        scene[0].log_scale = Vector3::new(0.1f64.ln(), 0.1f64.ln(), 0.008f64.ln());
        let out = render(
            &scene,
            &test_camera(),
            &Pose::identity(),
            &RenderSettings::default(),
        );
        assert!(out.splats.is_empty());

        // Same splat brought inside the view cone renders normally.
        scene[0].mean = Vector3::new(0.2, 0.0, 1.5);
        let out = render(
            &scene,
            &test_camera(),
            &Pose::identity(),
            &RenderSettings::default(),
        );
        assert_eq!(out.splats.len(), 1);
    }

    #[test]
    fn zero_opacity_is_skipped_by_threshold() {
        let mut rng = rng_for("zero-opacity");
        let mut scene = random_scene(&mut rng, 1);
        scene[0].opacity_logit = -40.0;
        scene[0].mean = Vector3::new(0.0, 0.0, 2.0);
        let out = render(
            &scene,
            &test_camera(),
            &Pose::identity(),
            &RenderSettings::default(),
        );
        assert_eq!(out.splats.len(), 1);
        assert!(out.contrib_count.iter().all(|c| *c == 0));
        assert!(out.weight_sum.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn subpixel_splat_still_contributes() {
        let mut sh = [Vector3::zeros(); SH_COEFFS];
        sh[0] = dc_from_rgb(&Vector3::new(1.0, 1.0, 1.0));
        let g = SurfaceGaussian {
            mean: Vector3::new(0.0, 0.0, 2.0),
            // Sigma of 1e-4 world units: far below one pixel on screen.
            log_scale: Vector3::repeat((1e-4f64).ln()),
            rotation: UnitQuaternion::identity(),
            opacity_logit: logit(0.9),
            sh,
        };
        let out = render(
            &[g],
            &test_camera(),
            &Pose::identity(),
            &RenderSettings::default(),
        );
        let peak = out
            .image
            .data()
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        assert!(
            peak > 0.3,
            "low-pass filter should keep sub-pixel splats visible, peak {peak}"
        );
    }

    #[test]
    fn equal_depth_ties_break_by_id() {
        let mut rng = rng_for("ties");
        let mut scene = random_scene(&mut rng, 2);
        scene[1].mean = Vector3::new(0.05, 0.0, scene[0].mean.z);
        scene[0].mean = Vector3::new(0.0, 0.0, scene[0].mean.z);
        scene[0].opacity_logit = 2.0;
        scene[1].opacity_logit = 2.0;
        let settings = RenderSettings::default().exact();
        let out = render(&scene, &test_camera(), &Pose::identity(), &settings);
        assert_eq!(out.splats[0].id, 0);
        assert_eq!(out.splats[1].id, 1);
        let again = render(&scene, &test_camera(), &Pose::identity(), &settings);
        assert_eq!(out.image, again.image);
    }

    #[test]
    fn renders_in_f32() {
        let g = SurfaceGaussian::<f32> {
            mean: Vector3::new(0.0, 0.0, 2.0),
            log_scale: Vector3::repeat(-1.0),
            rotation: UnitQuaternion::identity(),
            opacity_logit: 1.0,
            sh: [Vector3::zeros(); SH_COEFFS],
        };
        let intr = CameraIntrinsics::<f32>::new(30.0, 30.0, 12.0, 12.0, 24, 24).unwrap();
        let out = render(
            &[g],
            &intr,
            &Pose::identity(),
            &RenderSettings::default(),
        );
        assert!(out.image.get(12, 12).x > 0.2);
    }
}
