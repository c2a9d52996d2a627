//! Photometric loss and the analytic backward pass through the renderer.
//!
//! The forward chain per Gaussian is
//! mean/scale/rotation -> 3D covariance -> screen covariance and center ->
//! per-pixel alpha -> front-to-back blending -> loss, with a parallel path
//! SH coefficients -> color -> blending. Everything below differentiates
//! that chain exactly (no approximations beyond the forward model itself),
//! including the Jacobian's dependence on the camera-frame mean and the
//! view-direction dependence of the SH decode.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gaussian::{map_fingerprint, SurfaceGaussian, SH_COEFFS};
use crate::image::ImageBuffer;
use crate::render::RenderOutput;
use crate::scalar::Real;
use crate::sh::{sh_basis, sh_color_dir_jacobian, view_direction, ShFrame};
use crate::ssim::ssim_with_grad;
use crate::tolerances::ONE_MINUS_ALPHA_FLOOR;

/// Data term of the photometric loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error.
    #[default]
    L1,
    /// Mean squared error.
    L2,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub data: T,
    pub dssim: T,
}

/// Subgradient of `|x|`; zero at zero so identical images get a zero
/// gradient (`f64::signum` would give 1 there).
fn l1_sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Loss `(1 - lambda) * data + lambda * (1 - SSIM) / 2` and its gradient
/// with respect to the rendered image. Means run over all pixel-channel
/// samples.
pub fn photometric_loss<T: Real>(
    rendered: &ImageBuffer<T>,
    reference: &ImageBuffer<T>,
    lambda: T,
    kind: LossKind,
) -> (LossBreakdown<T>, ImageBuffer<T>) {
    assert_eq!(
        (rendered.width(), rendered.height()),
        (reference.width(), reference.height()),
        "rendered and reference image sizes differ"
    );
    let n = T::from_usize(rendered.data().len()).unwrap();
    let mut grad = ImageBuffer::new(rendered.width(), rendered.height());
    let mut data_term = T::zero();
    {
        let g = grad.data_mut();
        for (p, (r, t)) in rendered.data().iter().zip(reference.data()).enumerate() {
            let diff = *r - *t;
            match kind {
                LossKind::L1 => {
                    data_term += diff.abs();
                    g[p] = (T::one() - lambda) * l1_sign(diff) / n;
                }
                LossKind::L2 => {
                    data_term += diff * diff;
                    g[p] = (T::one() - lambda) * T::c(2.0) * diff / n;
                }
            }
        }
    }
    data_term /= n;

    let mut dssim = T::zero();
    if lambda != T::zero() {
        let (s, s_grad) = ssim_with_grad(rendered, reference);
        dssim = (T::one() - s) * T::c(0.5);
        let g = grad.data_mut();
        let half = T::c(0.5);
        for (p, sg) in s_grad.data().iter().enumerate() {
            g[p] -= lambda * half * *sg;
        }
    }

    let total = (T::one() - lambda) * data_term + lambda * dssim;
    (
        LossBreakdown {
            total,
            data: data_term,
            dssim,
        },
        grad,
    )
}

/// Per-parameter-group gradients, rows parallel to the Gaussian list.
#[derive(Clone, Debug)]
pub struct ParamGrads<T: Real> {
    pub mean: Vec<Vector3<T>>,
    pub log_scale: Vec<Vector3<T>>,
    /// Quaternion gradient (w, x, y, z), projected onto the tangent space of
    /// the unit sphere at the current rotation.
    pub rotation: Vec<Vector4<T>>,
    pub opacity_logit: Vec<T>,
    pub sh: Vec<[Vector3<T>; SH_COEFFS]>,
    /// L2 norm of this view's screen-space center gradient; densification
    /// feeds on the accumulated value.
    pub screen_grad_norm: Vec<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity_logit: vec![T::zero(); n],
            sh: vec![[Vector3::zeros(); SH_COEFFS]; n],
            screen_grad_norm: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Adds `other` in place (multi-view accumulation).
    pub fn accumulate(&mut self, other: &Self) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.mean[i] += other.mean[i];
            self.log_scale[i] += other.log_scale[i];
            self.rotation[i] += other.rotation[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            for j in 0..SH_COEFFS {
                self.sh[i][j] += other.sh[i][j];
            }
            self.screen_grad_norm[i] += other.screen_grad_norm[i];
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackwardError {
    #[error("map was mutated after the forward pass (fingerprint mismatch)")]
    MapChanged,
    #[error("gradient image is {got_w}x{got_h}, render is {want_w}x{want_h}")]
    SizeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Screen-space gradient accumulator for one splat.
#[derive(Clone, Copy, Debug)]
struct SplatGrad2D<T: Real> {
    center: Vector2<T>,
    /// With respect to the conic entries (a, b, c) of the quadratic form.
    conic: [T; 3],
    color: Vector3<T>,
    opacity: T,
}

impl<T: Real> SplatGrad2D<T> {
    fn zero() -> Self {
        Self {
            center: Vector2::zeros(),
            conic: [T::zero(); 3],
            color: Vector3::zeros(),
            opacity: T::zero(),
        }
    }
}

/// Propagates `d loss / d image` back to all Gaussian parameters.
///
/// `gaussians` must be byte-identical to the slice that produced `out`.
pub fn backward<T: Real>(
    gaussians: &[SurfaceGaussian<T>],
    out: &RenderOutput<T>,
    dl_dimage: &ImageBuffer<T>,
) -> Result<ParamGrads<T>, BackwardError> {
    if map_fingerprint(gaussians) != out.map_fingerprint {
        return Err(BackwardError::MapChanged);
    }
    if (dl_dimage.width(), dl_dimage.height())
        != (out.intrinsics.width, out.intrinsics.height)
    {
        return Err(BackwardError::SizeMismatch {
            got_w: dl_dimage.width(),
            got_h: dl_dimage.height(),
            want_w: out.intrinsics.width,
            want_h: out.intrinsics.height,
        });
    }

    let settings = &out.settings;
    let ts = settings.tile_size;
    let (width, height) = (out.intrinsics.width, out.intrinsics.height);
    let half = T::c(0.5);
    let floor = T::c(ONE_MINUS_ALPHA_FLOOR);

    // Stage 1: per-tile screen-space gradients, reduced over tiles in a
    // fixed order so the result is independent of scheduling.
    let tile_grads: Vec<Vec<SplatGrad2D<T>>> = (0..out.tile_splats.len())
        .into_par_iter()
        .map(|ti| {
            let list = &out.tile_splats[ti];
            let mut grads = vec![SplatGrad2D::<T>::zero(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let (tx, ty) = (ti % out.tiles_x, ti / out.tiles_x);
            let x_lo = tx * ts;
            let y_lo = ty * ts;
            let tw = ts.min(width - x_lo);
            let th = ts.min(height - y_lo);
            // (position in list, alpha, gaussian value, transmittance before)
            let mut contribs: Vec<(usize, T, T, T)> = Vec::with_capacity(list.len());
            for py in 0..th {
                for px in 0..tw {
                    let gx = x_lo + px;
                    let gy = y_lo + py;
                    let pix = Vector2::new(
                        T::from_usize(gx).unwrap() + half,
                        T::from_usize(gy).unwrap() + half,
                    );
                    contribs.clear();
                    let mut trans = T::one();
                    for (pos, &si) in list.iter().enumerate() {
                        let s = &out.splats[si as usize];
                        let d = pix - s.center;
                        let q = s.conic[0] * d.x * d.x
                            + T::c(2.0) * s.conic[1] * d.x * d.y
                            + s.conic[2] * d.y * d.y;
                        let g = (-half * q).exp();
                        let alpha = s.opacity * g;
                        if alpha < settings.skip_min_alpha
                            || (settings.skip_min_alpha == T::zero() && alpha == T::zero())
                        {
                            continue;
                        }
                        contribs.push((pos, alpha, g, trans));
                        trans *= T::one() - alpha;
                        if trans < settings.stop_transmittance {
                            break;
                        }
                    }

                    let dl = dl_dimage.get(gx, gy);
                    // Color already delivered by splats behind the current
                    // one, plus the background seen through everything.
                    let mut rest = settings.background * trans;
                    for &(pos, alpha, g, t_i) in contribs.iter().rev() {
                        let si = list[pos] as usize;
                        let s = &out.splats[si];
                        let weight = alpha * t_i;
                        let ga = &mut grads[pos];
                        ga.color += dl * weight;

                        let one_minus = (T::one() - alpha).max(floor);
                        let dc_dalpha = s.color * t_i - rest / one_minus;
                        let dl_dalpha = dl.dot(&dc_dalpha);
                        ga.opacity += dl_dalpha * g;
                        let dl_dg = dl_dalpha * s.opacity;
                        // g = exp(-q/2) => dg/dq = -g/2
                        let dl_dq = -half * g * dl_dg;
                        let d = pix - s.center;
                        ga.conic[0] += dl_dq * d.x * d.x;
                        ga.conic[1] += dl_dq * T::c(2.0) * d.x * d.y;
                        ga.conic[2] += dl_dq * d.y * d.y;
                        // dq/d center = -2 * conic * d
                        let cd = Vector2::new(
                            s.conic[0] * d.x + s.conic[1] * d.y,
                            s.conic[1] * d.x + s.conic[2] * d.y,
                        );
                        ga.center -= cd * (T::c(2.0) * dl_dq);

                        rest += s.color * weight;
                    }
                }
            }
            grads
        })
        .collect();

    let mut per_splat = vec![SplatGrad2D::<T>::zero(); out.splats.len()];
    for (ti, grads) in tile_grads.iter().enumerate() {
        for (pos, g) in grads.iter().enumerate() {
            let si = out.tile_splats[ti][pos] as usize;
            let acc = &mut per_splat[si];
            acc.center += g.center;
            acc.conic[0] += g.conic[0];
            acc.conic[1] += g.conic[1];
            acc.conic[2] += g.conic[2];
            acc.color += g.color;
            acc.opacity += g.opacity;
        }
    }

    // Stage 2: chain each splat's screen-space gradients to its Gaussian's
    // parameters.
    let mut out_grads = ParamGrads::zeros(gaussians.len());
    let w_mat = out.pose.rotation.inverse().to_rotation_matrix().into_inner();
    for (si, sg) in per_splat.iter().enumerate() {
        let splat = &out.splats[si];
        let id = splat.id;
        let g = &gaussians[id];

        out_grads.screen_grad_norm[id] += sg.center.norm();

        // Color path: mask channels clamped during decode, then split into
        // the SH-coefficient part and the view-direction part.
        let mut dl_dcolor = sg.color;
        for ch in 0..3 {
            if splat.color_clamped[ch] {
                dl_dcolor[ch] = T::zero();
            }
        }
        let (dir, _) = view_direction(&g.mean, &out.pose, settings.sh_frame);
        let basis = sh_basis(&dir);
        for j in 0..SH_COEFFS {
            out_grads.sh[id][j] += dl_dcolor * basis[j];
        }
        let dir_jac = sh_color_dir_jacobian(&g.sh, &dir, &splat.color_clamped);
        let dl_ddir = dir_jac.transpose() * dl_dcolor;

        // Opacity path through the logistic.
        let sigma = splat.opacity;
        out_grads.opacity_logit[id] += sg.opacity * sigma * (T::one() - sigma);

        // Conic -> screen covariance: conic = cov2^(-1).
        let g_conic = Matrix2::new(
            sg.conic[0],
            sg.conic[1] * half,
            sg.conic[1] * half,
            sg.conic[2],
        );
        let conic_m = Matrix2::new(
            splat.conic[0],
            splat.conic[1],
            splat.conic[1],
            splat.conic[2],
        );
        let g_cov2 = -conic_m * g_conic * conic_m;

        // Screen covariance = P * cov3 * P^T (+ lowpass, gradient-transparent).
        let p_cam = out.pose.inverse_transform_point(&g.mean);
        let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
        let inv_z = T::one() / z;
        let inv_z2 = inv_z * inv_z;
        let (fx, fy) = (out.intrinsics.fx, out.intrinsics.fy);
        let j_mat = nalgebra::Matrix2x3::new(
            fx * inv_z,
            T::zero(),
            -fx * x * inv_z2,
            T::zero(),
            fy * inv_z,
            -fy * y * inv_z2,
        );
        let p_mat = j_mat * w_mat;
        let cov3 = g.covariance();
        let g_cov3 = p_mat.transpose() * g_cov2 * p_mat;
        let g_p = (g_cov2 + g_cov2.transpose()) * p_mat * cov3;
        let g_j = g_p * w_mat.transpose();

        // The Jacobian itself moves with the camera-frame mean.
        let mut dl_dpcam = Vector3::new(
            g_j[(0, 2)] * (-fx * inv_z2),
            g_j[(1, 2)] * (-fy * inv_z2),
            g_j[(0, 0)] * (-fx * inv_z2)
                + g_j[(1, 1)] * (-fy * inv_z2)
                + g_j[(0, 2)] * (T::c(2.0) * fx * x * inv_z2 * inv_z)
                + g_j[(1, 2)] * (T::c(2.0) * fy * y * inv_z2 * inv_z),
        );

        // Projection of the center.
        dl_dpcam += j_mat.transpose() * sg.center;

        // View-direction path.
        match settings.sh_frame {
            ShFrame::Camera => {
                let r = p_cam.norm();
                let proj = (Matrix3::identity() - dir * dir.transpose()) / r;
                dl_dpcam += proj * dl_ddir;
            }
            ShFrame::World => {
                let v = g.mean - out.pose.translation;
                let r = v.norm();
                let proj = (Matrix3::identity() - dir * dir.transpose()) / r;
                out_grads.mean[id] += proj * dl_ddir;
            }
        }

        out_grads.mean[id] += w_mat.transpose() * dl_dpcam;

        // cov3 = M M^T with M = R * diag(exp(log_scale)).
        let sym_cov3 = g_cov3 + g_cov3.transpose();
        let m = g.sqrt_factor();
        let g_m = sym_cov3 * m;
        let r = g.rotation.to_rotation_matrix().into_inner();
        let scale = g.scale();
        let rt_gm = r.transpose() * g_m;
        out_grads.log_scale[id] += Vector3::new(
            rt_gm[(0, 0)] * scale.x,
            rt_gm[(1, 1)] * scale.y,
            rt_gm[(2, 2)] * scale.z,
        );

        // G_R = G_M * S, then chain through R(q).
        let g_r = g_m * Matrix3::from_diagonal(&scale);
        let q = g.rotation.as_ref();
        let (qw, qx, qy, qz) = (q.w, q.i, q.j, q.k);
        let two = T::c(2.0);
        let dr_dw = Matrix3::new(
            T::zero(),
            -qz,
            qy,
            qz,
            T::zero(),
            -qx,
            -qy,
            qx,
            T::zero(),
        ) * two;
        let dr_dx = Matrix3::new(
            T::zero(),
            qy,
            qz,
            qy,
            -two * qx,
            -qw,
            qz,
            qw,
            -two * qx,
        ) * two;
        let dr_dy = Matrix3::new(
            -two * qy,
            qx,
            qw,
            qx,
            T::zero(),
            qz,
            -qw,
            qz,
            -two * qy,
        ) * two;
        let dr_dz = Matrix3::new(
            -two * qz,
            -qw,
            qx,
            qw,
            -two * qz,
            qy,
            qx,
            qy,
            T::zero(),
        ) * two;
        let mut dl_dq = Vector4::new(
            g_r.dot(&dr_dw),
            g_r.dot(&dr_dx),
            g_r.dot(&dr_dy),
            g_r.dot(&dr_dz),
        );
        // Project out the radial component: normalization inside the forward
        // makes loss invariant along q itself.
        let q_vec = Vector4::new(qw, qx, qy, qz);
        dl_dq -= q_vec * dl_dq.dot(&q_vec);
        out_grads.rotation[id] += dl_dq;
    }

    Ok(out_grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::geometry::Pose;
    use crate::render::{render, RenderSettings};
    use crate::sh::{dc_from_rgb, Y00};
    use crate::test_rng::rng_for;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn camera() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(30.0, 30.0, 12.0, 12.0, 24, 24).unwrap()
    }

    fn random_reference(rng: &mut impl Rng, w: usize, h: usize) -> ImageBuffer<f64> {
        let mut img = ImageBuffer::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(
                    x,
                    y,
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                );
            }
        }
        img
    }

    fn scene(rng: &mut impl Rng, n: usize) -> Vec<SurfaceGaussian<f64>> {
        (0..n)
            .map(|_| {
                let axis = nalgebra::Unit::new_normalize(Vector3::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ));
                let mut sh = [Vector3::zeros(); SH_COEFFS];
                sh[0] = Vector3::new(
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                    rng.gen_range(-0.8..0.8),
                );
                for c in sh.iter_mut().skip(1) {
                    *c = Vector3::new(
                        rng.gen_range(-0.15..0.15),
                        rng.gen_range(-0.15..0.15),
                        rng.gen_range(-0.15..0.15),
                    );
                }
                SurfaceGaussian {
                    mean: Vector3::new(
                        rng.gen_range(-0.35..0.35),
                        rng.gen_range(-0.35..0.35),
                        rng.gen_range(1.6..2.6),
                    ),
                    log_scale: Vector3::new(
                        rng.gen_range(-3.0..-1.8),
                        rng.gen_range(-3.0..-1.8),
                        rng.gen_range(-3.0..-1.8),
                    ),
                    rotation: UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-3.0..3.0)),
                    opacity_logit: rng.gen_range(-1.0..1.5),
                    sh,
                }
            })
            .collect()
    }

    fn loss_of(
        gaussians: &[SurfaceGaussian<f64>],
        reference: &ImageBuffer<f64>,
        lambda: f64,
    ) -> f64 {
        let out = render(
            gaussians,
            &camera(),
            &Pose::identity(),
            &RenderSettings::default().exact(),
        );
        photometric_loss(&out.image, reference, lambda, LossKind::L1)
            .0
            .total
    }

    /// Central finite differences over every parameter of every Gaussian,
    /// compared group-wise against the analytic gradients.
    fn check_gradients(seed_label: &str, lambda: f64) {
        let mut rng = rng_for(seed_label);
        let gaussians = scene(&mut rng, 5);
        let reference = random_reference(&mut rng, 24, 24);
        let settings = RenderSettings::default().exact();
        let out = render(&gaussians, &camera(), &Pose::identity(), &settings);
        let (_, dl_dimg) =
            photometric_loss(&out.image, &reference, lambda, LossKind::L1);
        let grads = backward(&gaussians, &out, &dl_dimg).unwrap();

        let h = 1e-4;
        let mut fd = ParamGrads::<f64>::zeros(gaussians.len());
        for i in 0..gaussians.len() {
            for k in 0..3 {
                let mut gp = gaussians.clone();
                let mut gm = gaussians.clone();
                gp[i].mean[k] += h;
                gm[i].mean[k] -= h;
                fd.mean[i][k] =
                    (loss_of(&gp, &reference, lambda) - loss_of(&gm, &reference, lambda))
                        / (2.0 * h);

                let mut gp = gaussians.clone();
                let mut gm = gaussians.clone();
                gp[i].log_scale[k] += h;
                gm[i].log_scale[k] -= h;
                fd.log_scale[i][k] =
                    (loss_of(&gp, &reference, lambda) - loss_of(&gm, &reference, lambda))
                        / (2.0 * h);
            }
            for k in 0..4 {
                let q = gaussians[i].rotation.as_ref();
                let mut raw = [q.w, q.i, q.j, q.k];
                raw[k] += h;
                let mut gp = gaussians.clone();
                gp[i].rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    raw[0], raw[1], raw[2], raw[3],
                ));
                let mut raw = [q.w, q.i, q.j, q.k];
                raw[k] -= h;
                let mut gm = gaussians.clone();
                gm[i].rotation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    raw[0], raw[1], raw[2], raw[3],
                ));
                fd.rotation[i][k] =
                    (loss_of(&gp, &reference, lambda) - loss_of(&gm, &reference, lambda))
                        / (2.0 * h);
            }
            {
                let mut gp = gaussians.clone();
                let mut gm = gaussians.clone();
                gp[i].opacity_logit += h;
                gm[i].opacity_logit -= h;
                fd.opacity_logit[i] =
                    (loss_of(&gp, &reference, lambda) - loss_of(&gm, &reference, lambda))
                        / (2.0 * h);
            }
            for j in 0..SH_COEFFS {
                for c in 0..3 {
                    let mut gp = gaussians.clone();
                    let mut gm = gaussians.clone();
                    gp[i].sh[j][c] += h;
                    gm[i].sh[j][c] -= h;
                    fd.sh[i][j][c] =
                        (loss_of(&gp, &reference, lambda) - loss_of(&gm, &reference, lambda))
                            / (2.0 * h);
                }
            }
        }

        let norm_pair = |a: &[f64], b: &[f64]| {
            let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            let ref_n: f64 = b.iter().map(|y| y * y).sum();
            (diff.sqrt(), ref_n.sqrt())
        };
        let flat_mean_a: Vec<f64> = grads.mean.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let flat_mean_f: Vec<f64> = fd.mean.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let flat_scale_a: Vec<f64> = grads
            .log_scale
            .iter()
            .flat_map(|v| [v.x, v.y, v.z])
            .collect();
        let flat_scale_f: Vec<f64> = fd.log_scale.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        let flat_rot_a: Vec<f64> = grads
            .rotation
            .iter()
            .flat_map(|v| [v.x, v.y, v.z, v.w])
            .collect();
        let flat_rot_f: Vec<f64> = fd
            .rotation
            .iter()
            .flat_map(|v| [v.x, v.y, v.z, v.w])
            .collect();
        let flat_sh_a: Vec<f64> = grads
            .sh
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| [v.x, v.y, v.z]))
            .collect();
        let flat_sh_f: Vec<f64> = fd
            .sh
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| [v.x, v.y, v.z]))
            .collect();

        for (name, a, b) in [
            ("mean", &flat_mean_a, &flat_mean_f),
            ("log_scale", &flat_scale_a, &flat_scale_f),
            ("rotation", &flat_rot_a, &flat_rot_f),
            ("opacity", &grads.opacity_logit, &fd.opacity_logit),
            ("sh", &flat_sh_a, &flat_sh_f),
        ] {
            let (diff, ref_n) = norm_pair(a, b);
            let rel = diff / ref_n.max(1e-12);
            assert!(rel < 1e-3, "{name}: relative error {rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_l1_only() {
        check_gradients("grad-l1", 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_with_dssim() {
        check_gradients("grad-dssim", 0.2);
    }

    #[test]
    fn single_splat_dc_gradient_closed_form() {
        // One opaque splat, L1 only. The DC coefficient reaches the loss as
        // sign(diff) * weight * Y00 / (3 H W) summed over pixels; everything
        // is available from the forward output, so compare exactly.
        let mut rng = rng_for("closed-form-dc");
        let mut g = scene(&mut rng, 1);
        g[0].mean = Vector3::new(0.0, 0.0, 2.0);
        g[0].sh = [Vector3::zeros(); SH_COEFFS];
        g[0].sh[0] = dc_from_rgb(&Vector3::new(0.8, 0.3, 0.6));
        let reference = random_reference(&mut rng, 24, 24);
        let settings = RenderSettings::default().exact();
        let out = render(&g, &camera(), &Pose::identity(), &settings);
        let (_, dl_dimg) = photometric_loss(&out.image, &reference, 0.0, LossKind::L1);
        let grads = backward(&g, &out, &dl_dimg).unwrap();

        let n = (24 * 24 * 3) as f64;
        let mut expect = Vector3::zeros();
        for y in 0..24 {
            for x in 0..24 {
                let p = y * 24 + x;
                let w = out.weight_sum[p];
                let diff = out.image.get(x, y) - reference.get(x, y);
                for ch in 0..3 {
                    expect[ch] += l1_sign(diff[ch]) * w * Y00 / n;
                }
            }
        }
        let got = grads.sh[0][0];
        assert!(
            (got - expect).norm() < 1e-12,
            "analytic {got:?} vs closed form {expect:?}"
        );
    }

    #[test]
    fn loss_examples() {
        let a = ImageBuffer::filled(8, 8, Vector3::new(0.4f64, 0.5, 0.6));
        let (l, grad) = photometric_loss(&a, &a.clone(), 0.2, LossKind::L1);
        assert_eq!(l.total, 0.0);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));

        let b = ImageBuffer::filled(8, 8, Vector3::new(0.5, 0.6, 0.7));
        let (l, _) = photometric_loss(&b, &a, 0.0, LossKind::L1);
        assert!((l.total - 0.1).abs() < 1e-12);

        let (l2, _) = photometric_loss(&b, &a, 0.0, LossKind::L2);
        assert!((l2.total - 0.01).abs() < 1e-14);
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let mut rng = rng_for("l2-grad");
        let x = random_reference(&mut rng, 8, 8);
        let y = random_reference(&mut rng, 8, 8);
        let (_, grad) = photometric_loss(&x, &y, 0.0, LossKind::L2);
        let h = 1e-6;
        for _ in 0..20 {
            let px = rng.gen_range(0..8);
            let py = rng.gen_range(0..8);
            let ch = rng.gen_range(0..3);
            let mut xp = x.clone();
            let mut v = xp.get(px, py);
            v[ch] += h;
            xp.set(px, py, v);
            let lp = photometric_loss(&xp, &y, 0.0, LossKind::L2).0.total;
            let l0 = photometric_loss(&x, &y, 0.0, LossKind::L2).0.total;
            let fd = (lp - l0) / h;
            assert!((grad.get(px, py)[ch] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_rejects_mutated_map() {
        let mut rng = rng_for("stale");
        let mut g = scene(&mut rng, 3);
        let reference = random_reference(&mut rng, 24, 24);
        let out = render(
            &g,
            &camera(),
            &Pose::identity(),
            &RenderSettings::default().exact(),
        );
        let (_, dl_dimg) = photometric_loss(&out.image, &reference, 0.0, LossKind::L1);
        g[1].mean.x += 1e-9;
        assert!(matches!(
            backward(&g, &out, &dl_dimg),
            Err(BackwardError::MapChanged)
        ));
    }

    #[test]
    fn backward_rejects_wrong_gradient_size() {
        let mut rng = rng_for("grad-size");
        let g = scene(&mut rng, 2);
        let out = render(
            &g,
            &camera(),
            &Pose::identity(),
            &RenderSettings::default().exact(),
        );
        let wrong = ImageBuffer::new(8, 8);
        assert!(matches!(
            backward(&g, &out, &wrong),
            Err(BackwardError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn screen_grad_norm_tracks_mismatch() {
        // A splat rendered against a shifted copy of its own image gets a
        // nonzero positional gradient; against itself it gets (near) zero.
        let mut rng = rng_for("screen-grad");
        let g = scene(&mut rng, 4);
        let settings = RenderSettings::default().exact();
        let out = render(&g, &camera(), &Pose::identity(), &settings);
        let (_, zero_grad) =
            photometric_loss(&out.image, &out.image.clone(), 0.0, LossKind::L1);
        let grads = backward(&g, &out, &zero_grad).unwrap();
        assert!(grads.screen_grad_norm.iter().all(|n| *n < 1e-12));

        let mut rng2 = rng_for("screen-grad-ref");
        let reference = random_reference(&mut rng2, 24, 24);
        let (_, dl_dimg) = photometric_loss(&out.image, &reference, 0.0, LossKind::L1);
        let grads = backward(&g, &out, &dl_dimg).unwrap();
        assert!(grads.screen_grad_norm.iter().any(|n| *n > 0.0));
    }

    #[test]
    fn world_frame_sh_gradients_also_match_fd() {
        let mut rng = rng_for("world-frame-grad");
        let gaussians = scene(&mut rng, 4);
        let reference = random_reference(&mut rng, 24, 24);
        let settings = RenderSettings {
            sh_frame: ShFrame::World,
            ..RenderSettings::default()
        }
        .exact();
        let out = render(&gaussians, &camera(), &Pose::identity(), &settings);
        let (_, dl_dimg) = photometric_loss(&out.image, &reference, 0.0, LossKind::L1);
        let grads = backward(&gaussians, &out, &dl_dimg).unwrap();

        let loss_fn = |gs: &[SurfaceGaussian<f64>]| {
            let o = render(gs, &camera(), &Pose::identity(), &settings);
            photometric_loss(&o.image, &reference, 0.0, LossKind::L1).0.total
        };
        let h = 1e-4;
        let mut max_rel: f64 = 0.0;
        for i in 0..gaussians.len() {
            for k in 0..3 {
                let mut gp = gaussians.clone();
                let mut gm = gaussians.clone();
                gp[i].mean[k] += h;
                gm[i].mean[k] -= h;
                let fd = (loss_fn(&gp) - loss_fn(&gm)) / (2.0 * h);
                let a = grads.mean[i][k];
                if fd.abs() > 1e-9 {
                    max_rel = max_rel.max((a - fd).abs() / fd.abs().max(1e-9));
                }
            }
        }
        assert!(max_rel < 1e-2, "world-frame mean grad rel err {max_rel}");
    }
}
