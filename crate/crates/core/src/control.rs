//! Adaptive density control: clone Gaussians whose screen-space gradients
//! stay large (under-reconstructed regions) and drop Gaussians whose opacity
//! collapsed (over-dense or never-supported regions).
//!
//! Both operations mutate the scene between optimization steps; they are the
//! only place the Gaussian list changes length, and every change is recorded
//! so optimizer state can be resized coherently.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gaussian::SurfaceGaussian;
use crate::grad::ParamGrads;
use crate::render::RenderOutput;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlParams {
    /// Mean accumulated screen-gradient norm (px) above which a Gaussian is
    /// cloned.
    pub densify_grad_threshold: f64,
    /// Iterations between control steps.
    pub densify_interval: usize,
    /// Gaussians below this opacity are pruned.
    pub prune_opacity: f64,
    /// Clone scale divisor; clones refine coverage instead of duplicating it.
    pub clone_scale_shrink: f64,
    /// First iteration at which control runs.
    pub start_iteration: usize,
    /// Control stops after this fraction of the total iterations.
    pub stop_fraction: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            densify_grad_threshold: 2e-4,
            densify_interval: 100,
            prune_opacity: 0.005,
            clone_scale_shrink: 1.6,
            start_iteration: 500,
            stop_fraction: 0.8,
        }
    }
}

impl ControlParams {
    pub fn active_at(&self, iteration: usize, total_iterations: usize) -> bool {
        iteration >= self.start_iteration
            && (iteration as f64) < self.stop_fraction * total_iterations as f64
            && iteration % self.densify_interval == 0
    }
}

/// Per-Gaussian positional-gradient history between control steps.
#[derive(Clone, Debug, Default)]
pub struct DensifyAccum<T> {
    norm_sum: Vec<T>,
    seen: Vec<u32>,
}

impl<T: Real> DensifyAccum<T> {
    pub fn new(n: usize) -> Self {
        Self {
            norm_sum: vec![T::zero(); n],
            seen: vec![0; n],
        }
    }

    /// Folds in one view's gradients. Visibility comes from the render: only
    /// Gaussians that actually projected count toward the mean.
    pub fn record(&mut self, grads: &ParamGrads<T>, out: &RenderOutput<T>) {
        assert_eq!(grads.len(), self.norm_sum.len());
        for s in &out.splats {
            self.norm_sum[s.id] += grads.screen_grad_norm[s.id];
            self.seen[s.id] += 1;
        }
    }

    pub fn mean_norm(&self, id: usize) -> T {
        if self.seen[id] == 0 {
            T::zero()
        } else {
            self.norm_sum[id] / T::from_u32(self.seen[id]).unwrap()
        }
    }

    pub fn reset(&mut self, n: usize) {
        self.norm_sum.clear();
        self.norm_sum.resize(n, T::zero());
        self.seen.clear();
        self.seen.resize(n, 0);
    }

    pub fn len(&self) -> usize {
        self.norm_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm_sum.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloneRecord {
    pub parent: usize,
    pub new_id: usize,
    /// Mean screen-gradient norm that triggered the clone.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub id: usize,
    pub opacity: f64,
}

/// One scene mutation, as appended to the training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    pub iteration: usize,
    pub cloned: Vec<CloneRecord>,
    pub pruned: Vec<PruneRecord>,
    /// Old id to new id for survivors after a prune; empty for densify
    /// events (existing ids are stable there).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub remap: Vec<Option<usize>>,
}

impl ControlEvent {
    pub fn is_noop(&self) -> bool {
        self.cloned.is_empty() && self.pruned.is_empty()
    }
}

/// Clones every Gaussian whose mean accumulated screen gradient exceeds the
/// threshold. The clone sits one sample of the parent's own distribution
/// away, with scale shrunk by `clone_scale_shrink`; rotation, opacity and SH
/// carry over. Parents stay. The accumulator is reset to the new count.
pub fn densify<T: Real>(
    gaussians: &mut Vec<SurfaceGaussian<T>>,
    accum: &mut DensifyAccum<T>,
    iteration: usize,
    params: &ControlParams,
    rng: &mut impl Rng,
) -> ControlEvent {
    assert_eq!(gaussians.len(), accum.len());
    let threshold = T::c(params.densify_grad_threshold);
    let shrink = T::c(params.clone_scale_shrink.ln());
    let mut event = ControlEvent {
        iteration,
        ..ControlEvent::default()
    };
    let parents: Vec<usize> = (0..gaussians.len())
        .filter(|&id| accum.mean_norm(id) > threshold)
        .collect();
    for id in parents {
        let parent = gaussians[id];
        let z = Vector3::new(
            T::c(rng.sample::<f64, _>(StandardNormal)),
            T::c(rng.sample::<f64, _>(StandardNormal)),
            T::c(rng.sample::<f64, _>(StandardNormal)),
        );
        let clone = SurfaceGaussian {
            mean: parent.mean + parent.sqrt_factor() * z,
            log_scale: parent.log_scale.map(|s| s - shrink),
            ..parent
        };
        let new_id = gaussians.len();
        gaussians.push(clone);
        event.cloned.push(CloneRecord {
            parent: id,
            new_id,
            grad_norm: accum.mean_norm(id).to_f64().unwrap(),
        });
    }
    accum.reset(gaussians.len());
    event
}

/// Removes every Gaussian with opacity below `sigma_min`, keeping survivor
/// order and recording the dense id remap.
pub fn prune<T: Real>(
    gaussians: &mut Vec<SurfaceGaussian<T>>,
    iteration: usize,
    sigma_min: T,
) -> ControlEvent {
    let mut event = ControlEvent {
        iteration,
        ..ControlEvent::default()
    };
    let mut remap: Vec<Option<usize>> = Vec::with_capacity(gaussians.len());
    let mut kept = 0usize;
    for (id, g) in gaussians.iter().enumerate() {
        if g.opacity() < sigma_min {
            event.pruned.push(PruneRecord {
                id,
                opacity: g.opacity().to_f64().unwrap(),
            });
            remap.push(None);
        } else {
            remap.push(Some(kept));
            kept += 1;
        }
    }
    if event.pruned.is_empty() {
        return event;
    }
    let mut write = 0usize;
    for read in 0..gaussians.len() {
        if remap[read].is_some() {
            gaussians[write] = gaussians[read];
            write += 1;
        }
    }
    gaussians.truncate(write);
    event.remap = remap;
    event
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::gaussian::{logit, SH_COEFFS};
    use crate::geometry::Pose;
    use crate::grad::{backward, photometric_loss, LossKind};
    use crate::render::{render, RenderSettings};
    use crate::test_rng::rng_for;
    use nalgebra::UnitQuaternion;

    fn small_scene(rng: &mut impl rand::Rng, n: usize) -> Vec<SurfaceGaussian<f64>> {
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
                    opacity_logit: rng.gen_range(-1.0..1.5),
                    sh,
                }
            })
            .collect()
    }

    fn accum_with(norms: &[f64]) -> DensifyAccum<f64> {
        let mut a = DensifyAccum::new(norms.len());
        for (i, n) in norms.iter().enumerate() {
            a.norm_sum[i] = *n;
            a.seen[i] = 1;
        }
        a
    }

    #[test]
    fn no_gradient_above_threshold_is_a_noop() {
        let mut rng = rng_for("densify-noop");
        let mut scene = small_scene(&mut rng, 5);
        let before = scene.clone();
        let mut accum = accum_with(&[1e-5; 5]);
        let params = ControlParams::default();
        let event = densify(&mut scene, &mut accum, 600, &params, &mut rng);
        assert!(event.is_noop());
        assert_eq!(scene.len(), before.len());
        for (a, b) in scene.iter().zip(&before) {
            assert_eq!(a.mean, b.mean);
        }
    }

    #[test]
    fn one_hot_gradient_clones_exactly_one() {
        let mut rng = rng_for("densify-one");
        let mut scene = small_scene(&mut rng, 4);
        let parent = scene[2];
        let mut accum = accum_with(&[0.0, 0.0, 1e-3, 0.0]);
        let params = ControlParams::default();
        let event = densify(&mut scene, &mut accum, 600, &params, &mut rng);
        assert_eq!(scene.len(), 5);
        assert_eq!(event.cloned.len(), 1);
        assert_eq!(event.cloned[0].parent, 2);
        assert_eq!(event.cloned[0].new_id, 4);
        assert!((event.cloned[0].grad_norm - 1e-3).abs() < 1e-15);

        let clone = scene[4];
        assert_eq!(clone.rotation, parent.rotation);
        assert_eq!(clone.opacity_logit, parent.opacity_logit);
        assert_eq!(clone.sh, parent.sh);
        let shrink = 1.6f64.ln();
        for k in 0..3 {
            assert!((clone.log_scale[k] - (parent.log_scale[k] - shrink)).abs() < 1e-15);
        }
        // Offset is one draw from the parent's own distribution: within a
        // few standard deviations along every principal axis.
        let offset = clone.mean - parent.mean;
        let m = parent.sqrt_factor();
        let z = m.try_inverse().unwrap() * offset;
        assert!(z.norm() < 6.0, "offset {} sigma out", z.norm());
        assert!(offset.norm() > 0.0);

        // Counters reset to the new count.
        assert_eq!(accum.len(), 5);
        assert!((0..5).all(|i| accum.mean_norm(i) == 0.0));
    }

    #[test]
    fn densify_is_deterministic_for_a_seed() {
        let mut rng = rng_for("densify-det");
        let scene0 = small_scene(&mut rng, 6);
        let norms = [1e-3, 0.0, 5e-4, 0.0, 3e-4, 0.0];
        let run = || {
            let mut scene = scene0.clone();
            let mut accum = accum_with(&norms);
            let mut rng = rng_for("densify-det-inner");
            let event = densify(
                &mut scene,
                &mut accum,
                700,
                &ControlParams::default(),
                &mut rng,
            );
            (scene, event)
        };
        let (s1, e1) = run();
        let (s2, e2) = run();
        assert_eq!(s1.len(), s2.len());
        assert_eq!(e1.cloned.len(), 3);
        assert_eq!(e1.cloned.len(), e2.cloned.len());
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.log_scale, b.log_scale);
        }
    }

    #[test]
    fn prune_keeps_everything_above_threshold() {
        let mut rng = rng_for("prune-noop");
        let mut scene = small_scene(&mut rng, 5);
        for g in scene.iter_mut() {
            g.opacity_logit = logit(0.5);
        }
        let before = scene.clone();
        let event = prune(&mut scene, 100, 0.005);
        assert!(event.is_noop());
        assert!(event.remap.is_empty());
        assert_eq!(scene.len(), before.len());
    }

    #[test]
    fn prune_drops_low_opacity_and_remaps_densely() {
        let mut rng = rng_for("prune-two");
        let mut scene = small_scene(&mut rng, 2);
        scene[0].opacity_logit = logit(0.001);
        scene[1].opacity_logit = logit(0.5);
        let survivor = scene[1];
        let event = prune(&mut scene, 100, 0.005);
        assert_eq!(scene.len(), 1);
        assert_eq!(scene[0].mean, survivor.mean);
        assert_eq!(event.pruned.len(), 1);
        assert_eq!(event.pruned[0].id, 0);
        assert!((event.pruned[0].opacity - 0.001).abs() < 1e-12);
        assert_eq!(event.remap, vec![None, Some(0)]);
    }

    #[test]
    fn prune_preserves_survivor_order_and_floor() {
        let mut rng = rng_for("prune-order");
        let mut scene = small_scene(&mut rng, 40);
        for (i, g) in scene.iter_mut().enumerate() {
            g.opacity_logit = if i % 3 == 0 {
                logit(1e-4)
            } else {
                logit(0.01 + i as f64 * 0.01)
            };
        }
        let before = scene.clone();
        let event = prune(&mut scene, 100, 0.005);
        assert!(scene.iter().all(|g| g.opacity() >= 0.005));
        let mut expect = Vec::new();
        for (id, g) in before.iter().enumerate() {
            if g.opacity() >= 0.005 {
                expect.push(*g);
                assert_eq!(event.remap[id], Some(expect.len() - 1));
            } else {
                assert_eq!(event.remap[id], None);
            }
        }
        assert_eq!(scene.len(), expect.len());
        for (a, b) in scene.iter().zip(&expect) {
            assert_eq!(a.mean, b.mean);
        }
    }

    #[test]
    fn pruned_splats_were_nearly_invisible() {
        // Dropping everything under the default opacity floor barely moves
        // the rendered image.
        let mut rng = rng_for("prune-render");
        let mut scene = small_scene(&mut rng, 60);
        for (i, g) in scene.iter_mut().enumerate() {
            if i % 4 == 0 {
                g.opacity_logit = logit(rng.gen_range(1e-4..0.004));
            }
        }
        let intr = CameraIntrinsics::new(60.0, 60.0, 24.0, 24.0, 48, 48).unwrap();
        let settings = RenderSettings::default();
        let before = render(&scene, &intr, &Pose::identity(), &settings);
        let event = prune(&mut scene, 100, 0.005);
        assert!(!event.pruned.is_empty());
        let after = render(&scene, &intr, &Pose::identity(), &settings);
        let diff = before.image.max_abs_diff(&after.image);
        assert!(diff <= 5.0 / 255.0, "visible change {diff} after pruning");
    }

    #[test]
    fn accum_records_only_visible_gaussians() {
        let mut rng = rng_for("accum-visibility");
        let mut scene = small_scene(&mut rng, 3);
        // Push one Gaussian behind the camera so it never projects.
        scene[1].mean = Vector3::new(0.0, 0.0, -5.0);
        let intr = CameraIntrinsics::new(60.0, 60.0, 24.0, 24.0, 48, 48).unwrap();
        let settings = RenderSettings::default().exact();
        let out = render(&scene, &intr, &Pose::identity(), &settings);
        let mut reference = out.image.clone();
        for v in reference.data_mut() {
            *v = (*v + 0.25).min(1.0);
        }
        let (_, dl) = photometric_loss(&out.image, &reference, 0.0, LossKind::L1);
        let grads = backward(&scene, &out, &dl).unwrap();
        let mut accum = DensifyAccum::new(3);
        accum.record(&grads, &out);
        assert_eq!(accum.seen[1], 0);
        assert_eq!(accum.mean_norm(1), 0.0);
        assert!(accum.seen[0] == 1 && accum.seen[2] == 1);
    }

    #[test]
    fn control_window_gates_iterations() {
        let p = ControlParams::default();
        assert!(!p.active_at(400, 2000));
        assert!(p.active_at(500, 2000));
        assert!(!p.active_at(550, 2000));
        assert!(p.active_at(1500, 2000));
        assert!(!p.active_at(1600, 2000));
        assert!(!p.active_at(1700, 2000));
    }
}
