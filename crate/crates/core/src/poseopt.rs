//! Pose refinement by gradient descent on the rendering loss.
//!
//! Gradients are analytic: back through the compositing weights, the
//! per-pixel splat opacities and the projection, to the translation and the
//! four raw quaternion components.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{quat_to_rotmat_jacobian, quat_to_rotmat_raw, Pose};
use crate::image::Frame;
use crate::splat::{render_affine, render_traced, Gaussian, GaussianMap, LossWeights, RenderSettings};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseGradient {
    /// Derivative with respect to the raw quaternion components (qr, qi, qj, qk).
    pub dq: [f64; 4],
    pub dt: [f64; 3],
}

impl PoseGradient {
    /// `dq` with its component along `q` removed, so a step stays tangent to
    /// the unit sphere to first order.
    pub fn tangent_dq(&self, q: [f64; 4]) -> [f64; 4] {
        let dot: f64 = self.dq.iter().zip(&q).map(|(a, b)| a * b).sum();
        let n2: f64 = q.iter().map(|v| v * v).sum();
        let mut out = self.dq;
        for (o, qi) in out.iter_mut().zip(q) {
            *o -= dot / n2 * qi;
        }
        out
    }

    pub fn as_vec(&self) -> [f64; 7] {
        let [a, b, c, d] = self.dq;
        let [e, f, g] = self.dt;
        [a, b, c, d, e, f, g]
    }

    pub fn norm(&self) -> f64 {
        self.as_vec().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_vec().iter().all(|v| v.is_finite())
    }
}

/// Rendering loss at raw pose parameters. The quaternion is not normalized.
pub fn loss_at(
    map: &GaussianMap,
    q: [f64; 4],
    t: Vector3<f64>,
    obs: &Frame,
    weights: &LossWeights,
    settings: &RenderSettings,
) -> f64 {
    let out = render_affine(map, &quat_to_rotmat_raw(q), &t, &obs.intrinsics, settings);
    crate::splat::render_loss(&out, obs, weights)
}

/// Analytic gradient of the loss with default render settings.
pub fn pose_gradient(map: &GaussianMap, pose: &Pose, obs: &Frame, weights: &LossWeights) -> PoseGradient {
    loss_and_gradient(map, pose.quaternion(), pose.translation(), obs, weights, &RenderSettings::default()).1
}

/// Loss and its analytic gradient at raw pose parameters.
pub fn loss_and_gradient(
    map: &GaussianMap,
    q: [f64; 4],
    t: Vector3<f64>,
    obs: &Frame,
    weights: &LossWeights,
    settings: &RenderSettings,
) -> (f64, PoseGradient) {
    let k = &obs.intrinsics;
    let r = quat_to_rotmat_raw(q);
    let (out, trace) = render_traced(map, &r, &t, k, settings);
    let loss = crate::splat::render_loss(&out, obs, weights);
    let w = k.width;
    let ns = trace.splats.len();
    let mut g_mean = vec![[0.0f64; 2]; ns];
    let mut g_rho = vec![0.0f64; ns];
    let mut g_depth = vec![0.0f64; ns];
    let (lc, ld, tau) = (weights.lambda_c, weights.lambda_d, weights.coverage_threshold);
    let mut tr = Vec::new();

    for (p, list) in trace.pixels.iter().enumerate() {
        if list.is_empty() || !obs.valid[p] || !(out.coverage.data()[p] > tau) {
            continue;
        }
        // Color and depth are both divided by coverage alpha. For a
        // normalized value v_n = v / alpha with residual gradient g, the raw
        // sum receives g / alpha and alpha receives -g v_n / alpha.
        let alpha = out.coverage.data()[p];
        let mut gc = [0.0; 3];
        let mut galpha = 0.0;
        if lc != 0.0 {
            for (c, slot) in gc.iter_mut().enumerate() {
                let cn = out.rgb.data()[p * 3 + c] / alpha;
                let g = 2.0 * lc * (cn - obs.rgb.data()[p * 3 + c]);
                *slot = g / alpha;
                galpha -= g * cn / alpha;
            }
        }
        let mut gd = 0.0;
        if ld != 0.0 {
            let dn = out.depth.data()[p] / alpha;
            let g = 2.0 * ld * (dn - obs.depth.data()[p]);
            gd = g / alpha;
            galpha -= g * dn / alpha;
        }
        if gc == [0.0; 3] && gd == 0.0 {
            continue;
        }
        tr.clear();
        let mut acc = 1.0;
        for &(_, f) in list {
            tr.push(acc);
            acc *= 1.0 - f;
        }
        let (px, py) = ((p % w) as f64, (p / w) as f64);
        // B accumulates the contribution of everything behind splat i.
        let mut behind = 0.0;
        for (i, &(slot, f)) in list.iter().enumerate().rev() {
            let slot = slot as usize;
            let (gi, proj) = &trace.splats[slot];
            let col = &map.gaussians[*gi].color;
            let s = gc[0] * col[0] + gc[1] * col[1] + gc[2] * col[2] + gd * proj.depth + galpha;
            let dl_df = tr[i] * (s - behind);
            behind = s * f + (1.0 - f) * behind;
            g_depth[slot] += gd * tr[i] * f;
            if dl_df == 0.0 {
                continue;
            }
            let rho = proj.radius_px;
            let (dx, dy) = (px - proj.mean[0], py - proj.mean[1]);
            let inv_r2 = 1.0 / (rho * rho);
            let common = dl_df * f * inv_r2;
            g_mean[slot][0] += common * dx;
            g_mean[slot][1] += common * dy;
            g_rho[slot] += common * (dx * dx + dy * dy) / rho;
        }
    }

    let jac = quat_to_rotmat_jacobian(q);
    let mut dt = Vector3::zeros();
    let mut dq = [0.0; 4];
    for (slot, (gi, proj)) in trace.splats.iter().enumerate() {
        let gm = g_mean[slot];
        if gm == [0.0; 2] && g_rho[slot] == 0.0 && g_depth[slot] == 0.0 {
            continue;
        }
        let xc = proj.camera;
        let z = xc.z;
        let gx = Vector3::new(
            gm[0] * k.fx / z,
            gm[1] * k.fy / z,
            -(gm[0] * k.fx * xc.x + gm[1] * k.fy * xc.y) / (z * z) - g_rho[slot] * proj.radius_px / z + g_depth[slot],
        );
        dt += gx;
        let xw = map.gaussians[*gi].center();
        for (d, jk) in dq.iter_mut().zip(&jac) {
            *d += gx.dot(&(jk * xw));
        }
    }
    (loss, PoseGradient { dq, dt: dt.into() })
}

/// Step sizes, iteration count and loss settings for [`refine_pose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iters: usize,
    pub lr_q: f64,
    pub lr_t: f64,
    pub weights: LossWeights,
    pub settings: RenderSettings,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iters: 200,
            lr_q: DEFAULT_LR_Q,
            lr_t: DEFAULT_LR_T,
            weights: LossWeights::default(),
            settings: RenderSettings::default(),
        }
    }
}

/// Quaternion step size. The loss is a sum over pixels, so this is tied to
/// the image size used at desk scale (about 80x60).
pub const DEFAULT_LR_Q: f64 = 5e-6;
pub const DEFAULT_LR_T: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// Lowest-loss pose encountered.
    pub pose: Pose,
    pub loss: f64,
    /// Best-so-far loss after each evaluation; non-increasing.
    pub history: Vec<f64>,
    /// Loss at each iterate, in order.
    pub losses: Vec<f64>,
}

/// Gradient descent from `init`, returning the lowest-loss pose visited.
///
/// The descent runs in a world frame translated to the initial camera
/// center, so that quaternion steps rotate the camera about itself rather
/// than about a possibly distant world origin. The loss is unchanged by
/// this; only the conditioning of the problem improves.
pub fn refine_pose(map: &GaussianMap, init: &Pose, obs: &Frame, cfg: &RefineConfig) -> RefineResult {
    let origin = init.camera_center();
    let local = GaussianMap {
        gaussians: map
            .gaussians
            .iter()
            .map(|g| Gaussian { position: (g.center() - origin).into(), ..*g })
            .collect(),
    };
    // R X + t = R (X - c) + (t + R c)
    let shift = |p: &Pose, sign: f64| Pose::from_unit_quaternion(&p.unit_quaternion(), p.translation() + sign * p.rotation() * origin);
    let mut res = refine_local(&local, &shift(init, 1.0), obs, cfg);
    res.pose = shift(&res.pose, -1.0);
    res
}

fn refine_local(map: &GaussianMap, init: &Pose, obs: &Frame, cfg: &RefineConfig) -> RefineResult {
    let mut best = *init;
    let mut best_loss = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.iters + 1);
    let mut losses = Vec::with_capacity(cfg.iters + 1);
    if cfg.iters == 0 {
        let l = loss_at(map, init.quaternion(), init.translation(), obs, &cfg.weights, &cfg.settings);
        return RefineResult { pose: *init, loss: l, history: vec![l], losses: vec![l] };
    }
    let mut cur = *init;
    for it in 0..=cfg.iters {
        let q = cur.quaternion();
        let t = cur.translation();
        let (loss, grad) = if it < cfg.iters {
            loss_and_gradient(map, q, t, obs, &cfg.weights, &cfg.settings)
        } else {
            (loss_at(map, q, t, obs, &cfg.weights, &cfg.settings), PoseGradient::default())
        };
        losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = cur;
        }
        history.push(best_loss);
        if it == cfg.iters || !grad.is_finite() {
            break;
        }
        let dq = grad.tangent_dq(q);
        let mut nq = q;
        for (v, d) in nq.iter_mut().zip(dq) {
            *v -= cfg.lr_q * d;
        }
        let nt = t - cfg.lr_t * Vector3::from(grad.dt);
        match Pose::from_unnormalized(nq, nt) {
            Ok(p) => cur = p,
            Err(_) => break,
        }
    }
    RefineResult { pose: best, loss: best_loss, history, losses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use crate::image::{Image, Intrinsics};
    use crate::splat::{render_with, Gaussian};
    use rand::Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(30.0, 30.0, 16.0, 12.0, 32, 24).unwrap()
    }

    fn random_map(seed: u64, n: usize) -> GaussianMap {
        let mut rng = crate::rng::RngStream::new(seed, 0, 0).rng();
        GaussianMap::new(
            (0..n)
                .map(|_| Gaussian {
                    position: [rng.random_range(-0.8..0.8), rng.random_range(-0.6..0.6), rng.random_range(1.5..3.0)],
                    radius: rng.random_range(0.08..0.25),
                    opacity: rng.random_range(0.3..0.95),
                    color: [rng.random(), rng.random(), rng.random()],
                })
                .collect(),
        )
        .unwrap()
    }

    fn observe(map: &GaussianMap, pose: &Pose, settings: &RenderSettings) -> Frame {
        render_with(map, pose, &k(), settings).to_frame(&k(), 0.0, 0.0)
    }

    fn fd_gradient(map: &GaussianMap, pose: &Pose, obs: &Frame, w: &LossWeights, s: &RenderSettings) -> [f64; 7] {
        let h = 1e-5;
        let (q, t) = (pose.quaternion(), pose.translation());
        let mut out = [0.0; 7];
        for (i, o) in out.iter_mut().enumerate() {
            let (mut qp, mut qm, mut tp, mut tm) = (q, q, t, t);
            if i < 4 {
                qp[i] += h;
                qm[i] -= h;
            } else {
                tp[i - 4] += h;
                tm[i - 4] -= h;
            }
            *o = (loss_at(map, qp, tp, obs, w, s) - loss_at(map, qm, tm, obs, w, s)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn zero_residual_zero_gradient() {
        let map = random_map(1, 20);
        let pose = se3_exp(&Vector3::new(0.02, -0.01, 0.0), &Vector3::new(0.05, 0.0, 0.1));
        let obs = observe(&map, &pose, &RenderSettings::default());
        let g = pose_gradient(&map, &pose, &obs, &LossWeights::default());
        assert!(g.norm() < 1e-8, "{g:?}");
    }

    #[test]
    fn matches_finite_differences() {
        let s = RenderSettings::exact();
        let w = LossWeights { lambda_c: 0.5, lambda_d: 1.0, coverage_threshold: 0.0 };
        for seed in 0..3 {
            let map = random_map(seed, 25);
            let truth = Pose::identity();
            let obs = observe(&map, &truth, &s);
            let pose = se3_exp(&Vector3::new(0.03, -0.02, 0.01), &Vector3::new(0.04, -0.03, 0.05));
            let (_, g) = loss_and_gradient(&map, pose.quaternion(), pose.translation(), &obs, &w, &s);
            let fd = fd_gradient(&map, &pose, &obs, &w, &s);
            let a = g.as_vec();
            let err: f64 = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err / scale < 1e-3, "seed {seed}: {a:?} vs {fd:?}");
        }
    }

    #[test]
    fn on_axis_point_has_no_lateral_translation_gradient() {
        let map = GaussianMap::new(vec![Gaussian { position: [0.0, 0.0, 2.0], radius: 0.2, opacity: 0.8, color: [0.5; 3] }]).unwrap();
        // principal point on the center pixel of a symmetric image
        let kk = Intrinsics::new(30.0, 30.0, 16.0, 12.0, 33, 25).unwrap();
        let obs = Frame::new(0.0, Image::filled(33, 25, 3, 0.2), Image::filled(33, 25, 1, 2.5), kk).unwrap();
        let w = LossWeights { coverage_threshold: 0.0, ..Default::default() };
        let (_, g) = loss_and_gradient(&map, [1.0, 0.0, 0.0, 0.0], Vector3::zeros(), &obs, &w, &RenderSettings::exact());
        assert!(g.dt[0].abs() < 1e-9 && g.dt[1].abs() < 1e-9, "{:?}", g.dt);
        assert!(g.dt[2].abs() > 1e-6);
    }

    #[test]
    fn zero_iterations_returns_init() {
        let map = random_map(2, 10);
        let obs = observe(&map, &Pose::identity(), &RenderSettings::default());
        let init = se3_exp(&Vector3::new(0.01, 0.0, 0.0), &Vector3::zeros());
        let cfg = RefineConfig { iters: 0, ..Default::default() };
        assert_eq!(refine_pose(&map, &init, &obs, &cfg).pose, init);
    }

    #[test]
    fn history_is_monotone_best() {
        let map = random_map(3, 30);
        let obs = observe(&map, &Pose::identity(), &RenderSettings::default());
        let init = se3_exp(&Vector3::new(0.01, 0.01, 0.0), &Vector3::new(0.01, 0.0, 0.0));
        let cfg = RefineConfig { iters: 20, lr_q: 1e-3, lr_t: 1e-3, ..Default::default() };
        let r = refine_pose(&map, &init, &obs, &cfg);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.loss, r.history.last().copied().unwrap());
        assert!((r.pose.quaternion().iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_projection_is_orthogonal() {
        let g = PoseGradient { dq: [1.0, 2.0, -1.0, 0.5], dt: [0.0; 3] };
        let q = [0.5, 0.5, 0.5, 0.5];
        let d = g.tangent_dq(q);
        assert!(d.iter().zip(q).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-15);
    }
}
