//! Lifting matches to 3D and the robust relative-pose solve.

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::matcher::Match2D;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};
use crate::image::{Image, Intrinsics, VOID};

/// A pair of camera-frame points seen in the rendered and observed views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence3D {
    pub p_r: Vector3<f64>,
    pub p_o: Vector3<f64>,
}

/// Depth at a sub-pixel location, or `None` when any contributing sample
/// is VOID or the location is outside the image.
pub fn sample_depth(depth: &Image, u: f64, v: f64) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (ax, ay) = (u - x0 as f64, v - y0 as f64);
    let mut acc = 0.0;
    for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
        for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
            let wgt = wx * wy;
            if wgt == 0.0 {
                continue;
            }
            let d = depth.get((x0 + dx).min(w - 1), (y0 + dy).min(h - 1), 0);
            if d == VOID {
                return None;
            }
            acc += wgt * d;
        }
    }
    Some(acc)
}

/// Back-projects both endpoints of every match, dropping those with a VOID
/// depth at either end.
pub fn lift_matches(matches: &[Match2D], d_r: &Image, d_o: &Image, k: &Intrinsics) -> Vec<Correspondence3D> {
    matches
        .iter()
        .filter_map(|m| {
            let zr = sample_depth(d_r, m.u_r, m.v_r)?;
            let zo = sample_depth(d_o, m.u_o, m.v_o)?;
            Some(Correspondence3D {
                p_r: k.back_project(m.u_r, m.v_r, zr),
                p_o: k.back_project(m.u_o, m.v_o, zo),
            })
        })
        .collect()
}

/// `rho(s) = 2 (sqrt(1 + s/2) - 1)`.
pub fn soft_l1(s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::invalid(format!("soft-L1 argument {s} is negative")));
    }
    Ok(soft_l1_unchecked(s))
}

fn soft_l1_unchecked(s: f64) -> f64 {
    // written to avoid cancellation for tiny s
    let h = s * 0.5;
    2.0 * h / ((1.0 + h).sqrt() + 1.0)
}

fn soft_l1_derivative(s: f64) -> f64 {
    0.5 / (1.0 + 0.5 * s).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Residual scale in meters: residuals well below it are treated
    /// quadratically, well above it linearly.
    pub f_scale: f64,
    pub max_iters: usize,
    pub step_tolerance: f64,
    /// Step of the central-difference Jacobian.
    pub fd_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { f_scale: 0.02, max_iters: 100, step_tolerance: 1e-10, fd_step: 1e-6 }
    }
}

/// Fewest correspondences accepted by the solver.
pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    /// Final robust cost, `sum f^2 rho(|r|^2 / f^2)`.
    pub cost: f64,
    /// Share of correspondences with residual below three residual scales.
    pub inlier_ratio: f64,
    pub iterations: usize,
}

impl RelativePose {
    /// The transform taking rendered-view points to observed-view points.
    pub fn to_pose(&self) -> Pose {
        Pose::from_unit_quaternion(&self.rotation, self.translation)
    }
}

fn residual(x: &Vector6<f64>, c: &Correspondence3D) -> Vector3<f64> {
    let r = so3_exp(&Vector3::new(x[0], x[1], x[2]));
    r * c.p_r + Vector3::new(x[3], x[4], x[5]) - c.p_o
}

fn robust_cost(x: &Vector6<f64>, corrs: &[Correspondence3D], f2: f64) -> f64 {
    corrs.iter().map(|c| f2 * soft_l1_unchecked(residual(x, c).norm_squared() / f2)).sum()
}

/// Robust rigid alignment `p_o = R p_r + t`, starting from the identity.
///
/// Levenberg-Marquardt with iteratively reweighted normal equations over an
/// axis-angle plus translation parameterization; the Jacobian comes from
/// central differences.
pub fn solve_relative_pose(corrs: &[Correspondence3D], opts: &SolveOptions) -> Result<RelativePose> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientData(format!(
            "{} correspondences, need at least {MIN_CORRESPONDENCES}",
            corrs.len()
        )));
    }
    if corrs.iter().any(|c| !(c.p_r.iter().chain(c.p_o.iter()).all(|v| v.is_finite()))) {
        return Err(Error::invalid("non-finite correspondence"));
    }
    let f2 = opts.f_scale * opts.f_scale;
    let h = opts.fd_step;
    let mut x = Vector6::zeros();
    let mut cost = robust_cost(&x, corrs, f2);
    let mut mu = 1e-3;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        iterations += 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corrs {
            let r = residual(&x, c);
            let w = soft_l1_derivative(r.norm_squared() / f2);
            let mut j = nalgebra::Matrix3x6::zeros();
            for k in 0..6 {
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                j.set_column(k, &((residual(&xp, c) - residual(&xm, c)) / (2.0 * h)));
            }
            jtj += w * j.transpose() * j;
            jtr += w * j.transpose() * r;
        }
        let mut accepted = None;
        while mu < 1e12 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                mu *= 4.0;
                continue;
            };
            let cand = x + step;
            let c_new = robust_cost(&cand, corrs, f2);
            if c_new <= cost {
                accepted = Some((cand, c_new, step.norm()));
                mu = (mu / 3.0).max(1e-12);
                break;
            }
            if step.norm() < opts.step_tolerance {
                break;
            }
            mu *= 4.0;
        }
        match accepted {
            Some((cand, c_new, step)) => {
                x = cand;
                cost = c_new;
                if step < opts.step_tolerance {
                    break;
                }
            }
            None => break,
        }
    }
    let inliers = corrs
        .iter()
        .filter(|c| residual(&x, c).norm() < 3.0 * opts.f_scale)
        .count();
    Ok(RelativePose {
        rotation: so3_exp(&Vector3::new(x[0], x[1], x[2])),
        translation: Vector3::new(x[3], x[4], x[5]),
        cost,
        inlier_ratio: inliers as f64 / corrs.len() as f64,
        iterations,
    })
}
