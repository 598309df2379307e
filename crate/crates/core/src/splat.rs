//! Isotropic Gaussian splats and front-to-back alpha compositing.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{Frame, Image, Intrinsics, VOID};

/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    /// World-frame center, meters.
    pub position: [f64; 3],
    /// Isotropic radius (standard deviation), meters.
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian {
    pub fn new(position: Vector3<f64>, radius: f64, opacity: f64, color: [f64; 3]) -> Result<Self> {
        let g = Gaussian { position: position.into(), radius, opacity, color };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.position.iter().all(|v| v.is_finite())
            && self.radius > 0.0
            && self.radius.is_finite()
            && (0.0..=1.0).contains(&self.opacity)
            && self.color.iter().all(|c| (0.0..=1.0).contains(c));
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid gaussian {self:?}")))
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianMap {
    pub fn new(gaussians: Vec<Gaussian>) -> Result<Self> {
        for g in &gaussians {
            g.validate()?;
        }
        Ok(GaussianMap { gaussians })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Gaussian>) {
        self.gaussians.extend(more);
    }
}

/// A Gaussian in image space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Pixel coordinates of the center.
    pub mean: [f64; 2],
    /// Radius in pixels.
    pub radius_px: f64,
    /// Camera-space depth.
    pub depth: f64,
    /// Camera-space center.
    pub camera: Vector3<f64>,
}

/// `None` when the Gaussian is behind the near plane.
pub fn project_gaussian(g: &Gaussian, pose: &Pose, k: &Intrinsics) -> Option<Projection> {
    project_with(g, &pose.rotation(), &pose.translation(), k)
}

fn project_with(g: &Gaussian, r: &Matrix3<f64>, t: &Vector3<f64>, k: &Intrinsics) -> Option<Projection> {
    let xc = r * g.center() + t;
    let d = xc.z;
    if !(d > NEAR_PLANE) {
        return None;
    }
    Some(Projection {
        mean: [k.fx * xc.x / d + k.cx, k.fy * xc.y / d + k.cy],
        radius_px: k.focal() * g.radius / d,
        depth: d,
        camera: xc,
    })
}

/// Truncation controls for the rasterizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Support of each splat, in multiples of its pixel radius.
    pub support_sigmas: f64,
    /// Compositing at a pixel stops once transmittance drops below this.
    pub min_transmittance: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        // Truncating at 3 radii drops at most exp(-4.5) of a splat's peak opacity.
        RenderSettings { support_sigmas: 3.0, min_transmittance: 1e-4 }
    }
}

impl RenderSettings {
    /// No truncation at all. The rendered images are then smooth in the pose,
    /// which finite-difference checks need.
    pub fn exact() -> Self {
        RenderSettings { support_sigmas: f64::INFINITY, min_transmittance: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image,
    /// Alpha-composited depth, `sum_i w_i d_i`; VOID where nothing was hit.
    pub depth: Image,
    /// Accumulated opacity `sum_i w_i`.
    pub coverage: Image,
}

impl RenderOutput {
    /// Depth divided by coverage where coverage is at least `min_coverage`,
    /// VOID elsewhere.
    pub fn normalized_depth(&self, min_coverage: f64) -> Image {
        let mut out = self.depth.clone();
        for (d, &c) in out.data_mut().iter_mut().zip(self.coverage.data()) {
            *d = if c >= min_coverage && c > 0.0 && *d != VOID { *d / c } else { VOID };
        }
        out
    }

    /// The render as a frame. Where coverage reaches `min_coverage`, color
    /// and depth are divided by coverage; elsewhere depth is VOID and color
    /// is left blended with the background.
    pub fn to_frame(&self, k: &Intrinsics, timestamp: f64, min_coverage: f64) -> Frame {
        let depth = self.normalized_depth(min_coverage);
        let valid: Vec<bool> = depth.data().iter().map(|&d| d != VOID).collect();
        let mut rgb = self.rgb.clone();
        for ((px, &ok), &c) in rgb.data_mut().chunks_exact_mut(3).zip(&valid).zip(self.coverage.data()) {
            if ok {
                px.iter_mut().for_each(|v| *v = (*v / c).min(1.0));
            }
        }
        Frame { timestamp, rgb, depth, valid, intrinsics: *k }
    }
}

/// Per-pixel record of the forward pass, enough to backpropagate.
#[derive(Debug, Clone)]
pub struct RenderTrace {
    /// Sorted projected Gaussians: (map index, projection).
    pub splats: Vec<(usize, Projection)>,
    /// For every pixel, the visited splats in front-to-back order as
    /// (slot in `splats`, opacity f at the pixel).
    pub pixels: Vec<Vec<(u32, f64)>>,
}

pub fn render(map: &GaussianMap, pose: &Pose, k: &Intrinsics) -> RenderOutput {
    render_with(map, pose, k, &RenderSettings::default())
}

pub fn render_with(map: &GaussianMap, pose: &Pose, k: &Intrinsics, settings: &RenderSettings) -> RenderOutput {
    rasterize(map, &pose.rotation(), &pose.translation(), k, settings, false).0
}

/// Renders with an arbitrary linear part `r`. Used with the raw quaternion
/// formula for derivative checks, where `r` need not be orthonormal.
pub fn render_affine(
    map: &GaussianMap,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> RenderOutput {
    rasterize(map, r, t, k, settings, false).0
}

pub fn render_traced(
    map: &GaussianMap,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &Intrinsics,
    settings: &RenderSettings,
) -> (RenderOutput, RenderTrace) {
    let (out, trace) = rasterize(map, r, t, k, settings, true);
    (out, trace.expect("trace requested"))
}

fn sort_key(a: &(usize, Projection), b: &(usize, Projection), map: &GaussianMap) -> std::cmp::Ordering {
    // Ties in depth are broken by the Gaussian's own parameters, so the
    // result never depends on the order of the input list.
    let (ga, gb) = (&map.gaussians[a.0], &map.gaussians[b.0]);
    a.1.depth
        .total_cmp(&b.1.depth)
        .then_with(|| {
            let ka = ga.position.iter().chain(&ga.color).chain([&ga.radius, &ga.opacity]);
            let kb = gb.position.iter().chain(&gb.color).chain([&gb.radius, &gb.opacity]);
            ka.zip(kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
}

fn rasterize(
    map: &GaussianMap,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &Intrinsics,
    settings: &RenderSettings,
    trace: bool,
) -> (RenderOutput, Option<RenderTrace>) {
    let (w, h) = (k.width, k.height);
    let mut splats: Vec<(usize, Projection)> = map
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| g.opacity > 0.0)
        .filter_map(|(i, g)| project_with(g, r, t, k).map(|p| (i, p)))
        .filter(|(_, p)| p.radius_px > 0.0 && p.radius_px.is_finite())
        .collect();
    splats.sort_by(|a, b| sort_key(a, b, map));

    let mut rgb = vec![0.0; w * h * 3];
    let mut depth = vec![0.0; w * h];
    let mut coverage = vec![0.0; w * h];
    let mut transmittance = vec![1.0f64; w * h];
    let mut pixels: Vec<Vec<(u32, f64)>> = if trace { vec![Vec::new(); w * h] } else { Vec::new() };

    for (slot, (gi, p)) in splats.iter().enumerate() {
        let g = &map.gaussians[*gi];
        let rho = p.radius_px;
        let reach = settings.support_sigmas * rho;
        let reach2 = reach * reach;
        let [mx, my] = p.mean;
        let (x0, x1, y0, y1) = if reach.is_finite() {
            let x0 = (mx - reach).ceil().max(0.0);
            let x1 = (mx + reach).floor().min((w - 1) as f64);
            let y0 = (my - reach).ceil().max(0.0);
            let y1 = (my + reach).floor().min((h - 1) as f64);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            (x0 as usize, x1 as usize, y0 as usize, y1 as usize)
        } else {
            (0, w - 1, 0, h - 1)
        };
        let inv = 1.0 / (2.0 * rho * rho);
        for y in y0..=y1 {
            let dy = y as f64 - my;
            for x in x0..=x1 {
                let idx = y * w + x;
                let tr = transmittance[idx];
                if tr < settings.min_transmittance {
                    continue;
                }
                let dx = x as f64 - mx;
                let q = dx * dx + dy * dy;
                if q > reach2 {
                    continue;
                }
                let f = g.opacity * (-q * inv).exp();
                let wgt = tr * f;
                rgb[idx * 3] += wgt * g.color[0];
                rgb[idx * 3 + 1] += wgt * g.color[1];
                rgb[idx * 3 + 2] += wgt * g.color[2];
                depth[idx] += wgt * p.depth;
                coverage[idx] += wgt;
                transmittance[idx] = tr * (1.0 - f);
                if trace {
                    pixels[idx].push((slot as u32, f));
                }
            }
        }
    }
    for (i, c) in coverage.iter_mut().enumerate() {
        if *c <= 0.0 {
            *c = 0.0;
            depth[i] = VOID;
        }
        *c = c.min(1.0);
    }
    for v in &mut rgb {
        *v = v.clamp(0.0, 1.0);
    }
    let out = RenderOutput {
        rgb: Image::from_vec(w, h, 3, rgb).expect("sized above"),
        depth: Image::from_vec(w, h, 1, depth).expect("sized above"),
        coverage: Image::from_vec(w, h, 1, coverage).expect("sized above"),
    };
    (out, trace.then_some(RenderTrace { splats, pixels }))
}

/// Loss weights and the coverage threshold that gates which rendered pixels
/// are trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_d: f64,
    /// Pixels count only where rendered coverage exceeds this.
    pub coverage_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_c: 0.5, lambda_d: 1.0, coverage_threshold: 0.5 }
    }
}

/// `lambda_c * sum (I_hat - I)^2 + lambda_d * sum (D_hat - D)^2`.
///
/// Both sums run over pixels with a valid observation whose rendered
/// coverage exceeds the threshold; the color sum covers all three channels.
/// `I_hat` and `D_hat` are the composited
/// color and depth divided by coverage, so a partially covered pixel is
/// neither darkened nor pulled toward the camera.
pub fn render_loss(out: &RenderOutput, obs: &Frame, weights: &LossWeights) -> f64 {
    let n = obs.valid.len();
    let (ri, oi) = (out.rgb.data(), obs.rgb.data());
    let (rd, od) = (out.depth.data(), obs.depth.data());
    let cov = out.coverage.data();
    let mut color = 0.0;
    let mut depth = 0.0;
    for p in 0..n {
        if !obs.valid[p] || !(cov[p] > weights.coverage_threshold) {
            continue;
        }
        if weights.lambda_c != 0.0 {
            for c in 0..3 {
                let e = ri[p * 3 + c] / cov[p] - oi[p * 3 + c];
                color += e * e;
            }
        }
        if weights.lambda_d != 0.0 {
            let e = rd[p] / cov[p] - od[p];
            depth += e * e;
        }
    }
    weights.lambda_c * color + weights.lambda_d * depth
}

/// Back-projects uncovered, depth-valid pixels on a `stride` grid into new
/// Gaussians. Existing Gaussians are untouched.
///
/// The radius is one grid step at the pixel's depth, so neighbouring splats
/// overlap and the added surface renders nearly opaque.
pub fn densify(
    map: &GaussianMap,
    frame: &Frame,
    pose: &Pose,
    coverage: &Image,
    tau: f64,
    stride: usize,
) -> GaussianMap {
    let k = &frame.intrinsics;
    let stride = stride.max(1);
    let c2w = pose.inverse();
    let mut out = map.clone();
    for y in (0..frame.height()).step_by(stride) {
        for x in (0..frame.width()).step_by(stride) {
            let idx = y * frame.width() + x;
            if !frame.valid[idx] || coverage.data()[idx] >= tau {
                continue;
            }
            let d = frame.depth.data()[idx];
            let xw = c2w.transform_point(&k.back_project(x as f64, y as f64, d));
            let px = frame.rgb.pixel(x, y);
            out.gaussians.push(Gaussian {
                position: xw.into(),
                radius: DENSIFY_RADIUS_SCALE * stride as f64 * d / k.focal(),
                opacity: DENSIFY_OPACITY,
                color: [px[0], px[1], px[2]],
            });
        }
    }
    out
}

/// Adjusts the color and ray depth of Gaussians `from..` so that the map
/// rendered at `pose` reproduces `frame` at the pixels they project to.
///
/// Each pass renders once and moves every adjusted Gaussian by its pixel's
/// residual (a Jacobi sweep). Colors stay in `[0, 1]`; radii scale with depth.
pub fn fit_seeded(map: &mut GaussianMap, from: usize, frame: &Frame, pose: &Pose, passes: usize, settings: &RenderSettings) {
    let k = &frame.intrinsics;
    let (w, h) = (frame.width(), frame.height());
    let c2w = pose.inverse();
    for _ in 0..passes {
        let out = render_with(map, pose, k, settings);
        for g in &mut map.gaussians[from..] {
            let xc = pose.transform_point(&g.center());
            if xc.z <= NEAR_PLANE {
                continue;
            }
            let (u, v) = k.project(&xc);
            let (x, y) = (u.round(), v.round());
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let idx = y as usize * w + x as usize;
            let cov = out.coverage.data()[idx];
            if cov <= 0.0 || !frame.valid[idx] {
                continue;
            }
            for (c, channel) in g.color.iter_mut().zip(0..) {
                let rendered = out.rgb.data()[idx * 3 + channel] / cov;
                *c = (*c + frame.rgb.data()[idx * 3 + channel] - rendered).clamp(0.0, 1.0);
            }
            let z = xc.z + frame.depth.data()[idx] - out.depth.data()[idx] / cov;
            if z > NEAR_PLANE {
                g.position = c2w.transform_point(&(xc * (z / xc.z))).into();
                g.radius *= z / xc.z;
            }
        }
    }
}

/// Opacity of Gaussians added by [`densify`].
pub const DENSIFY_OPACITY: f64 = 0.9;

/// Radius of Gaussians added by [`densify`], in grid steps at the pixel depth.
pub const DENSIFY_RADIUS_SCALE: f64 = 0.5;
