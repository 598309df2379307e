//! 2D correspondences between a rendered and an observed frame.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::image::{Frame, Image};
use crate::perturb::filters::{gaussian_blur, sobel_gradients};
use crate::rng::RngStream;
use crate::splat::GaussianMap;

/// A pixel in the rendered image paired with a pixel in the observed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match2D {
    pub u_r: f64,
    pub v_r: f64,
    pub u_o: f64,
    pub v_o: f64,
    pub confidence: f64,
}

/// What a matcher may know beyond the two images.
pub struct MatchContext<'a> {
    pub map: &'a GaussianMap,
    /// Pose the rendered frame was produced at.
    pub render_pose: &'a Pose,
    pub frame_index: usize,
    /// Distinguishes repeated calls within a frame.
    pub round: u32,
}

pub trait Matcher {
    fn find_matches(&self, rendered: &Frame, observed: &Frame, ctx: &MatchContext) -> Vec<Match2D>;
}

/// Synthetic matches from known poses: map centers projected into both views.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatcher {
    /// Ground-truth world-to-camera pose of every observed frame.
    pub poses: Vec<Pose>,
    pub sigma_px: f64,
    /// Share of matches whose observed end is replaced by a random pixel.
    pub outlier_fraction: f64,
    pub max_matches: usize,
    pub seed: u64,
}

/// Relative depth disagreement above which a projected center counts as occluded.
const VISIBILITY_TOLERANCE: f64 = 0.05;

fn visible_at(frame: &Frame, u: f64, v: f64, z: f64) -> bool {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return false;
    }
    let (x, y) = (u.round() as usize, v.round() as usize);
    let idx = y * frame.width() + x;
    frame.valid[idx] && (frame.depth.data()[idx] - z).abs() <= VISIBILITY_TOLERANCE * z
}

impl Matcher for OracleMatcher {
    fn find_matches(&self, rendered: &Frame, observed: &Frame, ctx: &MatchContext) -> Vec<Match2D> {
        let Some(truth) = self.poses.get(ctx.frame_index) else {
            return Vec::new();
        };
        let k = &rendered.intrinsics;
        let mut rng = RngStream::new(self.seed, ctx.frame_index as u64, ctx.round as u64).rng();
        let n = ctx.map.len();
        if n == 0 || self.max_matches == 0 {
            return Vec::new();
        }
        let attempts = (self.max_matches * 20).min(n.max(self.max_matches));
        let mut out = Vec::with_capacity(self.max_matches);
        for _ in 0..attempts {
            if out.len() >= self.max_matches {
                break;
            }
            let g = &ctx.map.gaussians[rng.random_range(0..n)];
            let x = g.center();
            let xr = ctx.render_pose.transform_point(&x);
            let xo = truth.transform_point(&x);
            if xr.z <= 0.0 || xo.z <= 0.0 {
                continue;
            }
            let (ur, vr) = k.project(&xr);
            let (uo, vo) = k.project(&xo);
            if !visible_at(rendered, ur, vr, xr.z) || !visible_at(observed, uo, vo, xo.z) {
                continue;
            }
            let (mut uo, mut vo) = (
                uo + self.sigma_px * rng.sample::<f64, _>(StandardNormal),
                vo + self.sigma_px * rng.sample::<f64, _>(StandardNormal),
            );
            if rng.random::<f64>() < self.outlier_fraction {
                uo = rng.random_range(0.0..(k.width - 1) as f64);
                vo = rng.random_range(0.0..(k.height - 1) as f64);
            }
            let clamp = |v: f64, hi: usize| v.clamp(0.0, (hi - 1) as f64);
            out.push(Match2D {
                u_r: ur,
                v_r: vr,
                u_o: clamp(uo, k.width),
                v_o: clamp(vo, k.height),
                confidence: 1.0,
            });
        }
        out
    }
}

/// Corner detection plus normalized cross-correlation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchMatcher {
    /// Half-width of the correlation window (5 gives 11x11 patches).
    pub half_window: usize,
    pub search_radius: usize,
    pub max_corners: usize,
    /// Harris responses below this fraction of the strongest are discarded.
    pub quality: f64,
    pub harris_k: f64,
    pub smoothing_sigma: f64,
}

impl Default for PatchMatcher {
    fn default() -> Self {
        PatchMatcher { half_window: 5, search_radius: 24, max_corners: 300, quality: 1e-3, harris_k: 0.04, smoothing_sigma: 1.0 }
    }
}

impl PatchMatcher {
    /// Harris corners as `(x, y)`, strongest first, after 3x3 non-maximum
    /// suppression and excluding a border of one window.
    pub fn corners(&self, gray: &Image) -> Vec<(usize, usize)> {
        let (w, h) = (gray.width(), gray.height());
        let (gx, gy) = sobel_gradients(gray);
        let prod = |a: &Image, b: &Image| {
            Image::from_vec(w, h, 1, a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()).expect("same shape")
        };
        let sxx = gaussian_blur(&prod(&gx, &gx), self.smoothing_sigma);
        let syy = gaussian_blur(&prod(&gy, &gy), self.smoothing_sigma);
        let sxy = gaussian_blur(&prod(&gx, &gy), self.smoothing_sigma);
        let resp: Vec<f64> = (0..w * h)
            .map(|i| {
                let (a, b, c) = (sxx.data()[i], syy.data()[i], sxy.data()[i]);
                a * b - c * c - self.harris_k * (a + b) * (a + b)
            })
            .collect();
        let peak = resp.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Vec::new();
        }
        let b = self.half_window;
        let mut found = Vec::new();
        for y in b.max(1)..h.saturating_sub(b.max(1)) {
            for x in b.max(1)..w.saturating_sub(b.max(1)) {
                let r = resp[y * w + x];
                if r < self.quality * peak {
                    continue;
                }
                let is_max = (y - 1..=y + 1)
                    .flat_map(|yy| (x - 1..=x + 1).map(move |xx| (xx, yy)))
                    .all(|(xx, yy)| (xx, yy) == (x, y) || resp[yy * w + xx] < r || (resp[yy * w + xx] == r && (yy, xx) > (y, x)));
                if is_max {
                    found.push((r, x, y));
                }
            }
        }
        found.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        found.truncate(self.max_corners);
        found.into_iter().map(|(_, x, y)| (x, y)).collect()
    }

    fn best_in(&self, src: &Image, sx: usize, sy: usize, dst: &Image, cx: usize, cy: usize) -> Option<(usize, usize, f64)> {
        let b = self.half_window;
        let (w, h) = (dst.width(), dst.height());
        if w <= 2 * b || h <= 2 * b {
            return None;
        }
        let r = self.search_radius;
        let mut best: Option<(usize, usize, f64)> = None;
        for y in cy.saturating_sub(r).max(b)..=(cy + r).min(h - 1 - b) {
            for x in cx.saturating_sub(r).max(b)..=(cx + r).min(w - 1 - b) {
                if let Some(s) = zncc(src, sx, sy, dst, x, y, b) {
                    if best.is_none_or(|(_, _, bs)| s > bs) {
                        best = Some((x, y, s));
                    }
                }
            }
        }
        best
    }
}

/// Zero-mean normalized cross-correlation of two square windows; `None`
/// when either window is flat.
pub fn zncc(a: &Image, ax: usize, ay: usize, b: &Image, bx: usize, by: usize, half: usize) -> Option<f64> {
    let n = ((2 * half + 1) * (2 * half + 1)) as f64;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dy in 0..=2 * half {
        for dx in 0..=2 * half {
            let va = a.get(ax + dx - half, ay + dy - half, 0);
            let vb = b.get(bx + dx - half, by + dy - half, 0);
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
        }
    }
    let cov = sab - sa * sb / n;
    let va = saa - sa * sa / n;
    let vb = sbb - sb * sb / n;
    if va <= 1e-12 || vb <= 1e-12 {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

impl Matcher for PatchMatcher {
    fn find_matches(&self, rendered: &Frame, observed: &Frame, _ctx: &MatchContext) -> Vec<Match2D> {
        let gr = rendered.rgb.to_gray();
        let go = observed.rgb.to_gray();
        let mut out = Vec::new();
        for (x, y) in self.corners(&gr) {
            let Some((ox, oy, score)) = self.best_in(&gr, x, y, &go, x, y) else {
                continue;
            };
            let Some((bx, by, _)) = self.best_in(&go, ox, oy, &gr, ox, oy) else {
                continue;
            };
            if (bx, by) != (x, y) {
                continue;
            }
            out.push(Match2D {
                u_r: x as f64,
                v_r: y as f64,
                u_o: ox as f64,
                v_o: oy as f64,
                confidence: score.max(0.0),
            });
        }
        out
    }
}

/// Matcher selection as it appears in tracker configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatcherConfig {
    /// Needs ground-truth poses at run time.
    Oracle {
        sigma_px: f64,
        outlier_fraction: f64,
        max_matches: usize,
        seed: u64,
    },
    Patch(PatchMatcher),
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig::Patch(PatchMatcher::default())
    }
}

impl MatcherConfig {
    /// The oracle variant with 1 px noise and no outliers.
    pub fn oracle() -> Self {
        MatcherConfig::Oracle { sigma_px: 1.0, outlier_fraction: 0.0, max_matches: 300, seed: 0 }
    }

    /// Builds the matcher. `gt_poses` are needed only by the oracle.
    pub fn build(&self, gt_poses: Option<&[Pose]>) -> crate::Result<Box<dyn Matcher>> {
        Ok(match *self {
            MatcherConfig::Oracle { sigma_px, outlier_fraction, max_matches, seed } => {
                let poses = gt_poses
                    .ok_or_else(|| crate::Error::invalid("the oracle matcher needs a ground-truth trajectory"))?
                    .to_vec();
                Box::new(OracleMatcher { poses, sigma_px, outlier_fraction, max_matches, seed })
            }
            MatcherConfig::Patch(p) => Box::new(p),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_intrinsics, make_room_scene, orbit_pose};
    use crate::splat::render;

    fn shifted_frames() -> (Frame, Frame, GaussianMap, Pose, Pose) {
        let map = make_room_scene(7, 6000, 3.0).unwrap();
        let k = default_intrinsics();
        let a = orbit_pose(0.0, 0.0);
        let b = orbit_pose(0.0, 3f64.to_radians());
        let fa = render(&map, &a, &k).to_frame(&k, 0.0, 0.5);
        let fb = render(&map, &b, &k).to_frame(&k, 0.0, 0.5);
        (fa, fb, map, a, b)
    }

    #[test]
    fn zncc_of_window_with_itself() {
        let img = Image::from_fn(20, 20, 1, |x, y, _| ((x * 7 + y * 3) % 11) as f64);
        assert!((zncc(&img, 10, 10, &img, 10, 10, 3).unwrap() - 1.0).abs() < 1e-12);
        let flat = Image::filled(20, 20, 1, 0.5);
        assert!(zncc(&flat, 10, 10, &img, 10, 10, 3).is_none());
        let inv = img.map(|v| -v);
        assert!((zncc(&img, 10, 10, &inv, 10, 10, 3).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn corners_on_a_square() {
        let img = Image::from_fn(40, 40, 1, |x, y, _| if (12..28).contains(&x) && (12..28).contains(&y) { 1.0 } else { 0.0 });
        let c = PatchMatcher::default().corners(&img);
        assert!(c.len() >= 4);
        for (x, y) in c.iter().take(4) {
            let near = |v: usize| (v as i64 - 12).abs() <= 2 || (v as i64 - 27).abs() <= 2;
            assert!(near(*x) && near(*y), "corner at ({x}, {y})");
        }
    }

    #[test]
    fn oracle_matches_follow_the_motion() {
        let (fa, fb, map, a, b) = shifted_frames();
        let m = OracleMatcher { poses: vec![b], sigma_px: 0.0, outlier_fraction: 0.0, max_matches: 100, seed: 1 };
        let ctx = MatchContext { map: &map, render_pose: &a, frame_index: 0, round: 0 };
        let found = m.find_matches(&fa, &fb, &ctx);
        assert!(found.len() >= 50);
        let k = fa.intrinsics;
        for mt in &found {
            let z = fa.depth.bilinear(mt.u_r, mt.v_r, 0).unwrap();
            let xw = a.inverse().transform_point(&k.back_project(mt.u_r, mt.v_r, z));
            let (u, v) = k.project(&b.transform_point(&xw));
            assert!((u - mt.u_o).hypot(v - mt.v_o) < 1.0);
        }
        assert_eq!(found, m.find_matches(&fa, &fb, &ctx));
    }

    #[test]
    fn patch_matches_on_a_small_rotation() {
        let (fa, fb, map, a, b) = shifted_frames();
        let ctx = MatchContext { map: &map, render_pose: &a, frame_index: 0, round: 0 };
        let found = PatchMatcher::default().find_matches(&fa, &fb, &ctx);
        assert!(found.len() >= 20, "{} matches", found.len());
        let k = fa.intrinsics;
        let good = found
            .iter()
            .filter(|mt| {
                let z = fa.depth.bilinear(mt.u_r, mt.v_r, 0).unwrap_or(0.0);
                let xw = a.inverse().transform_point(&k.back_project(mt.u_r, mt.v_r, z));
                let (u, v) = k.project(&b.transform_point(&xw));
                (u - mt.u_o).hypot(v - mt.v_o) < 1.5
            })
            .count();
        assert!(good as f64 >= 0.8 * found.len() as f64, "{good} of {}", found.len());
    }

    #[test]
    fn missing_ground_truth_gives_no_matches() {
        let (fa, fb, map, a, _) = shifted_frames();
        let m = OracleMatcher { poses: vec![], sigma_px: 0.0, outlier_fraction: 0.0, max_matches: 100, seed: 1 };
        let ctx = MatchContext { map: &map, render_pose: &a, frame_index: 3, round: 0 };
        assert!(m.find_matches(&fa, &fb, &ctx).is_empty());
    }
}
