//! Browser bindings: orbit a procedural room, then corrupt the view.
//!
//! Every method returns RGBA bytes ready for `ImageData`.

use noisyslam::eval::psnr;
use noisyslam::perturb::depth::{apply_depth_perturb, DepthPerturbKind};
use noisyslam::perturb::rgb::{apply_rgb_perturb, RgbPerturbKind};
use noisyslam::perturb::SeverityLevel;
use noisyslam::scene::{make_room_scene, orbit_pose, render_observation};
use noisyslam::splat::GaussianMap;
use noisyslam::{Frame, Image, Intrinsics, RngStream, VOID};
use wasm_bindgen::prelude::*;

const WIDTH: usize = 160;
const HEIGHT: usize = 120;
const ORBIT_RADIUS: f64 = 1.0;
/// Depth shown as full white.
const FAR: f64 = 4.0;

#[wasm_bindgen]
pub struct Demo {
    map: GaussianMap,
    k: Intrinsics,
    view: Frame,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, gaussians: u32) -> Result<Demo, String> {
        let map = make_room_scene(seed as u64, gaussians as usize, 3.0).map_err(|e| e.to_string())?;
        let k = Intrinsics::new(120.0, 120.0, 79.5, 59.5, WIDTH, HEIGHT).map_err(|e| e.to_string())?;
        let view = render_observation(&map, &orbit_pose(ORBIT_RADIUS, 0.0), &k, 0.0);
        Ok(Demo { map, k, view })
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        WIDTH as u32
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        HEIGHT as u32
    }

    /// Moves the camera to `theta` radians around the orbit and returns the colour view.
    pub fn render(&mut self, theta: f64) -> Vec<u8> {
        self.view = render_observation(&self.map, &orbit_pose(ORBIT_RADIUS, theta), &self.k, 0.0);
        rgba_from_rgb(&self.view.rgb)
    }

    /// Current depth, near dark and far bright, missing pixels red.
    pub fn depth(&self) -> Vec<u8> {
        rgba_from_depth(&self.view)
    }

    /// The current view under one colour corruption.
    pub fn perturb_rgb(&self, kind: &str, level: u8, seed: u32) -> Result<Perturbed, String> {
        let kind: RgbPerturbKind = kind.parse().map_err(|e: noisyslam::Error| e.to_string())?;
        let level = SeverityLevel::new(level).map_err(|e| e.to_string())?;
        let out = apply_rgb_perturb(&self.view.rgb, kind, level, RngStream::new(seed as u64, 0, 0)).map_err(|e| e.to_string())?;
        let score = psnr(&self.view.rgb, &out).map_err(|e| e.to_string())?;
        Ok(Perturbed { pixels: rgba_from_rgb(&out), score })
    }

    /// The current depth under one depth corruption; the score is the
    /// fraction of pixels still valid.
    pub fn perturb_depth(&self, kind: &str, level: u8, seed: u32) -> Result<Perturbed, String> {
        let kind: DepthPerturbKind = kind.parse().map_err(|e: noisyslam::Error| e.to_string())?;
        let level = SeverityLevel::new(level).map_err(|e| e.to_string())?;
        let out = apply_depth_perturb(&self.view, kind, level, RngStream::new(seed as u64, 0, 0)).map_err(|e| e.to_string())?;
        let score = out.valid_count() as f64 / (WIDTH * HEIGHT) as f64;
        Ok(Perturbed { pixels: rgba_from_depth(&out), score })
    }
}

/// Pixels plus one number describing them.
#[wasm_bindgen]
pub struct Perturbed {
    pixels: Vec<u8>,
    score: f64,
}

#[wasm_bindgen]
impl Perturbed {
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn score(&self) -> f64 {
        self.score
    }
}

/// Comma-separated colour corruption names.
#[wasm_bindgen]
pub fn rgb_kinds() -> String {
    RgbPerturbKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

/// Comma-separated depth corruption names.
#[wasm_bindgen]
pub fn depth_kinds() -> String {
    DepthPerturbKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

fn rgba_from_rgb(img: &Image) -> Vec<u8> {
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    img.data().chunks_exact(3).flat_map(|p| [byte(p[0]), byte(p[1]), byte(p[2]), 255]).collect()
}

fn rgba_from_depth(frame: &Frame) -> Vec<u8> {
    frame
        .depth
        .data()
        .iter()
        .zip(&frame.valid)
        .flat_map(|(&d, &ok)| {
            if !ok || d == VOID {
                [200, 30, 30, 255]
            } else {
                let g = ((d / FAR).clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g, 255]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Demo {
        Demo::new(3, 4000).unwrap()
    }

    #[test]
    fn buffers_match_canvas_size() {
        let mut d = demo();
        let n = (d.width() * d.height() * 4) as usize;
        assert_eq!(d.render(0.3).len(), n);
        assert_eq!(d.depth().len(), n);
        assert_eq!(d.perturb_rgb("fog", 2, 1).unwrap().pixels().len(), n);
        assert_eq!(d.perturb_depth("range_clipping", 2, 1).unwrap().pixels().len(), n);
    }

    #[test]
    fn same_seed_same_pixels() {
        let d = demo();
        let a = d.perturb_rgb("gaussian_noise", 3, 9).unwrap();
        let b = d.perturb_rgb("gaussian_noise", 3, 9).unwrap();
        let c = d.perturb_rgb("gaussian_noise", 3, 10).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn harsher_noise_scores_lower() {
        let d = demo();
        let mild = d.perturb_rgb("gaussian_noise", 1, 0).unwrap().score();
        let harsh = d.perturb_rgb("gaussian_noise", 5, 0).unwrap().score();
        assert!(harsh < mild, "{harsh} vs {mild}");
    }

    #[test]
    fn missing_depth_lowers_valid_fraction() {
        let d = demo();
        let before = d.view.valid_count() as f64 / (WIDTH * HEIGHT) as f64;
        let after = d.perturb_depth("random_missing", 5, 0).unwrap().score();
        assert!(after < before);
    }

    #[test]
    fn bad_inputs_are_reported() {
        let d = demo();
        assert!(d.perturb_rgb("sepia", 1, 0).is_err());
        assert!(d.perturb_rgb("fog", 6, 0).is_err());
        assert!(d.perturb_depth("fog", 1, 0).is_err());
    }

    #[test]
    fn kind_lists_parse_back() {
        for name in rgb_kinds().split(',') {
            assert!(name.parse::<RgbPerturbKind>().is_ok(), "{name}");
        }
        assert_eq!(depth_kinds().split(',').count(), 4);
    }
}
