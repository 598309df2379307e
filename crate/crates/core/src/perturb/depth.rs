//! Depth sensor corruptions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::filters;
use super::SeverityLevel;
use crate::error::{Error, Result};
use crate::image::{Frame, Image, VOID};
use crate::rng::RngStream;

/// Smallest depth produced by additive noise, so valid pixels stay valid.
pub const MIN_NOISY_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPerturbKind {
    GaussianNoise,
    EdgeErosion,
    RandomMissing,
    RangeClipping,
}

impl DepthPerturbKind {
    pub const ALL: [DepthPerturbKind; 4] = [
        Self::GaussianNoise,
        Self::EdgeErosion,
        Self::RandomMissing,
        Self::RangeClipping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::EdgeErosion => "edge_erosion",
            Self::RandomMissing => "random_missing",
            Self::RangeClipping => "range_clipping",
        }
    }
}

impl fmt::Display for DepthPerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DepthPerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "gaussian" | "noise" => "gaussian_noise",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::invalid(format!("unknown depth perturbation '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthParams {
    GaussianNoise { scale: f64 },
    EdgeErosion { rate: f64 },
    /// Missing rate in percent, as tabulated.
    RandomMissing { percent: f64 },
    RangeClipping { min: f64, max: f64 },
}

impl DepthParams {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            DepthParams::GaussianNoise { scale } => vec![scale],
            DepthParams::EdgeErosion { rate } => vec![rate],
            DepthParams::RandomMissing { percent } => vec![percent],
            DepthParams::RangeClipping { min, max } => vec![min, max],
        }
    }
}

pub fn depth_perturb_params(kind: DepthPerturbKind, level: SeverityLevel) -> DepthParams {
    let i = level.index();
    match kind {
        DepthPerturbKind::GaussianNoise => DepthParams::GaussianNoise { scale: [0.1, 0.2, 0.3, 0.4, 0.5][i] },
        DepthPerturbKind::EdgeErosion => DepthParams::EdgeErosion { rate: [0.015, 0.020, 0.025, 0.03, 0.035][i] },
        DepthPerturbKind::RandomMissing => DepthParams::RandomMissing { percent: [10.0, 15.0, 20.0, 25.0, 30.0][i] },
        DepthPerturbKind::RangeClipping => {
            let rows = [(0.2, 4.4), (0.3, 4.2), (0.4, 4.0), (0.5, 3.8), (0.6, 3.6)];
            DepthParams::RangeClipping { min: rows[i].0, max: rows[i].1 }
        }
    }
}

pub fn apply_depth_perturb(frame: &Frame, kind: DepthPerturbKind, level: SeverityLevel, rng: RngStream) -> Result<Frame> {
    apply_depth_with_params(frame, &depth_perturb_params(kind, level), rng)
}

pub fn apply_depth_with_params(frame: &Frame, params: &DepthParams, stream: RngStream) -> Result<Frame> {
    let depth = &frame.depth;
    let (w, h) = (depth.width(), depth.height());
    let mut rng = stream.rng();
    let out = match *params {
        DepthParams::GaussianNoise { scale } => {
            if !(scale >= 0.0) {
                return Err(Error::invalid("noise scale must be non-negative"));
            }
            depth.map(|d| {
                let n: f64 = rng.sample(StandardNormal);
                if d == VOID {
                    VOID
                } else {
                    (d + scale * n).max(MIN_NOISY_DEPTH)
                }
            })
        }
        DepthParams::RangeClipping { min, max } => depth.map(|d| if d < min || d > max { VOID } else { d }),
        DepthParams::EdgeErosion { rate } => {
            let drop = erosion_mask(depth, &frame.valid, rate);
            let mut out = depth.clone();
            for (v, m) in out.data_mut().iter_mut().zip(drop) {
                if m {
                    *v = VOID;
                }
            }
            out
        }
        DepthParams::RandomMissing { percent } => {
            let mask = missing_mask(w, h, percent / 100.0, &mut rng);
            let mut out = depth.clone();
            for (v, m) in out.data_mut().iter_mut().zip(mask) {
                if m {
                    *v = VOID;
                }
            }
            out
        }
    };
    Ok(frame.with_depth(out))
}

/// Pixels removed by edge erosion: the strongest `rate` fraction of nonzero
/// Sobel responses, grown by one pixel in every direction.
pub fn erosion_mask(depth: &Image, valid: &[bool], rate: f64) -> Vec<bool> {
    let (w, h) = (depth.width(), depth.height());
    let mag = filters::sobel_magnitude(depth);
    let full_support = |x: usize, y: usize| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return false;
        }
        (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| valid[yy * w + xx]))
    };
    let mut responses = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let m = mag.get(x, y, 0);
            if m > 0.0 && full_support(x, y) {
                responses.push(m);
            }
        }
    }
    let mut out = vec![false; w * h];
    if responses.is_empty() || rate <= 0.0 {
        return out;
    }
    responses.sort_by(f64::total_cmp);
    let q = 1.0 - rate.min(1.0);
    let idx = ((q * (responses.len() - 1) as f64).round() as usize).min(responses.len() - 1);
    let threshold = responses[idx];
    let mut seeds = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = mag.get(x, y, 0);
            seeds[y * w + x] = m > 0.0 && m >= threshold && full_support(x, y);
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !seeds[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}

/// Union of random rectangles with sides in `[8, 64]`, grown until it covers
/// at least `rate` of the image.
pub fn missing_mask(w: usize, h: usize, rate: f64, rng: &mut impl Rng) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    let target = (rate.clamp(0.0, 1.0) * (w * h) as f64).ceil() as usize;
    let mut covered = 0usize;
    let mut guard = 0;
    while covered < target && guard < 1_000_000 {
        guard += 1;
        let pw = rng.random_range(8..=64usize).min(w);
        let ph = rng.random_range(8..=64usize).min(h);
        let x0 = rng.random_range(0..=w - pw);
        let y0 = rng.random_range(0..=h - ph);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let m = &mut mask[y * w + x];
                if !*m {
                    *m = true;
                    covered += 1;
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Intrinsics;

    fn level(l: u8) -> SeverityLevel {
        SeverityLevel::new(l).unwrap()
    }

    fn frame_from(depth: Image) -> Frame {
        let (w, h) = (depth.width(), depth.height());
        let k = Intrinsics::new(50.0, 50.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        Frame::new(0.0, Image::filled(w, h, 3, 0.5), depth, k).unwrap()
    }

    fn stepped(w: usize, h: usize) -> Frame {
        frame_from(Image::from_fn(w, h, 1, |x, y, _| {
            if (x / 10 + y / 7) % 2 == 0 {
                1.0
            } else {
                2.5
            }
        }))
    }

    #[test]
    fn param_examples() {
        assert_eq!(depth_perturb_params(DepthPerturbKind::GaussianNoise, level(2)).values(), vec![0.2]);
        assert_eq!(depth_perturb_params(DepthPerturbKind::EdgeErosion, level(5)).values(), vec![0.035]);
        assert_eq!(depth_perturb_params(DepthPerturbKind::RangeClipping, level(1)).values(), vec![0.2, 4.4]);
    }

    #[test]
    fn range_clipping_level3() {
        let f = frame_from(Image::from_vec(3, 1, 1, vec![0.3, 2.0, 4.5]).unwrap());
        let out = apply_depth_perturb(&f, DepthPerturbKind::RangeClipping, level(3), RngStream::new(0, 0, 0)).unwrap();
        assert_eq!(out.depth.data(), &[VOID, 2.0, VOID]);
        assert_eq!(out.valid, vec![false, true, false]);
    }

    #[test]
    fn erosion_leaves_constant_depth() {
        let f = frame_from(Image::filled(30, 20, 1, 1.7));
        let out = apply_depth_perturb(&f, DepthPerturbKind::EdgeErosion, level(5), RngStream::new(0, 0, 0)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn erosion_hits_edges_only() {
        let f = stepped(60, 40);
        let out = apply_depth_perturb(&f, DepthPerturbKind::EdgeErosion, level(3), RngStream::new(0, 0, 0)).unwrap();
        let removed = f.valid_count() - out.valid_count();
        assert!(removed > 0);
        for (i, ok) in out.valid.iter().enumerate() {
            if !ok {
                let (x, y) = (i % 60, i / 60);
                // within two pixels of a depth discontinuity
                let near_edge = (x.saturating_sub(2)..=(x + 2).min(59))
                    .any(|xx| (y.saturating_sub(2)..=(y + 2).min(39)).any(|yy| f.depth.get(xx, yy, 0) != f.depth.get(x, y, 0)));
                assert!(near_edge, "({x},{y})");
            }
        }
    }

    #[test]
    fn random_missing_level3_fraction() {
        let f = frame_from(Image::filled(640, 480, 1, 2.0));
        let out = apply_depth_perturb(&f, DepthPerturbKind::RandomMissing, level(3), RngStream::new(9, 0, 0)).unwrap();
        let frac = 1.0 - out.valid_count() as f64 / (640.0 * 480.0);
        assert!((frac - 0.20).abs() <= 0.03, "{frac}");
    }

    #[test]
    fn zero_noise_is_identity() {
        let f = stepped(20, 20);
        let out = apply_depth_with_params(&f, &DepthParams::GaussianNoise { scale: 0.0 }, RngStream::new(1, 0, 0)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("holes".parse::<DepthPerturbKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn holey(seed: u64) -> Frame {
            let mut rng = RngStream::new(seed, 0, 0).rng();
            frame_from(Image::from_fn(32, 24, 1, |_, _, _| {
                if rng.random::<f64>() < 0.1 {
                    VOID
                } else {
                    rng.random_range(0.1..5.0)
                }
            }))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn missing_never_becomes_present(seed in 0u64..1000, l in 1u8..=5, k in 0usize..3) {
                let kind = [DepthPerturbKind::EdgeErosion, DepthPerturbKind::RandomMissing, DepthPerturbKind::RangeClipping][k];
                let f = holey(seed);
                let out = apply_depth_perturb(&f, kind, level(l), RngStream::new(seed, 1, 2)).unwrap();
                for (a, b) in f.valid.iter().zip(&out.valid) {
                    prop_assert!(*a || !*b);
                }
                prop_assert!(out.validate().is_ok());
            }

            #[test]
            fn noise_preserves_mask(seed in 0u64..1000, l in 1u8..=5) {
                let f = holey(seed);
                let out = apply_depth_perturb(&f, DepthPerturbKind::GaussianNoise, level(l), RngStream::new(seed, 0, 3)).unwrap();
                prop_assert_eq!(&out.valid, &f.valid);
                prop_assert!(out.depth.data().iter().zip(&out.valid).all(|(d, v)| !*v || *d > 0.0));
            }
        }
    }
}
