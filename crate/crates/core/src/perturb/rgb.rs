//! RGB imaging corruptions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::filters;
use super::{PerturbMode, SeverityLevel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RgbCategory {
    Noise,
    Blur,
    Environment,
    PostProcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RgbPerturbKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    GaussianBlur,
    Snow,
    Frost,
    Fog,
    Spatter,
    Brightness,
    Contrast,
    Jpeg,
    Pixelate,
}

impl RgbPerturbKind {
    pub const ALL: [RgbPerturbKind; 16] = [
        Self::GaussianNoise,
        Self::ShotNoise,
        Self::ImpulseNoise,
        Self::SpeckleNoise,
        Self::DefocusBlur,
        Self::GlassBlur,
        Self::MotionBlur,
        Self::GaussianBlur,
        Self::Snow,
        Self::Frost,
        Self::Fog,
        Self::Spatter,
        Self::Brightness,
        Self::Contrast,
        Self::Jpeg,
        Self::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussianNoise => "gaussian_noise",
            Self::ShotNoise => "shot_noise",
            Self::ImpulseNoise => "impulse_noise",
            Self::SpeckleNoise => "speckle_noise",
            Self::DefocusBlur => "defocus_blur",
            Self::GlassBlur => "glass_blur",
            Self::MotionBlur => "motion_blur",
            Self::GaussianBlur => "gaussian_blur",
            Self::Snow => "snow",
            Self::Frost => "frost",
            Self::Fog => "fog",
            Self::Spatter => "spatter",
            Self::Brightness => "brightness",
            Self::Contrast => "contrast",
            Self::Jpeg => "jpeg",
            Self::Pixelate => "pixelate",
        }
    }

    pub fn category(self) -> RgbCategory {
        use RgbPerturbKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise | SpeckleNoise => RgbCategory::Noise,
            DefocusBlur | GlassBlur | MotionBlur | GaussianBlur => RgbCategory::Blur,
            Snow | Frost | Fog | Spatter => RgbCategory::Environment,
            Brightness | Contrast | Jpeg | Pixelate => RgbCategory::PostProcess,
        }
    }
}

impl fmt::Display for RgbPerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RgbPerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "gaussian" => "gaussian_noise",
            "shot" => "shot_noise",
            "impulse" => "impulse_noise",
            "speckle" => "speckle_noise",
            "defocus" => "defocus_blur",
            "glass" => "glass_blur",
            "motion" => "motion_blur",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::invalid(format!("unknown rgb perturbation '{s}'")))
    }
}

/// Parameters of one severity row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RgbParams {
    GaussianNoise { scale: f64 },
    ShotNoise { photons: f64 },
    ImpulseNoise { amount: f64 },
    SpeckleNoise { scale: f64 },
    DefocusBlur { radius: f64, alias_blur: f64 },
    GlassBlur { sigma: f64, max_delta: f64, iterations: f64 },
    MotionBlur { radius: f64, sigma: f64 },
    GaussianBlur { sigma: f64 },
    Snow {
        mean: f64,
        std: f64,
        scale: f64,
        threshold: f64,
        blur_radius: f64,
        blur_std: f64,
        blend: f64,
    },
    Frost { intensity: f64, texture: f64 },
    Fog { thickness: f64, smoothness: f64 },
    Spatter {
        mean: f64,
        std: f64,
        sigma: f64,
        threshold: f64,
        scale: f64,
        mode: f64,
    },
    Brightness { ratio: f64 },
    Contrast { beta: f64 },
    Jpeg { quality: f64 },
    Pixelate { factor: f64 },
}

impl RgbParams {
    /// The row values in table column order.
    pub fn values(&self) -> Vec<f64> {
        use RgbParams::*;
        match *self {
            GaussianNoise { scale } | SpeckleNoise { scale } => vec![scale],
            ShotNoise { photons } => vec![photons],
            ImpulseNoise { amount } => vec![amount],
            DefocusBlur { radius, alias_blur } => vec![radius, alias_blur],
            GlassBlur { sigma, max_delta, iterations } => vec![sigma, max_delta, iterations],
            MotionBlur { radius, sigma } => vec![radius, sigma],
            GaussianBlur { sigma } => vec![sigma],
            Snow { mean, std, scale, threshold, blur_radius, blur_std, blend } => {
                vec![mean, std, scale, threshold, blur_radius, blur_std, blend]
            }
            Frost { intensity, texture } => vec![intensity, texture],
            Fog { thickness, smoothness } => vec![thickness, smoothness],
            Spatter { mean, std, sigma, threshold, scale, mode } => vec![mean, std, sigma, threshold, scale, mode],
            Brightness { ratio } => vec![ratio],
            Contrast { beta } => vec![beta],
            Jpeg { quality } => vec![quality],
            Pixelate { factor } => vec![factor],
        }
    }
}

/// Severity table for the RGB corruptions.
pub fn rgb_perturb_params(kind: RgbPerturbKind, level: SeverityLevel) -> RgbParams {
    use RgbParams as P;
    let i = level.index();
    match kind {
        RgbPerturbKind::Snow => {
            let rows = [
                [0.1, 0.3, 3.0, 0.5, 10.0, 4.0, 0.8],
                [0.2, 0.3, 2.0, 0.5, 12.0, 4.0, 0.7],
                [0.55, 0.3, 4.0, 0.9, 12.0, 8.0, 0.7],
                [0.55, 0.3, 4.5, 0.85, 12.0, 8.0, 0.65],
                [0.55, 0.3, 2.5, 0.85, 12.0, 12.0, 0.55],
            ];
            let r = rows[i];
            P::Snow {
                mean: r[0],
                std: r[1],
                scale: r[2],
                threshold: r[3],
                blur_radius: r[4],
                blur_std: r[5],
                blend: r[6],
            }
        }
        RgbPerturbKind::Frost => {
            let rows = [(1.00, 0.40), (0.80, 0.60), (0.70, 0.70), (0.65, 0.70), (0.60, 0.75)];
            P::Frost { intensity: rows[i].0, texture: rows[i].1 }
        }
        RgbPerturbKind::Fog => {
            let rows = [(1.5, 2.0), (2.0, 2.0), (2.5, 1.7), (2.5, 1.5), (3.0, 1.4)];
            P::Fog { thickness: rows[i].0, smoothness: rows[i].1 }
        }
        RgbPerturbKind::Spatter => {
            let rows = [
                [0.65, 0.3, 4.0, 0.69, 0.6, 0.0],
                [0.65, 0.3, 3.0, 0.68, 0.6, 0.0],
                [0.65, 0.3, 2.0, 0.68, 0.5, 0.0],
                [0.65, 0.3, 1.0, 0.65, 1.5, 1.0],
                [0.67, 0.4, 1.0, 0.65, 1.5, 1.0],
            ];
            let r = rows[i];
            P::Spatter { mean: r[0], std: r[1], sigma: r[2], threshold: r[3], scale: r[4], mode: r[5] }
        }
        RgbPerturbKind::DefocusBlur => {
            let rows = [(3.0, 0.1), (4.0, 0.5), (6.0, 0.5), (8.0, 0.5), (10.0, 0.5)];
            P::DefocusBlur { radius: rows[i].0, alias_blur: rows[i].1 }
        }
        RgbPerturbKind::GlassBlur => {
            let rows = [(0.7, 1.0, 2.0), (0.9, 2.0, 1.0), (1.0, 2.0, 3.0), (1.1, 3.0, 2.0), (1.5, 4.0, 2.0)];
            P::GlassBlur { sigma: rows[i].0, max_delta: rows[i].1, iterations: rows[i].2 }
        }
        RgbPerturbKind::MotionBlur => {
            let rows = [(10.0, 3.0), (15.0, 5.0), (15.0, 8.0), (15.0, 12.0), (20.0, 15.0)];
            P::MotionBlur { radius: rows[i].0, sigma: rows[i].1 }
        }
        RgbPerturbKind::GaussianBlur => P::GaussianBlur { sigma: [1.0, 2.0, 3.0, 4.0, 6.0][i] },
        RgbPerturbKind::GaussianNoise => P::GaussianNoise { scale: [0.08, 0.12, 0.18, 0.26, 0.38][i] },
        RgbPerturbKind::ShotNoise => P::ShotNoise { photons: [60.0, 25.0, 12.0, 5.0, 3.0][i] },
        RgbPerturbKind::ImpulseNoise => P::ImpulseNoise { amount: [0.03, 0.06, 0.09, 0.17, 0.27][i] },
        RgbPerturbKind::SpeckleNoise => P::SpeckleNoise { scale: [0.15, 0.2, 0.35, 0.45, 0.6][i] },
        RgbPerturbKind::Brightness => P::Brightness { ratio: [0.1, 0.2, 0.3, 0.4, 0.5][i] },
        RgbPerturbKind::Contrast => P::Contrast { beta: [0.40, 0.30, 0.20, 0.10, 0.05][i] },
        RgbPerturbKind::Jpeg => P::Jpeg { quality: [25.0, 18.0, 15.0, 10.0, 7.0][i] },
        RgbPerturbKind::Pixelate => P::Pixelate { factor: [0.60, 0.50, 0.40, 0.30, 0.25][i] },
    }
}

/// Applies a corruption in static mode.
pub fn apply_rgb_perturb(img: &Image, kind: RgbPerturbKind, level: SeverityLevel, rng: RngStream) -> Result<Image> {
    apply_rgb_perturb_mode(img, kind, level, PerturbMode::Static, rng)
}

pub fn apply_rgb_perturb_mode(
    img: &Image,
    kind: RgbPerturbKind,
    level: SeverityLevel,
    mode: PerturbMode,
    rng: RngStream,
) -> Result<Image> {
    apply_rgb_with_params(img, &rgb_perturb_params(kind, level), mode, rng)
}

/// Applies a corruption with explicit parameters. Output is clamped to `[0, 1]`.
pub fn apply_rgb_with_params(img: &Image, params: &RgbParams, mode: PerturbMode, stream: RngStream) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::invalid("rgb perturbation needs a 3-channel image"));
    }
    if img.len_pixels() == 0 {
        return Ok(img.clone());
    }
    let mut rng = stream.rng();
    let (w, h) = (img.width(), img.height());
    let out = match *params {
        RgbParams::GaussianNoise { scale } => img.map(|v| {
            let n: f64 = rng.sample(StandardNormal);
            v + scale * n
        }),
        RgbParams::SpeckleNoise { scale } => img.map(|v| {
            let n: f64 = rng.sample(StandardNormal);
            v * (1.0 + scale * n)
        }),
        RgbParams::ShotNoise { photons } => {
            if !(photons > 0.0) {
                return Err(Error::invalid("photon number must be positive"));
            }
            img.map(|v| {
                let lambda = (v * photons).max(0.0);
                // always draw, so the stream position does not depend on the data
                let u: f64 = rng.random();
                if lambda <= 0.0 {
                    return 0.0;
                }
                poisson_from_uniform(lambda, u, &mut rng) / photons
            })
        }
        RgbParams::ImpulseNoise { amount } => img.map(|v| {
            // With the same stream, the corrupted set at a larger amount contains
            // the one at a smaller amount.
            let u: f64 = rng.random();
            if u < amount * 0.5 {
                0.0
            } else if u > 1.0 - amount * 0.5 {
                1.0
            } else {
                v
            }
        }),
        RgbParams::GaussianBlur { sigma } => filters::gaussian_blur(img, sigma),
        RgbParams::DefocusBlur { radius, alias_blur } => {
            let (k, size) = filters::disk_kernel(radius, alias_blur);
            filters::convolve(img, &k, size)
        }
        RgbParams::GlassBlur { sigma, max_delta, iterations } => glass_blur(img, sigma, max_delta, iterations, &mut rng),
        RgbParams::MotionBlur { radius, sigma } => {
            let angle = match mode {
                PerturbMode::Static => std::f64::consts::FRAC_PI_4,
                PerturbMode::Dynamic => rng.random_range(0.0..std::f64::consts::TAU),
            };
            filters::motion_blur(img, radius, sigma, angle)
        }
        RgbParams::Snow { mean, std, scale, threshold, blur_radius, blur_std, blend } => {
            let mut layer = filters::normal_field(w, h, mean, std, &mut rng);
            layer = filters::clipped_zoom(&layer, scale);
            layer.data_mut().iter_mut().for_each(|v| {
                if *v < threshold {
                    *v = 0.0
                }
            });
            let angle = rng.random_range(-135.0f64..-45.0).to_radians();
            let layer = filters::motion_blur(&layer, blur_radius, blur_std, angle);
            let gray = img.to_gray();
            Image::from_fn(w, h, 3, |x, y, c| {
                let v = img.get(x, y, c);
                let whitened = v.max(gray.get(x, y, 0) * 1.5 + 0.5);
                let base = blend * v + (1.0 - blend) * whitened;
                base + layer.get(x, y, 0) + layer.get(w - 1 - x, h - 1 - y, 0)
            })
        }
        RgbParams::Frost { intensity, texture } => {
            let cell = (w.min(h) as f64 / 6.0).max(2.0);
            let tex = filters::perlin_texture(w, h, cell, 4, &mut rng);
            // icy tint: slightly blue-white
            let tint = [0.85, 0.92, 1.0];
            Image::from_fn(w, h, 3, |x, y, c| {
                let f = tex.get(x, y, 0);
                intensity * img.get(x, y, c) + texture * f * tint[c]
            })
        }
        RgbParams::Fog { thickness, smoothness } => {
            let field = filters::plasma_fractal(w, h, smoothness, &mut rng);
            Image::from_fn(w, h, 3, |x, y, c| {
                let a = thickness * field.get(x, y, 0);
                let alpha = a / (1.0 + a);
                (1.0 - alpha) * img.get(x, y, c) + alpha * 0.5
            })
        }
        RgbParams::Spatter { mean, std, sigma, threshold, scale, mode: kind } => {
            let raw = filters::normal_field(w, h, mean, std, &mut rng);
            let blurred = filters::gaussian_blur(&raw, sigma);
            // re-standardize so that sigma controls blob size, not contrast
            let n = blurred.len_pixels() as f64;
            let m = blurred.data().iter().sum::<f64>() / n;
            let sd = (blurred.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt().max(1e-12);
            let color = if kind >= 0.5 {
                [0.40, 0.27, 0.13]
            } else {
                [0.69, 0.93, 0.93]
            };
            Image::from_fn(w, h, 3, |x, y, c| {
                let l = mean + std * (blurred.get(x, y, 0) - m) / sd;
                let a = if l >= threshold {
                    (0.4 + scale * (l - threshold) / std).min(1.0)
                } else {
                    0.0
                };
                (1.0 - a) * img.get(x, y, c) + a * color[c]
            })
        }
        RgbParams::Brightness { ratio } => img.map(|v| v + ratio),
        RgbParams::Contrast { beta } => {
            let means = [img.mean_channel(0), img.mean_channel(1), img.mean_channel(2)];
            Image::from_fn(w, h, 3, |x, y, c| {
                let v = img.get(x, y, c);
                v + (beta - 1.0) * (v - means[c])
            })
        }
        RgbParams::Jpeg { quality } => jpeg_round_trip(img, quality)?,
        RgbParams::Pixelate { factor } => {
            let nw = ((w as f64 * factor).round() as usize).max(1);
            let nh = ((h as f64 * factor).round() as usize).max(1);
            filters::nearest_resize(&filters::box_resize(img, nw, nh), w, h)
        }
    };
    Ok(out.clamp01())
}

/// Poisson sample; the first uniform is supplied by the caller so that every
/// pixel consumes at least one draw.
fn poisson_from_uniform(lambda: f64, u: f64, rng: &mut impl Rng) -> f64 {
    if lambda < 30.0 {
        // inversion by sequential search
        let mut k = 0.0;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf && k < 1000.0 {
            k += 1.0;
            p *= lambda / k;
            cdf += p;
        }
        k
    } else {
        Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(lambda)
    }
}

fn glass_blur(img: &Image, sigma: f64, max_delta: f64, iterations: f64, rng: &mut impl Rng) -> Image {
    let (w, h) = (img.width(), img.height());
    let d = max_delta.round().max(0.0) as usize;
    let mut x = filters::gaussian_blur(img, sigma);
    if d > 0 && w > 2 * d && h > 2 * d {
        for _ in 0..iterations.round().max(0.0) as usize {
            for yy in (d..h - d).rev() {
                for xx in (d..w - d).rev() {
                    let dx = rng.random_range(-(d as i64)..d as i64) as isize;
                    let dy = rng.random_range(-(d as i64)..d as i64) as isize;
                    let (px, py) = ((xx as isize + dx) as usize, (yy as isize + dy) as usize);
                    for c in 0..3 {
                        let a = x.get(xx, yy, c);
                        let b = x.get(px, py, c);
                        x.set(xx, yy, c, b);
                        x.set(px, py, c, a);
                    }
                }
            }
        }
    }
    filters::gaussian_blur(&x, sigma)
}

/// 8-bit quantization, as stored in PNG or fed to an encoder.
pub fn to_rgb8(img: &Image) -> Vec<u8> {
    img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

pub fn from_rgb8(w: usize, h: usize, bytes: &[u8]) -> Image {
    Image::from_vec(w, h, 3, bytes.iter().map(|&b| b as f64 / 255.0).collect()).expect("length checked by caller")
}

fn jpeg_round_trip(img: &Image, quality: f64) -> Result<Image> {
    use image::codecs::jpeg::JpegEncoder;
    let (w, h) = (img.width(), img.height());
    let bytes = to_rgb8(img);
    let mut buf = Vec::new();
    let q = quality.round().clamp(1.0, 100.0) as u8;
    JpegEncoder::new_with_quality(&mut buf, q).encode(&bytes, w as u32, h as u32, image::ExtendedColorType::Rgb8)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(from_rgb8(w, h, decoded.as_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(l: u8) -> SeverityLevel {
        SeverityLevel::new(l).unwrap()
    }

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, 3, |x, y, c| {
            let (fx, fy) = (x as f64, y as f64);
            0.5 + 0.3 * ((fx * 0.37 + c as f64).sin() * (fy * 0.23).cos()) + 0.15 * ((fx + fy) * 0.9).sin()
        })
    }

    fn stream() -> RngStream {
        RngStream::new(42, 0, 1)
    }

    #[test]
    fn param_examples() {
        assert_eq!(rgb_perturb_params(RgbPerturbKind::ShotNoise, level(3)).values(), vec![12.0]);
        assert_eq!(rgb_perturb_params(RgbPerturbKind::Pixelate, level(5)).values(), vec![0.25]);
        assert_eq!(rgb_perturb_params(RgbPerturbKind::Jpeg, level(1)).values(), vec![25.0]);
        assert_eq!(rgb_perturb_params(RgbPerturbKind::GaussianNoise, level(1)).values(), vec![0.08]);
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("sparkle".parse::<RgbPerturbKind>().is_err());
        assert_eq!("shot".parse::<RgbPerturbKind>().unwrap(), RgbPerturbKind::ShotNoise);
        assert_eq!(RgbPerturbKind::ALL.len(), 16);
    }

    #[test]
    fn contrast_level5_example() {
        let img = Image::from_fn(2, 1, 3, |x, _, _| if x == 0 { 0.5 } else { 0.1 });
        // mean J = 0.3, pixel J + 0.2 maps to J + 0.05 * 0.2
        let out = apply_rgb_perturb(&img, RgbPerturbKind::Contrast, level(5), stream()).unwrap();
        assert!((out.get(0, 0, 0) - 0.31).abs() < 1e-12);
        assert!((out.get(1, 0, 2) - 0.29).abs() < 1e-12);
    }

    #[test]
    fn brightness_clamps() {
        let img = Image::filled(1, 1, 3, 0.9);
        let out = apply_rgb_perturb(&img, RgbPerturbKind::Brightness, level(3), stream()).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_limits() {
        let img = textured(17, 11);
        let m = PerturbMode::Static;
        for p in [
            RgbParams::SpeckleNoise { scale: 0.0 },
            RgbParams::Brightness { ratio: 0.0 },
            RgbParams::Contrast { beta: 1.0 },
        ] {
            assert_eq!(apply_rgb_with_params(&img, &p, m, stream()).unwrap(), img, "{p:?}");
        }
    }

    #[test]
    fn every_kind_preserves_shape_and_range_and_is_deterministic() {
        let img = textured(40, 30);
        for kind in RgbPerturbKind::ALL {
            for l in [1, 5] {
                let a = apply_rgb_perturb_mode(&img, kind, level(l), PerturbMode::Dynamic, stream()).unwrap();
                let b = apply_rgb_perturb_mode(&img, kind, level(l), PerturbMode::Dynamic, stream()).unwrap();
                assert!(a.same_shape(&img), "{kind}");
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
                assert_eq!(a, b, "{kind}");
                assert_ne!(a, img, "{kind} level {l} had no effect");
            }
        }
    }

    #[test]
    fn psnr_falls_with_level() {
        let img = textured(64, 48);
        use RgbPerturbKind::*;
        for kind in [GaussianNoise, ShotNoise, ImpulseNoise, SpeckleNoise, GaussianBlur, Pixelate] {
            let curve: Vec<f64> = (1..=5)
                .map(|l| crate::eval::psnr(&apply_rgb_perturb(&img, kind, level(l), stream()).unwrap(), &img).unwrap())
                .collect();
            assert!(curve.windows(2).all(|w| w[1] <= w[0]), "{kind}: {curve:?}");
        }
    }

    #[test]
    fn rejects_gray_input() {
        let img = Image::new(3, 3, 1);
        assert!(apply_rgb_perturb(&img, RgbPerturbKind::Fog, level(1), stream()).is_err());
    }

    #[test]
    fn impulse_sets_nested() {
        let img = Image::filled(30, 30, 3, 0.5);
        let a = apply_rgb_perturb(&img, RgbPerturbKind::ImpulseNoise, level(1), stream()).unwrap();
        let b = apply_rgb_perturb(&img, RgbPerturbKind::ImpulseNoise, level(4), stream()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            if *x != 0.5 {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn shot_noise_is_unbiased() {
        let img = Image::filled(100, 100, 3, 0.4);
        let out = apply_rgb_perturb(&img, RgbPerturbKind::ShotNoise, level(1), stream()).unwrap();
        let mean = out.data().iter().sum::<f64>() / out.data().len() as f64;
        assert!((mean - 0.4).abs() < 0.01, "{mean}");
    }
}
