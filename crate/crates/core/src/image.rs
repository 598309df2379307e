//! Images, intrinsics and RGB-D frames.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth value marking a pixel without a measurement.
pub const VOID: f64 = 0.0;

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Mean focal length, used to convert metric radii to pixels.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `depth * K^-1 [u, v, 1]`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    /// Pixel coordinates of a camera-frame point with positive depth.
    pub fn project(&self, x: &Vector3<f64>) -> (f64, f64) {
        (self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }
}

/// Row-major interleaved floating-point image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Value with coordinates clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(mut self) -> Image {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        self
    }

    /// Single channel extracted as a one-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Luma weights of ITU-R BT.601.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn mean_channel(&self, c: usize) -> f64 {
        let n = self.len_pixels();
        if n == 0 {
            return 0.0;
        }
        self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n as f64
    }

    /// Bilinear sample of channel `c`; `None` outside the image.
    pub fn bilinear(&self, u: f64, v: f64, c: usize) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width - 1);
        let y0 = (v.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = u - x0 as f64;
        let ay = v - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - ax) + self.get(x1, y0, c) * ax;
        let bot = self.get(x0, y1, c) * (1.0 - ax) + self.get(x1, y1, c) * ax;
        Some(top * (1.0 - ay) + bot * ay)
    }
}

/// One timestamped RGB-D observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub rgb: Image,
    pub depth: Image,
    pub valid: Vec<bool>,
    pub intrinsics: Intrinsics,
}

impl Frame {
    /// Builds a frame, deriving the valid mask from the depth map.
    pub fn new(timestamp: f64, rgb: Image, depth: Image, intrinsics: Intrinsics) -> Result<Self> {
        let valid = depth.data().iter().map(|&d| d != VOID).collect();
        let f = Frame { timestamp, rgb, depth, valid, intrinsics };
        f.validate()?;
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.rgb.width(), self.rgb.height());
        if self.rgb.channels() != 3 || self.depth.channels() != 1 {
            return Err(Error::invalid("frame needs a 3-channel rgb and a 1-channel depth image"));
        }
        if self.depth.width() != w || self.depth.height() != h {
            return Err(Error::invalid("rgb and depth sizes differ"));
        }
        if self.intrinsics.width != w || self.intrinsics.height != h {
            return Err(Error::invalid("intrinsics size does not match the images"));
        }
        if self.valid.len() != w * h {
            return Err(Error::invalid("valid mask length mismatch"));
        }
        for (&d, &ok) in self.depth.data().iter().zip(&self.valid) {
            if ok != (d != VOID) || !(d.is_finite() && d >= 0.0) {
                return Err(Error::invalid("depth and valid mask disagree"));
            }
        }
        if self.rgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("rgb values outside [0, 1]"));
        }
        Ok(())
    }

    /// Replaces the rgb image, keeping depth and mask.
    pub fn with_rgb(&self, rgb: Image) -> Frame {
        Frame { rgb, ..self.clone() }
    }

    /// Replaces depth and rederives the valid mask.
    pub fn with_depth(&self, depth: Image) -> Frame {
        let valid = depth.data().iter().map(|&d| d != VOID).collect();
        Frame { depth, valid, ..self.clone() }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Ordered frames of one sequence.
pub type FrameSequence = Vec<Frame>;
