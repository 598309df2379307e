//! Sequence directories, trajectory text files and JSON documents.
//!
//! A sequence directory holds `rgb/frame_%06d.png` (8-bit RGB),
//! `depth/frame_%06d.png` (16-bit, meters times [`DEPTH_SCALE`], 0 for no
//! depth), `intrinsics.json` and optionally `traj_gt.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{Frame, FrameSequence, Image, Intrinsics, VOID};
use crate::perturb::rgb::{from_rgb8, to_rgb8};
use crate::scene::FRAME_DT;
use crate::trajectory::Trajectory;

/// Depth PNG units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;
/// Deepest representable depth.
pub const MAX_DEPTH: f64 = u16::MAX as f64 / DEPTH_SCALE;

pub const GT_TRAJECTORY: &str = "traj_gt.txt";
pub const EST_TRAJECTORY: &str = "traj_est.txt";
pub const INTRINSICS: &str = "intrinsics.json";
/// Optional scene description that lets a sequence be re-rendered.
pub const SCENE: &str = "scene.json";

/// File name of frame `i` inside `rgb/` and `depth/`.
pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.png")
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Writes a file, creating its directory first.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Byte-for-byte copy, creating the destination directory first.
pub fn copy_file(from: &Path, to: &Path) -> Result<()> {
    let bytes = fs::read(from).map_err(|e| Error::io(from, e))?;
    write_bytes(to, &bytes)
}

fn encode_png<P: image::PixelWithColorType>(img: &ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_bytes(path, &bytes)
}

pub fn write_rgb_png(img: &Image, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid("RGB image must have 3 channels"));
    }
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, to_rgb8(img))
        .expect("buffer sized from image");
    encode_png(&buf, path)
}

pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let rgb = img.to_rgb8();
    Ok(from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw()))
}

/// Fails on depths that do not fit the 16-bit encoding.
pub fn write_depth_png(depth: &Image, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(depth.data().len());
    for &d in depth.data() {
        if !(0.0..=MAX_DEPTH).contains(&d) {
            return Err(Error::invalid(format!("depth {d} m cannot be stored (limit {MAX_DEPTH} m)")));
        }
        raw.push((d * DEPTH_SCALE).round() as u16);
    }
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(depth.width() as u32, depth.height() as u32, raw)
        .expect("buffer sized from image");
    encode_png(&buf, path)
}

pub fn read_depth_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let d = img.to_luma16();
    let data = d.as_raw().iter().map(|&v| if v == 0 { VOID } else { v as f64 / DEPTH_SCALE }).collect();
    Image::from_vec(d.width() as usize, d.height() as usize, 1, data)
}

fn rotation_from_xyzw(path: &Path, line: usize, q: [f64; 4]) -> Result<nalgebra::UnitQuaternion<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-9) || !n.is_finite() {
        return Err(Error::format(path, format!("line {line}: degenerate quaternion")));
    }
    Ok(nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2])))
}

/// Parses `timestamp tx ty tz qx qy qz qw` lines of camera-to-world poses.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("line {}: not a number", no + 1)))?;
        if vals.len() != 8 || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, format!("line {}: expected 8 finite values", no + 1)));
        }
        let rot = rotation_from_xyzw(path, no + 1, [vals[4], vals[5], vals[6], vals[7]])?;
        let c2w = Pose::from_unit_quaternion(&rot, nalgebra::Vector3::new(vals[1], vals[2], vals[3]));
        entries.push((vals[0], c2w.inverse()));
    }
    if entries.is_empty() {
        return Err(Error::format(path, "no poses"));
    }
    Trajectory::new(entries).map_err(|e| Error::format(path, e.to_string()))
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (ts, pose) in traj.entries() {
        let c2w = pose.inverse();
        let t = c2w.translation();
        let q = c2w.unit_quaternion();
        s += &format!("{ts} {} {} {} {} {} {} {}\n", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
    }
    s
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_bytes(path, format_trajectory(traj).as_bytes())
}

/// Number of frames in a sequence directory.
pub fn count_frames(dir: &Path) -> Result<usize> {
    let rgb = dir.join("rgb");
    if !rgb.is_dir() {
        return Err(Error::format(dir, "no rgb/ directory"));
    }
    let mut n = 0;
    while rgb.join(frame_name(n)).is_file() {
        n += 1;
    }
    if n == 0 {
        return Err(Error::format(dir, "sequence has no frames"));
    }
    Ok(n)
}

/// A sequence directory opened for frame-by-frame access.
#[derive(Debug, Clone)]
pub struct SequenceReader {
    dir: PathBuf,
    intrinsics: Intrinsics,
    timestamps: Vec<f64>,
    trajectory: Option<Trajectory>,
}

impl SequenceReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let n = count_frames(dir)?;
        let intrinsics: Intrinsics = read_json(&dir.join(INTRINSICS))?;
        intrinsics.validate().map_err(|e| Error::format(dir.join(INTRINSICS), e.to_string()))?;
        let gt = dir.join(GT_TRAJECTORY);
        let trajectory = if gt.is_file() { Some(read_trajectory(&gt)?) } else { None };
        let timestamps = match &trajectory {
            Some(t) if t.len() == n => t.timestamps(),
            Some(t) => return Err(Error::format(&gt, format!("{} poses for {n} frames", t.len()))),
            None => (0..n).map(|i| i as f64 * FRAME_DT).collect(),
        };
        Ok(SequenceReader { dir: dir.to_path_buf(), intrinsics, timestamps, trajectory })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    pub fn frame(&self, i: usize) -> Result<Frame> {
        let rgb = read_rgb_png(&self.dir.join("rgb").join(frame_name(i)))?;
        let depth_path = self.dir.join("depth").join(frame_name(i));
        let depth = read_depth_png(&depth_path)?;
        let k = &self.intrinsics;
        if (rgb.width(), rgb.height()) != (k.width, k.height) || !depth.same_shape(&Image::new(k.width, k.height, 1)) {
            return Err(Error::format(depth_path, "frame size does not match the intrinsics"));
        }
        Frame::new(self.timestamps[i], rgb, depth, *k)
    }

    pub fn frames(&self) -> Result<FrameSequence> {
        (0..self.len()).map(|i| self.frame(i)).collect()
    }
}

pub fn read_sequence(dir: &Path) -> Result<FrameSequence> {
    SequenceReader::open(dir)?.frames()
}

/// Writes frame `i` of a sequence.
pub fn write_frame(frame: &Frame, i: usize, dir: &Path) -> Result<()> {
    write_rgb_png(&frame.rgb, &dir.join("rgb").join(frame_name(i)))?;
    write_depth_png(&masked_depth(frame), &dir.join("depth").join(frame_name(i)))
}

/// Depth with invalid pixels set to VOID, as stored on disk.
pub fn masked_depth(frame: &Frame) -> Image {
    let mut depth = frame.depth.clone();
    for (d, &ok) in depth.data_mut().iter_mut().zip(&frame.valid) {
        if !ok {
            *d = VOID;
        }
    }
    depth
}

/// Writes frames, intrinsics and, when given, the trajectory.
pub fn write_sequence(frames: &[Frame], traj: Option<&Trajectory>, dir: &Path) -> Result<()> {
    let Some(first) = frames.first() else {
        return Err(Error::InsufficientData("empty sequence".into()));
    };
    write_json(&first.intrinsics, &dir.join(INTRINSICS))?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(f, i, dir)?;
    }
    if let Some(t) = traj {
        write_trajectory(t, &dir.join(GT_TRAJECTORY))?;
    }
    Ok(())
}
