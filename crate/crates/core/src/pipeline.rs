//! Ordered composition of perturbations over a sequence:
//! motion, then rendering, then imaging corruptions, then desynchronization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Frame, FrameSequence, Intrinsics};
use crate::io;
use crate::perturb::depth::{apply_depth_perturb, DepthPerturbKind};
use crate::perturb::motion::{deviate_trajectory, MotionDeviationSpec, ROTATION_PRESETS_DEG, TRANSLATION_PRESETS_M};
use crate::perturb::rgb::{apply_rgb_perturb_mode, RgbPerturbKind};
use crate::perturb::{PerturbMode, SeverityLevel};
use crate::rng::RngStream;
use crate::scene::{render_observation, SceneSpec};
use crate::splat::GaussianMap;
use crate::trajectory::Trajectory;

/// Speedup factors of the three faster-motion levels.
pub const SPEEDUP_PRESETS: [usize; 3] = [2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Rotate,
    Translate,
    /// Rotation and translation deviations at the same level.
    Rigid,
    Faster,
}

/// One entry of a manifest. The JSON form is tagged by `stage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbSpec {
    Motion {
        kind: MotionKind,
        /// Preset row, `1..=3`.
        level: u8,
        /// Explicit speedup for `faster`, overriding the preset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        factor: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Rgb {
        kind: RgbPerturbKind,
        level: SeverityLevel,
        #[serde(default)]
        mode: PerturbMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Depth {
        kind: DepthPerturbKind,
        level: SeverityLevel,
        #[serde(default)]
        mode: PerturbMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Desync {
        delta: usize,
        #[serde(default)]
        mode: PerturbMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl PerturbSpec {
    pub fn stage(&self) -> Stage {
        match self {
            PerturbSpec::Motion { .. } => Stage::Motion,
            PerturbSpec::Rgb { .. } => Stage::Rgb,
            PerturbSpec::Depth { .. } => Stage::Depth,
            PerturbSpec::Desync { .. } => Stage::Desync,
        }
    }

    fn seed(&self) -> Option<u64> {
        match *self {
            PerturbSpec::Motion { seed, .. }
            | PerturbSpec::Rgb { seed, .. }
            | PerturbSpec::Depth { seed, .. }
            | PerturbSpec::Desync { seed, .. } => seed,
        }
    }

    fn label(&self) -> String {
        match self {
            PerturbSpec::Motion { kind, level, factor, .. } => match factor {
                Some(k) => format!("{kind:?}x{k}").to_lowercase(),
                None => format!("{kind:?}:{level}").to_lowercase(),
            },
            PerturbSpec::Rgb { kind, level, .. } => format!("{kind}:{}", level.get()),
            PerturbSpec::Depth { kind, level, .. } => format!("{kind}:{}", level.get()),
            PerturbSpec::Desync { delta, mode, .. } => format!("{delta}:{mode:?}").to_lowercase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Motion,
    Render,
    Rgb,
    Depth,
    Desync,
}

/// One applied step, in application order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub stage: Stage,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Seed for every entry that does not carry its own.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perturbations: Vec<PerturbSpec>,
}

impl PipelineManifest {
    pub fn validate(&self) -> Result<()> {
        let count = |s: Stage| self.perturbations.iter().filter(|p| p.stage() == s).count();
        if count(Stage::Motion) > 1 || count(Stage::Desync) > 1 {
            return Err(Error::invalid("a manifest holds at most one motion and one desync entry"));
        }
        for p in &self.perturbations {
            if let PerturbSpec::Motion { kind, level, factor, .. } = p {
                if !(1..=3).contains(level) {
                    return Err(Error::invalid(format!("motion level {level} outside 1..=3")));
                }
                if factor.is_some() && *kind != MotionKind::Faster {
                    return Err(Error::invalid("factor applies only to faster motion"));
                }
                if *factor == Some(0) {
                    return Err(Error::invalid("speedup factor must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// Per-frame severities: constant in static mode, otherwise a uniform
/// draw from `{level-1, level, level+1}` clipped to `1..=5`.
pub fn dynamic_mode_schedule(level: SeverityLevel, mode: PerturbMode, n_frames: usize, rng: RngStream) -> Vec<SeverityLevel> {
    match mode {
        PerturbMode::Static => vec![level; n_frames],
        PerturbMode::Dynamic => {
            let mut r = rng.rng();
            (0..n_frames)
                .map(|_| {
                    let l = (level.get() as i32 + r.random_range(-1..=1)).clamp(1, 5);
                    SeverityLevel::new(l as u8).expect("clamped")
                })
                .collect()
        }
    }
}

/// Depth offsets for each output frame and the resulting length.
///
/// Static mode shifts by exactly `delta`; dynamic mode draws from
/// `{delta-1, delta, delta+1}` (never below zero) and keeps one fewer frame
/// so every draw stays in range.
pub fn desync_offsets(n: usize, delta: usize, mode: PerturbMode, rng: RngStream) -> Result<Vec<usize>> {
    let reach = match mode {
        PerturbMode::Static => delta,
        PerturbMode::Dynamic => delta + 1,
    };
    if reach >= n {
        return Err(Error::invalid(format!("desync of {reach} frames needs a longer sequence than {n}")));
    }
    let len = n - reach;
    Ok(match mode {
        PerturbMode::Static => vec![delta; len],
        PerturbMode::Dynamic => {
            let mut r = rng.rng();
            (0..len).map(|_| (delta as i64 + r.random_range(-1..=1)).max(0) as usize).collect()
        }
    })
}

/// `depth'(t) = depth(t + delta_t)`, with the RGB stream and poses kept.
pub fn desync_streams(frames: &[Frame], delta: usize, mode: PerturbMode, rng: RngStream) -> Result<FrameSequence> {
    let offsets = desync_offsets(frames.len(), delta, mode, rng)?;
    Ok(offsets.iter().enumerate().map(|(t, &d)| shifted(&frames[t], &frames[t + d])).collect())
}

fn shifted(rgb: &Frame, depth: &Frame) -> Frame {
    Frame { depth: depth.depth.clone(), valid: depth.valid.clone(), ..rgb.clone() }
}

/// A perturbed sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSequence {
    pub frames: FrameSequence,
    /// Poses the frames were observed from, when known.
    pub trajectory: Option<Trajectory>,
    /// The same frames before imaging corruptions and desync.
    pub clean: FrameSequence,
    pub trace: Vec<TraceStep>,
}

enum Source<'a> {
    Memory(&'a [Frame]),
    Disk(&'a io::SequenceReader),
}

impl Source<'_> {
    fn len(&self) -> usize {
        match self {
            Source::Memory(f) => f.len(),
            Source::Disk(r) => r.len(),
        }
    }

    fn load(&self, i: usize) -> Result<Frame> {
        match self {
            Source::Memory(f) => Ok(f[i].clone()),
            Source::Disk(r) => r.frame(i),
        }
    }
}

struct Imaging {
    spec: PerturbSpec,
    id: u64,
    seed: u64,
    levels: Vec<SeverityLevel>,
}

/// Everything decided before any frame is produced.
struct Plan<'a> {
    source: Source<'a>,
    scene: Option<(&'a GaussianMap, Intrinsics)>,
    rerender: bool,
    /// Input index of each post-motion frame.
    source_index: Vec<usize>,
    /// Post-motion poses, one per entry of `source_index`.
    trajectory: Option<Trajectory>,
    imaging: Vec<Imaging>,
    offsets: Vec<usize>,
    trace: Vec<TraceStep>,
}

impl<'a> Plan<'a> {
    fn new(
        manifest: &PipelineManifest,
        source: Source<'a>,
        trajectory: Option<&Trajectory>,
        scene: Option<(&'a GaussianMap, Intrinsics)>,
    ) -> Result<Self> {
        manifest.validate()?;
        let n = source.len();
        if let Some(t) = trajectory.filter(|t| t.len() != n) {
            return Err(Error::invalid(format!("{} poses for {n} frames", t.len())));
        }
        let seed_of = |p: &PerturbSpec| p.seed().unwrap_or(manifest.seed);
        let mut trace = Vec::new();
        let mut traj = trajectory.cloned();
        let mut source_index: Vec<usize> = (0..n).collect();
        let mut rerender = false;
        for (id, p) in manifest.perturbations.iter().enumerate() {
            let PerturbSpec::Motion { kind, level, factor, .. } = *p else { continue };
            let row = level as usize - 1;
            if kind == MotionKind::Faster {
                let k = factor.unwrap_or(SPEEDUP_PRESETS[row]);
                source_index = (0..n).step_by(k).collect();
                traj = traj.map(|t| t.select(|i| i % k == 0));
            } else {
                let t = traj.as_ref().ok_or_else(|| Error::invalid("motion deviation needs a ground-truth trajectory"))?;
                if scene.is_none() {
                    return Err(Error::invalid("motion deviation needs a scene to re-render from"));
                }
                let spec = MotionDeviationSpec {
                    sigma_rot: if kind == MotionKind::Translate { 0.0 } else { ROTATION_PRESETS_DEG[row] },
                    sigma_trans: if kind == MotionKind::Rotate { 0.0 } else { TRANSLATION_PRESETS_M[row] },
                };
                traj = Some(deviate_trajectory(t, &spec, RngStream::new(seed_of(p), 0, id as u64))?);
                rerender = true;
            }
            trace.push(TraceStep { stage: Stage::Motion, detail: p.label() });
        }
        let m = source_index.len();
        trace.push(TraceStep {
            stage: Stage::Render,
            detail: if rerender { "scene".into() } else { "input".into() },
        });
        let mut imaging = Vec::new();
        for (id, p) in manifest.perturbations.iter().enumerate() {
            let (level, mode) = match *p {
                PerturbSpec::Rgb { level, mode, .. } | PerturbSpec::Depth { level, mode, .. } => (level, mode),
                _ => continue,
            };
            let seed = seed_of(p);
            let levels = dynamic_mode_schedule(level, mode, m, RngStream::new(seed, 0, id as u64).derive(1));
            trace.push(TraceStep { stage: p.stage(), detail: p.label() });
            imaging.push(Imaging { spec: p.clone(), id: id as u64, seed, levels });
        }
        let mut offsets = vec![0; m];
        for (id, p) in manifest.perturbations.iter().enumerate() {
            if let PerturbSpec::Desync { delta, mode, .. } = *p {
                offsets = desync_offsets(m, delta, mode, RngStream::new(seed_of(p), 0, id as u64))?;
                trace.push(TraceStep { stage: Stage::Desync, detail: p.label() });
            }
        }
        Ok(Plan { source, scene, rerender, source_index, trajectory: traj, imaging, offsets, trace })
    }

    fn len(&self) -> usize {
        self.offsets.len()
    }

    /// Poses paired with the output frames.
    fn output_trajectory(&self) -> Option<Trajectory> {
        let len = self.len();
        self.trajectory.as_ref().map(|t| t.select(|i| i < len))
    }

    fn touches(&self, stage: Stage) -> bool {
        self.imaging.iter().any(|s| s.spec.stage() == stage)
    }

    /// Post-motion frame `i` before any imaging corruption.
    fn clean(&self, i: usize) -> Result<Frame> {
        match (self.rerender, self.scene, &self.trajectory) {
            (true, Some((map, k)), Some(t)) => {
                let (ts, pose) = t.entries()[i];
                Ok(render_observation(map, &pose, &k, ts))
            }
            _ => self.source.load(self.source_index[i]),
        }
    }

    /// Frame `i` with every imaging stage applied, in manifest order.
    fn imaged(&self, clean: &Frame, i: usize, stage: Stage) -> Result<Frame> {
        let mut frame = clean.clone();
        for s in self.imaging.iter().filter(|s| s.spec.stage() == stage) {
            let stream = RngStream::new(s.seed, i as u64, s.id);
            let level = s.levels[i];
            frame = match s.spec {
                PerturbSpec::Rgb { kind, mode, .. } => frame.with_rgb(apply_rgb_perturb_mode(&frame.rgb, kind, level, mode, stream)?),
                PerturbSpec::Depth { kind, .. } => apply_depth_perturb(&frame, kind, level, stream)?,
                _ => unreachable!("imaging holds rgb and depth entries"),
            };
        }
        Ok(frame)
    }
}

/// Produces output frames in order, loading each clean frame once.
struct Producer<'p, 'a> {
    plan: &'p Plan<'a>,
    cache: BTreeMap<usize, Frame>,
}

impl<'p, 'a> Producer<'p, 'a> {
    fn new(plan: &'p Plan<'a>) -> Self {
        Producer { plan, cache: BTreeMap::new() }
    }

    fn clean(&mut self, i: usize) -> Result<Frame> {
        if let Some(f) = self.cache.get(&i) {
            return Ok(f.clone());
        }
        let f = self.plan.clean(i)?;
        self.cache.insert(i, f.clone());
        Ok(f)
    }

    /// Output frame `t` and its clean counterpart. Call with increasing `t`.
    fn frame(&mut self, t: usize) -> Result<(Frame, Frame)> {
        self.cache.retain(|&k, _| k >= t);
        let clean = self.clean(t)?;
        let s = t + self.plan.offsets[t];
        let rgb = self.plan.imaged(&clean, t, Stage::Rgb)?;
        let depth_clean = self.clean(s)?;
        let depth = self.plan.imaged(&depth_clean, s, Stage::Depth)?;
        Ok((shifted(&rgb, &depth), clean))
    }
}

/// Applies a manifest to frames held in memory. `scene` is needed only for
/// motion deviations, which re-render every frame.
pub fn perturb_frames(
    manifest: &PipelineManifest,
    frames: &[Frame],
    trajectory: Option<&Trajectory>,
    scene: Option<&GaussianMap>,
) -> Result<PerturbedSequence> {
    let scene = match (scene, frames.first()) {
        (Some(m), Some(f)) => Some((m, f.intrinsics)),
        _ => None,
    };
    let plan = Plan::new(manifest, Source::Memory(frames), trajectory, scene)?;
    let mut producer = Producer::new(&plan);
    let mut out = Vec::with_capacity(plan.len());
    let mut clean = Vec::with_capacity(plan.len());
    for t in 0..plan.len() {
        let (f, c) = producer.frame(t)?;
        out.push(f);
        clean.push(c);
    }
    Ok(PerturbedSequence { frames: out, trajectory: plan.output_trajectory(), clean, trace: plan.trace.clone() })
}

/// Summary of a pipeline run on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub frames: usize,
    pub trace: Vec<TraceStep>,
}

/// Subdirectory of the output holding the clean reference sequence.
pub const CLEAN_DIR: &str = "clean";

/// Runs the manifest between its own `input` and `output` directories.
pub fn run_pipeline(manifest: &PipelineManifest) -> Result<PipelineReport> {
    let input = manifest.input.as_deref().ok_or_else(|| Error::invalid("manifest has no input directory"))?;
    let output = manifest.output.as_deref().ok_or_else(|| Error::invalid("manifest has no output directory"))?;
    run_pipeline_dirs(manifest, input, output)
}

/// Reads a sequence directory, perturbs it frame by frame and writes the
/// result. Files that no stage changes are copied byte for byte. When any
/// imaging stage runs, the clean reference is written under `clean/`.
pub fn run_pipeline_dirs(manifest: &PipelineManifest, input: &Path, output: &Path) -> Result<PipelineReport> {
    manifest.validate()?;
    let reader = io::SequenceReader::open(input)?;
    let scene_path = input.join(io::SCENE);
    let needs_scene = manifest
        .perturbations
        .iter()
        .any(|p| matches!(p, PerturbSpec::Motion { kind, .. } if *kind != MotionKind::Faster));
    let map = if needs_scene && scene_path.is_file() {
        Some(io::read_json::<SceneSpec>(&scene_path)?.build()?)
    } else {
        None
    };
    let k = *reader.intrinsics();
    let plan = Plan::new(manifest, Source::Disk(&reader), reader.trajectory(), map.as_ref().map(|m| (m, k)))?;
    let copy_rgb = !plan.rerender && !plan.touches(Stage::Rgb);
    let copy_depth = !plan.rerender && !plan.touches(Stage::Depth);
    let write_clean = !plan.imaging.is_empty();
    let clean_dir = output.join(CLEAN_DIR);
    let mut producer = Producer::new(&plan);
    for t in 0..plan.len() {
        let s = t + plan.offsets[t];
        let name = io::frame_name(t);
        if copy_rgb {
            io::copy_file(&input.join("rgb").join(io::frame_name(plan.source_index[t])), &output.join("rgb").join(&name))?;
        }
        if copy_depth {
            io::copy_file(&input.join("depth").join(io::frame_name(plan.source_index[s])), &output.join("depth").join(&name))?;
        }
        if copy_rgb && copy_depth && !write_clean {
            continue;
        }
        let (frame, clean) = producer.frame(t)?;
        if !copy_rgb {
            io::write_rgb_png(&frame.rgb, &output.join("rgb").join(&name))?;
        }
        if !copy_depth {
            io::write_depth_png(&io::masked_depth(&frame), &output.join("depth").join(&name))?;
        }
        if write_clean {
            io::write_frame(&clean, t, &clean_dir)?;
        }
    }
    io::copy_file(&input.join(io::INTRINSICS), &output.join(io::INTRINSICS))?;
    if write_clean {
        io::copy_file(&input.join(io::INTRINSICS), &clean_dir.join(io::INTRINSICS))?;
    }
    if scene_path.is_file() {
        io::copy_file(&scene_path, &output.join(io::SCENE))?;
    }
    if let Some(traj) = plan.output_trajectory() {
        let unchanged = reader.trajectory() == Some(&traj);
        let gt = output.join(io::GT_TRAJECTORY);
        if unchanged {
            io::copy_file(&input.join(io::GT_TRAJECTORY), &gt)?;
        } else {
            io::write_trajectory(&traj, &gt)?;
        }
        if write_clean {
            io::copy_file(&gt, &clean_dir.join(io::GT_TRAJECTORY))?;
        }
    }
    Ok(PipelineReport { frames: plan.len(), trace: plan.trace.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::scene::{make_orbit_trajectory, make_room_scene, render_sequence, FRAME_DT};

    fn k() -> Intrinsics {
        Intrinsics::new(8.0, 8.0, 3.5, 2.5, 8, 6).unwrap()
    }

    /// Frame `i` has depth `1 + i / 1000` everywhere, which identifies it.
    fn tagged(n: usize) -> FrameSequence {
        (0..n)
            .map(|i| {
                let rgb = Image::from_fn(8, 6, 3, |x, y, c| ((x * 7 + y * 3 + c + i) % 11) as f64 / 10.0);
                let depth = Image::filled(8, 6, 1, 1.0 + i as f64 / 1000.0);
                Frame::new(i as f64 * FRAME_DT, rgb, depth, k()).unwrap()
            })
            .collect()
    }

    fn source_of(f: &Frame) -> usize {
        ((f.depth.get(0, 0, 0) - 1.0) * 1000.0).round() as usize
    }

    fn manifest(json: &str) -> PipelineManifest {
        serde_json::from_str(json).unwrap()
    }

    fn level(l: u8) -> SeverityLevel {
        SeverityLevel::new(l).unwrap()
    }

    #[test]
    fn empty_manifest_is_identity() {
        let frames = tagged(5);
        let traj = make_orbit_trajectory(5, 0.3, 0.5);
        let out = perturb_frames(&PipelineManifest::default(), &frames, Some(&traj), None).unwrap();
        assert_eq!(out.frames, frames);
        assert_eq!(out.clean, frames);
        assert_eq!(out.trajectory.as_ref(), Some(&traj));
    }

    #[test]
    fn rgb_only_leaves_depth_and_poses() {
        let frames = tagged(4);
        let traj = make_orbit_trajectory(4, 0.3, 0.5);
        let m = manifest(r#"{"seed": 3, "perturbations": [{"stage": "rgb", "kind": "gaussian_noise", "level": 3}]}"#);
        let out = perturb_frames(&m, &frames, Some(&traj), None).unwrap();
        for (a, b) in out.frames.iter().zip(&frames) {
            assert_eq!((&a.depth, &a.valid), (&b.depth, &b.valid));
            assert_ne!(a.rgb, b.rgb);
        }
        assert_eq!(out.trajectory.as_ref(), Some(&traj));
    }

    #[test]
    fn mixed_composition_runs_in_order() {
        let m = manifest(
            r#"{"perturbations": [
                {"stage": "desync", "delta": 1},
                {"stage": "rgb", "kind": "snow", "level": 2},
                {"stage": "rgb", "kind": "motion_blur", "level": 2},
                {"stage": "rgb", "kind": "gaussian_noise", "level": 2},
                {"stage": "rgb", "kind": "jpeg", "level": 2},
                {"stage": "depth", "kind": "gaussian_noise", "level": 2}
            ]}"#,
        );
        let out = perturb_frames(&m, &tagged(6), None, None).unwrap();
        let stages: Vec<String> = out.trace.iter().map(|s| format!("{:?} {}", s.stage, s.detail)).collect();
        assert_eq!(
            stages,
            [
                "Render input",
                "Rgb snow:2",
                "Rgb motion_blur:2",
                "Rgb gaussian_noise:2",
                "Rgb jpeg:2",
                "Depth gaussian_noise:2",
                "Desync 1:static"
            ]
        );
        assert_eq!(out.frames.len(), 5);
        assert_eq!(out, perturb_frames(&m, &tagged(6), None, None).unwrap());
    }

    #[test]
    fn desync_examples() {
        let frames = tagged(2000);
        let rng = RngStream::new(0, 0, 0);
        assert_eq!(desync_streams(&frames, 0, PerturbMode::Static, rng).unwrap(), frames);
        let out = desync_streams(&frames, 5, PerturbMode::Static, rng).unwrap();
        assert_eq!(out.len(), 1995);
        assert_eq!(out[0].depth, frames[5].depth);
        assert_eq!(out[0].rgb, frames[0].rgb);
        let dynamic = desync_streams(&frames, 5, PerturbMode::Dynamic, rng).unwrap();
        let mut seen = [false; 3];
        for (t, f) in dynamic.iter().enumerate() {
            let d = source_of(f) - t;
            assert!((4..=6).contains(&d), "offset {d}");
            seen[d - 4] = true;
            assert_eq!(f.rgb, frames[t].rgb);
        }
        assert_eq!(seen, [true; 3]);
        assert!(desync_streams(&frames[..5], 5, PerturbMode::Static, rng).is_err());
    }

    #[test]
    fn schedule_examples() {
        let rng = RngStream::new(4, 0, 0);
        assert_eq!(dynamic_mode_schedule(level(3), PerturbMode::Static, 4, rng), vec![level(3); 4]);
        let low = dynamic_mode_schedule(level(1), PerturbMode::Dynamic, 500, rng);
        assert!(low.iter().all(|l| l.get() == 1 || l.get() == 2));
        let n = 10_000;
        let mid = dynamic_mode_schedule(level(3), PerturbMode::Dynamic, n, rng);
        for l in 2..=4 {
            let f = mid.iter().filter(|x| x.get() == l).count() as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "level {l}: {f}");
        }
    }

    #[test]
    fn faster_motion_keeps_every_kth() {
        let frames = tagged(7);
        let traj = make_orbit_trajectory(7, 0.3, 0.6);
        let m = manifest(r#"{"perturbations": [{"stage": "motion", "kind": "faster", "level": 1}]}"#);
        let out = perturb_frames(&m, &frames, Some(&traj), None).unwrap();
        assert_eq!(out.frames.iter().map(source_of).collect::<Vec<_>>(), [0, 2, 4, 6]);
        assert_eq!(out.trajectory.unwrap().pose(1), traj.pose(2));
        let m = manifest(r#"{"perturbations": [{"stage": "motion", "kind": "faster", "level": 1, "factor": 3}]}"#);
        assert_eq!(perturb_frames(&m, &frames, None, None).unwrap().frames.len(), 3);
    }

    #[test]
    fn deviation_rerenders_from_the_scene() {
        let map = make_room_scene(2, 2000, 3.0).unwrap();
        let traj = make_orbit_trajectory(3, 0.3, 0.2);
        let frames = render_sequence(&map, &traj, &k());
        let m = manifest(r#"{"seed": 1, "perturbations": [{"stage": "motion", "kind": "rigid", "level": 2}]}"#);
        assert!(perturb_frames(&m, &frames, Some(&traj), None).is_err());
        let out = perturb_frames(&m, &frames, Some(&traj), Some(&map)).unwrap();
        let moved = out.trajectory.unwrap();
        assert_ne!(moved, traj);
        let expected = render_sequence(&map, &moved, &k());
        assert_eq!(out.frames, expected);
        assert_eq!(out.trace[0].stage, Stage::Motion);
        assert_eq!(out.trace[1], TraceStep { stage: Stage::Render, detail: "scene".into() });
    }

    #[test]
    fn manifest_validation() {
        let bad = [
            r#"{"perturbations": [{"stage": "rgb", "kind": "snow", "level": 6}]}"#,
            r#"{"perturbations": [{"stage": "rgb", "kind": "sparkle", "level": 1}]}"#,
            r#"{"perturbations": [{"stage": "depth", "kind": "edge_erosion", "level": 1, "extra": 0}]}"#,
            r#"{"perturbations": [{"stage": "zoom"}]}"#,
            r#"{"seeds": 1}"#,
        ];
        for b in bad {
            assert!(serde_json::from_str::<PipelineManifest>(b).is_err(), "{b}");
        }
        let twice = manifest(
            r#"{"perturbations": [{"stage": "desync", "delta": 1}, {"stage": "desync", "delta": 2}]}"#,
        );
        assert!(twice.validate().is_err());
        let level = manifest(r#"{"perturbations": [{"stage": "motion", "kind": "rotate", "level": 4}]}"#);
        assert!(level.validate().is_err());
        let m = manifest(r#"{"seed": 9, "perturbations": [{"stage": "desync", "delta": 5, "mode": "dynamic", "seed": 2}]}"#);
        let back: PipelineManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn offsets_stay_in_range(n in 1usize..60, delta in 0usize..60, dynamic: bool, seed: u64) {
                let mode = if dynamic { PerturbMode::Dynamic } else { PerturbMode::Static };
                let reach = delta + dynamic as usize;
                match desync_offsets(n, delta, mode, RngStream::new(seed, 0, 0)) {
                    Ok(offsets) => {
                        prop_assert!(reach < n);
                        prop_assert_eq!(offsets.len(), n - reach);
                        for (t, &d) in offsets.iter().enumerate() {
                            prop_assert!(t + d < n);
                            prop_assert!(d + 1 >= delta && d <= delta + 1);
                            if !dynamic { prop_assert_eq!(d, delta); }
                        }
                    }
                    Err(_) => prop_assert!(reach >= n),
                }
            }
        }
    }
}
