//! `noisyslam`: perturb RGB-D sequences, track them, and score the result.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use noisyslam::eval::{self, Alignment, Report};
use noisyslam::scene::{self, SceneSpec};
use noisyslam::splat::{render, GaussianMap};
use noisyslam::tracking::{run_tracking, TrackerConfig};
use noisyslam::{io, pipeline, Error, Frame, FrameSequence, Intrinsics};

#[derive(Parser)]
#[command(name = "noisyslam", version, about = "Noisy RGB-D sequence synthesis and Gaussian-splat tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a perturbation manifest to a sequence directory.
    Perturb {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to the manifest's `input`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Defaults to the manifest's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a clean sequence of a procedural room seen from an orbit.
    GenScene {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        /// Multiplies the per-frame camera motion.
        #[arg(long, default_value_t = 1)]
        speedup: usize,
        #[arg(long, default_value_t = SceneSpec::default().n_gaussians)]
        gaussians: usize,
        /// Orbit angle swept between consecutive frames at speedup 1, radians.
        #[arg(long, default_value_t = 0.015)]
        step: f64,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
    },
    /// Track a sequence and write the estimated trajectory.
    Track {
        #[arg(long = "in")]
        input: PathBuf,
        /// Tracker configuration JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Corrgs)]
        method: Method,
    },
    /// Score an estimate directory against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "rigid")]
        align: Alignment,
        /// Frame gap for the relative pose error.
        #[arg(long, default_value_t = 1)]
        delta: usize,
    },
    /// Render a map from one camera pose.
    Render {
        /// `scene.json`, a map JSON, or a directory holding `scene.json`.
        #[arg(long)]
        map: PathBuf,
        /// Camera-to-world pose as `tx ty tz qx qy qz qw`.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// Intrinsics JSON; desk-scale defaults otherwise.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Also write the depth map here.
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Spearman correlations between metrics across several reports.
    Correlate {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Write the matrix here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Corrgs,
    Baseline,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const TRACKING: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::TrackingFailure(_) => TRACKING,
                _ => DATA,
            })
        }
    }
}

fn run(command: Command) -> noisyslam::Result<()> {
    match command {
        Command::Perturb { manifest, input, out } => perturb(&manifest, input, out),
        Command::GenScene { seed, frames, out, speedup, gaussians, step, radius } => {
            gen_scene(SceneSpec { seed, n_gaussians: gaussians, ..SceneSpec::default() }, frames, speedup, step, radius, &out)
        }
        Command::Track { input, config, out, method } => track(&input, config.as_deref(), &out, method),
        Command::Eval { gt, est, report, align, delta } => evaluate(&gt, &est, &report, align, delta),
        Command::Render { map, pose, out, intrinsics, depth } => render_one(&map, &pose, &out, intrinsics.as_deref(), depth.as_deref()),
        Command::Correlate { reports, out } => correlate(&reports, out.as_deref()),
    }
}

fn perturb(manifest_path: &Path, input: Option<PathBuf>, out: Option<PathBuf>) -> noisyslam::Result<()> {
    let manifest: pipeline::PipelineManifest = io::read_json(manifest_path)?;
    let input = input.or_else(|| manifest.input.clone()).ok_or_else(|| Error::InvalidArgument("no input directory".into()))?;
    let out = out.or_else(|| manifest.output.clone()).ok_or_else(|| Error::InvalidArgument("no output directory".into()))?;
    let report = pipeline::run_pipeline_dirs(&manifest, &input, &out)?;
    for step in &report.trace {
        println!("{:?} {}", step.stage, step.detail);
    }
    println!("{} frames written to {}", report.frames, out.display());
    Ok(())
}

fn gen_scene(spec: SceneSpec, frames: usize, speedup: usize, step: f64, radius: f64, out: &Path) -> noisyslam::Result<()> {
    if frames == 0 || speedup == 0 {
        return Err(Error::InvalidArgument("frames and speedup must be positive".into()));
    }
    let map = spec.build()?;
    let span = step * speedup as f64 * frames.saturating_sub(1) as f64;
    let traj = scene::make_orbit_trajectory(frames, radius, span);
    let seq = scene::render_sequence(&map, &traj, &scene::default_intrinsics());
    io::write_sequence(&seq, Some(&traj), out)?;
    io::write_json(&spec, &out.join(io::SCENE))?;
    println!("{frames} frames of {} gaussians written to {}", map.len(), out.display());
    Ok(())
}

fn track(input: &Path, config: Option<&Path>, out: &Path, method: Method) -> noisyslam::Result<()> {
    let reader = io::SequenceReader::open(input)?;
    let frames = reader.frames()?;
    let mut cfg: TrackerConfig = match config {
        Some(p) => io::read_json(p)?,
        None => TrackerConfig::default(),
    };
    if method == Method::Baseline {
        cfg = TrackerConfig { use_cpl: false, use_pqv: false, use_carl: false, ..cfg };
    }
    let run = run_tracking(&frames, &cfg, reader.trajectory())?;
    // the restored colour with depth rendered from the final map
    let k = *reader.intrinsics();
    let estimate: FrameSequence = run
        .restored
        .iter()
        .zip(run.trajectory.poses())
        .map(|(f, pose)| {
            let rendered = render(&run.map, &pose, &k).to_frame(&k, f.timestamp, cfg.render_min_coverage);
            Frame { rgb: f.rgb.clone(), ..rendered }
        })
        .collect();
    io::write_sequence(&estimate, None, out)?;
    io::write_trajectory(&run.trajectory, &out.join(io::EST_TRAJECTORY))?;
    io::write_json(&run.reports, &out.join("reports.json"))?;
    let fallbacks = run.reports.iter().filter(|r| r.fallback).count();
    println!("tracked {} frames ({fallbacks} without correspondences), map of {} gaussians", frames.len(), run.map.len());
    Ok(())
}

/// Ground-truth images come from `clean/` when the directory holds a
/// perturbed sequence.
fn evaluate(gt_dir: &Path, est_dir: &Path, report_path: &Path, align: Alignment, delta: usize) -> noisyslam::Result<()> {
    let gt = io::read_trajectory(&gt_dir.join(io::GT_TRAJECTORY))?.anchored_to_first();
    let est = io::read_trajectory(&est_dir.join(io::EST_TRAJECTORY))?.anchored_to_first();
    let ate = eval::ate(&gt, &est, align)?;
    let rpe = if delta < gt.len() { Some(eval::rpe(&gt, &est, delta)?) } else { None };
    let success_rate = eval::success_rate(&gt, &est).ok();
    let clean = gt_dir.join(pipeline::CLEAN_DIR);
    let reference = if clean.is_dir() { clean } else { gt_dir.to_path_buf() };
    let (psnr, depth_l1) = image_metrics(&reference, est_dir)?;
    let report = Report { ate, rpe, success_rate, psnr, depth_l1 };
    let csv = report.to_csv();
    io::write_bytes(report_path, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn image_metrics(reference: &Path, est_dir: &Path) -> noisyslam::Result<(Option<f64>, Option<f64>)> {
    if !est_dir.join(io::INTRINSICS).is_file() || !reference.join(io::INTRINSICS).is_file() {
        return Ok((None, None));
    }
    let (a, b) = (io::SequenceReader::open(reference)?, io::SequenceReader::open(est_dir)?);
    if a.len() != b.len() || a.is_empty() {
        return Ok((None, None));
    }
    let (mut psnr, mut l1, mut n_l1) = (0.0, 0.0, 0);
    for i in 0..a.len() {
        let (fa, fb) = (a.frame(i)?, b.frame(i)?);
        psnr += eval::psnr(&fa.rgb, &fb.rgb)?;
        if let Ok(d) = eval::depth_l1(&fa.depth, &fb.depth) {
            l1 += d;
            n_l1 += 1;
        }
    }
    Ok((Some(psnr / a.len() as f64), (n_l1 > 0).then(|| l1 / n_l1 as f64)))
}

fn load_map(path: &Path) -> noisyslam::Result<GaussianMap> {
    let file = if path.is_dir() { path.join(io::SCENE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::Io { path: file.clone(), source: e })?;
    if let Ok(spec) = serde_json::from_str::<SceneSpec>(&text) {
        return spec.build();
    }
    let map: GaussianMap = serde_json::from_str(&text)?;
    GaussianMap::new(map.gaussians)
}

fn render_one(map: &Path, pose: &str, out: &Path, intrinsics: Option<&Path>, depth: Option<&Path>) -> noisyslam::Result<()> {
    let map = load_map(map)?;
    let pose = io::parse_trajectory(&format!("0 {pose}"), Path::new("--pose"))?.pose(0);
    let k: Intrinsics = match intrinsics {
        Some(p) => io::read_json(p)?,
        None => scene::default_intrinsics(),
    };
    let frame = render(&map, &pose, &k).to_frame(&k, 0.0, 0.5);
    io::write_rgb_png(&frame.rgb, out)?;
    if let Some(d) = depth {
        io::write_depth_png(&io::masked_depth(&frame), d)?;
    }
    Ok(())
}

fn correlate(paths: &[PathBuf], out: Option<&Path>) -> noisyslam::Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            Report::from_csv(&text)
        })
        .collect::<noisyslam::Result<Vec<_>>>()?;
    let matrix = eval::correlation_matrix(&reports)?;
    match out {
        Some(p) => io::write_bytes(p, matrix.as_bytes())?,
        None => print!("{matrix}"),
    }
    Ok(())
}
