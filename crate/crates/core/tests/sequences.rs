use std::fs;
use std::path::{Path, PathBuf};

use noisyslam::eval::{ate, Alignment};
use noisyslam::io;
use noisyslam::pipeline::{run_pipeline_dirs, PipelineManifest, CLEAN_DIR};
use noisyslam::scene::{make_orbit_trajectory, render_sequence, SceneSpec};
use noisyslam::tracking::{run_tracking, MatcherConfig, TrackerConfig};
use noisyslam::Intrinsics;
use sha2::{Digest, Sha256};

fn k() -> Intrinsics {
    Intrinsics::new(30.0, 30.0, 39.5, 29.5, 80, 60).unwrap()
}

fn write_room(dir: &Path, frames: usize, span: f64) {
    let spec = SceneSpec { seed: 4, n_gaussians: 30_000, extent: 3.0 };
    let traj = make_orbit_trajectory(frames, 1.0, span);
    let seq = render_sequence(&spec.build().unwrap(), &traj, &k());
    io::write_sequence(&seq, Some(&traj), dir).unwrap();
    io::write_json(&spec, &dir.join(io::SCENE)).unwrap();
}

fn listing(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

fn digest(root: &Path) -> String {
    let mut h = Sha256::new();
    for f in listing(root) {
        h.update(f.to_string_lossy().as_bytes());
        h.update(fs::read(root.join(f)).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest(json: &str) -> PipelineManifest {
    serde_json::from_str(json).unwrap()
}

#[test]
fn empty_manifest_copies_every_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    write_room(&input, 4, 0.1);
    run_pipeline_dirs(&PipelineManifest::default(), &input, &output).unwrap();
    assert_eq!(listing(&input), listing(&output));
    assert_eq!(digest(&input), digest(&output));
}

#[test]
fn depth_only_manifest_leaves_colour_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    write_room(&input, 3, 0.1);
    run_pipeline_dirs(&manifest(r#"{"perturbations": [{"stage": "depth", "kind": "edge_erosion", "level": 4}]}"#), &input, &output)
        .unwrap();
    for i in 0..3 {
        let name = io::frame_name(i);
        assert_eq!(fs::read(input.join("rgb").join(&name)).unwrap(), fs::read(output.join("rgb").join(&name)).unwrap());
        assert_ne!(fs::read(input.join("depth").join(&name)).unwrap(), fs::read(output.join("depth").join(&name)).unwrap());
    }
    assert_eq!(digest(&input.join("depth")), digest(&output.join(CLEAN_DIR).join("depth")));
}

#[test]
fn seeded_runs_hash_identically_and_seeds_matter() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_room(&input, 6, 0.2);
    let json = |seed: u64| {
        format!(
            r#"{{"seed": {seed}, "perturbations": [
                {{"stage": "rgb", "kind": "shot_noise", "level": 2, "mode": "dynamic"}},
                {{"stage": "depth", "kind": "random_missing", "level": 3}},
                {{"stage": "desync", "delta": 1, "mode": "dynamic"}}
            ]}}"#
        )
    };
    let run = |seed: u64, name: &str| {
        let out = tmp.path().join(name);
        run_pipeline_dirs(&manifest(&json(seed)), &input, &out).unwrap();
        digest(&out)
    };
    let (a, b, c) = (run(11, "a"), run(11, "b"), run(12, "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn faster_motion_keeps_every_kth_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    write_room(&input, 9, 0.4);
    run_pipeline_dirs(&manifest(r#"{"perturbations": [{"stage": "motion", "kind": "faster", "level": 1, "factor": 4}]}"#), &input, &output)
        .unwrap();
    let rows = |dir: &Path| -> Vec<Vec<f64>> {
        let text = fs::read_to_string(dir.join(io::GT_TRAJECTORY)).unwrap();
        text.lines().filter(|l| !l.starts_with('#')).map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect()).collect()
    };
    let (gt_in, gt_out) = (rows(&input), rows(&output));
    assert_eq!(gt_out.len(), 3);
    for (j, i) in [0, 4, 8].into_iter().enumerate() {
        assert!(gt_out[j].iter().zip(&gt_in[i]).all(|(a, b)| (a - b).abs() < 1e-12), "{:?} vs {:?}", gt_out[j], gt_in[i]);
        assert_eq!(fs::read(input.join("rgb").join(io::frame_name(i))).unwrap(), fs::read(output.join("rgb").join(io::frame_name(j))).unwrap());
    }
}

#[test]
fn perturbed_sequence_tracks_from_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, output) = (tmp.path().join("in"), tmp.path().join("out"));
    write_room(&input, 5, 0.3);
    run_pipeline_dirs(&manifest(r#"{"seed": 3, "perturbations": [{"stage": "rgb", "kind": "brightness", "level": 3}]}"#), &input, &output)
        .unwrap();
    let reader = io::SequenceReader::open(&output).unwrap();
    let cfg = TrackerConfig { matcher: MatcherConfig::oracle(), ..TrackerConfig::corrgs() };
    let run = run_tracking(&reader.frames().unwrap(), &cfg, reader.trajectory()).unwrap();
    let gt = reader.trajectory().unwrap().anchored_to_first();
    let e = ate(&gt, &run.trajectory, Alignment::Rigid).unwrap();
    // one pixel is about 5 cm at this focal length
    assert!(e < 0.02, "ate {e}");
}
