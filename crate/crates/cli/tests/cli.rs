use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn noisyslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisyslam")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = noisyslam(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn scene(dir: &Path, frames: usize) -> PathBuf {
    let seq = dir.join("seq");
    ok(&["gen-scene", "--seed", "2", "--frames", &frames.to_string(), "--gaussians", "20000", "--out", s(&seq)]);
    seq
}

#[test]
fn help_and_version_exit_zero() {
    assert!(noisyslam(&["--help"]).status.success());
    assert!(noisyslam(&["--version"]).status.success());
    assert!(noisyslam(&["track", "--help"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(noisyslam(&["--bogus"]).status.code(), Some(1));
    assert_eq!(noisyslam(&["track"]).status.code(), Some(1));
    assert_eq!(noisyslam(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = noisyslam(&["track", "--in", s(&dir.path().join("nothing")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_manifest_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let seq = scene(dir.path(), 3);
    let manifest = dir.path().join("m.json");
    fs::write(&manifest, "{}").unwrap();
    let out = dir.path().join("out");
    ok(&["perturb", "--manifest", s(&manifest), "--in", s(&seq), "--out", s(&out)]);
    let listed = files(&seq);
    assert_eq!(files(&out), listed);
    for f in listed {
        assert_eq!(fs::read(seq.join(&f)).unwrap(), fs::read(out.join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn unknown_manifest_field_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let seq = scene(dir.path(), 2);
    let manifest = dir.path().join("m.json");
    fs::write(&manifest, r#"{"perturbation": []}"#).unwrap();
    let out = noisyslam(&["perturb", "--manifest", s(&manifest), "--in", s(&seq), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn perturbed_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let seq = scene(dir.path(), 4);
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"seed": 4, "perturbations": [
            {"stage": "rgb", "kind": "gaussian_noise", "level": 2},
            {"stage": "depth", "kind": "random_missing", "level": 1, "mode": "dynamic"}
        ]}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["perturb", "--manifest", s(&manifest), "--in", s(&seq), "--out", s(&a)]);
    ok(&["perturb", "--manifest", s(&manifest), "--in", s(&seq), "--out", s(&b)]);
    assert!(a.join("clean").is_dir());
    for f in files(&a) {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn generate_track_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let seq = scene(dir.path(), 6);
    let config = dir.path().join("tracker.json");
    fs::write(&config, r#"{"matcher": {"kind": "oracle", "sigma_px": 1.0, "outlier_fraction": 0.0, "max_matches": 300, "seed": 0}}"#)
        .unwrap();
    let est = dir.path().join("est");
    ok(&["track", "--in", s(&seq), "--config", s(&config), "--out", s(&est)]);
    assert!(est.join("traj_est.txt").is_file());
    assert!(est.join("reports.json").is_file());

    let report = dir.path().join("report.csv");
    let printed = ok(&["eval", "--gt", s(&seq), "--est", s(&est), "--report", s(&report)]);
    let csv = fs::read_to_string(&report).unwrap();
    assert_eq!(printed, csv);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    // a pixel spans about 2.5 cm here, so a few centimetres is still on track
    assert!(col("ate") < 0.05, "{csv}");
    assert!(col("psnr") > 20.0, "{csv}");

    let corr = ok(&["correlate", "--reports", s(&report), s(&report), s(&report)]);
    assert!(corr.starts_with("metric,ate"), "{corr}");
}

#[test]
fn render_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let seq = scene(dir.path(), 1);
    let img = dir.path().join("view.png");
    let depth = dir.path().join("view_depth.png");
    let gt = fs::read_to_string(seq.join("traj_gt.txt")).unwrap();
    let line = gt.lines().find(|l| !l.starts_with('#')).unwrap();
    let pose = line.split_whitespace().skip(1).collect::<Vec<_>>().join(" ");
    ok(&["render", "--map", s(&seq), "--pose", &pose, "--out", s(&img), "--depth", s(&depth)]);
    let rendered = fs::read(&img).unwrap();
    assert_eq!(rendered, fs::read(seq.join("rgb/frame_000000.png")).unwrap());
    assert_eq!(&fs::read(&img).unwrap()[1..4], b"PNG");
    assert!(depth.is_file());
    let bad = noisyslam(&["render", "--map", s(&seq), "--pose", "0 0", "--out", s(&img)]);
    assert_eq!(bad.status.code(), Some(2));
}
