//! Trajectory, image and rank-correlation metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, VOID};
use crate::trajectory::Trajectory;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Alignment applied before the absolute trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    None,
    /// Rotation and translation, no scale.
    #[default]
    Rigid,
}

impl std::str::FromStr for Alignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Alignment::None),
            "rigid" => Ok(Alignment::Rigid),
            _ => Err(Error::invalid(format!("unknown alignment {s:?}"))),
        }
    }
}

fn same_length(gt: &Trajectory, est: &Trajectory) -> Result<()> {
    if gt.len() != est.len() {
        return Err(Error::invalid(format!("trajectory lengths differ: {} vs {}", gt.len(), est.len())));
    }
    if gt.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    Ok(())
}

fn centers(t: &Trajectory) -> Vec<Vector3<f64>> {
    t.entries().iter().map(|(_, p)| p.camera_center()).collect()
}

/// Rotation and translation minimizing `sum |R a_i + t - b_i|^2`.
pub fn rigid_align(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = a.len() as f64;
    let ca = a.iter().sum::<Vector3<f64>>() / n;
    let cb = b.iter().sum::<Vector3<f64>>() / n;
    let h = a.iter().zip(b).fold(Matrix3::zeros(), |acc, (x, y)| acc + (y - cb) * (x - ca).transpose());
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    (r, cb - r * ca)
}

/// RMSE of camera-position differences.
pub fn ate(gt: &Trajectory, est: &Trajectory, align: Alignment) -> Result<f64> {
    same_length(gt, est)?;
    let g = centers(gt);
    let mut e = centers(est);
    if align == Alignment::Rigid {
        let (r, t) = rigid_align(&e, &g);
        e.iter_mut().for_each(|p| *p = r * *p + t);
    }
    let sse: f64 = g.iter().zip(&e).map(|(a, b)| (a - b).norm_squared()).sum();
    Ok((sse / g.len() as f64).sqrt())
}

/// RMSE of the translation discrepancy between relative motions `delta`
/// frames apart.
pub fn rpe(gt: &Trajectory, est: &Trajectory, delta: usize) -> Result<f64> {
    same_length(gt, est)?;
    if delta == 0 || delta >= gt.len() {
        return Err(Error::invalid(format!("delta {delta} outside 1..{}", gt.len())));
    }
    let (g, e) = (gt.poses(), est.poses());
    // poses are world-to-camera, so the camera-to-world motion from i to j is
    // P_i P_j^-1 and its translation is that of the camera displacement
    let rel = |p: &[crate::geometry::Pose], i: usize| p[i].compose(&p[i + delta].inverse()).translation();
    let n = gt.len() - delta;
    let sse: f64 = (0..n).map(|i| (rel(&g, i) - rel(&e, i)).norm_squared()).sum();
    Ok((sse / n as f64).sqrt())
}

/// Estimated path length over ground-truth path length.
pub fn success_rate(gt: &Trajectory, est: &Trajectory) -> Result<f64> {
    same_length(gt, est)?;
    let path = |c: Vec<Vector3<f64>>| c.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();
    let lg = path(centers(gt));
    if lg == 0.0 {
        return Err(Error::InsufficientData("ground truth has zero path length".into()));
    }
    Ok(path(centers(est)) / lg)
}

/// Peak signal-to-noise ratio of `[0, 1]` images, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("image shapes differ"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len().max(1) as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Mean absolute depth difference over pixels valid in both maps.
pub fn depth_l1(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("depth shapes differ"));
    }
    let (sum, n) = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| **x != VOID && **y != VOID)
        .fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y).abs(), n + 1));
    if n == 0 {
        return Err(Error::InsufficientData("no pixel has depth in both maps".into()));
    }
    Ok(sum / n as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = r);
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("rank correlation needs at least 3 values".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)))
}

/// Metrics of one tracked sequence, written as a two-line CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub ate: f64,
    pub rpe: Option<f64>,
    pub success_rate: Option<f64>,
    /// Mean PSNR of estimated or restored RGB against ground truth.
    pub psnr: Option<f64>,
    pub depth_l1: Option<f64>,
}

const COLUMNS: [&str; 5] = ["ate", "rpe", "success_rate", "psnr", "depth_l1"];

impl Report {
    pub fn values(&self) -> [Option<f64>; 5] {
        [Some(self.ate), self.rpe, self.success_rate, self.psnr, self.depth_l1]
    }

    pub fn to_csv(&self) -> String {
        let mut s = COLUMNS.join(",");
        s.push('\n');
        let cells: Vec<String> = self.values().iter().map(|v| v.map(|v| format!("{v:.9}")).unwrap_or_default()).collect();
        let _ = writeln!(s, "{}", cells.join(","));
        s
    }

    pub fn from_csv(text: &str) -> Result<Report> {
        let bad = |reason: &str| Error::invalid(format!("metric report: {reason}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split(',').map(str::trim).collect();
        let row: Vec<&str> = lines.next().ok_or_else(|| bad("no data row"))?.split(',').map(str::trim).collect();
        if header.len() != row.len() {
            return Err(bad("header and row lengths differ"));
        }
        let get = |name: &str| -> Result<Option<f64>> {
            match header.iter().position(|h| *h == name) {
                None => Ok(None),
                Some(i) if row[i].is_empty() => Ok(None),
                Some(i) => row[i].parse().map(Some).map_err(|_| bad(&format!("{name} is not a number"))),
            }
        };
        Ok(Report {
            ate: get("ate")?.ok_or_else(|| bad("missing ate"))?,
            rpe: get("rpe")?,
            success_rate: get("success_rate")?,
            psnr: get("psnr")?,
            depth_l1: get("depth_l1")?,
        })
    }
}

/// Spearman correlation between every pair of metrics across reports, as a
/// CSV matrix. Metrics missing from any report are left out.
pub fn correlation_matrix(reports: &[Report]) -> Result<String> {
    let cols: Vec<usize> = (0..COLUMNS.len()).filter(|&c| reports.iter().all(|r| r.values()[c].is_some())).collect();
    let series: Vec<Vec<f64>> = cols.iter().map(|&c| reports.iter().map(|r| r.values()[c].unwrap()).collect()).collect();
    let mut s = String::from("metric");
    cols.iter().for_each(|&c| s += &format!(",{}", COLUMNS[c]));
    s.push('\n');
    for (i, &c) in cols.iter().enumerate() {
        s += COLUMNS[c];
        for j in 0..cols.len() {
            s += &format!(",{:.6}", spearman(&series[i], &series[j])?);
        }
        s.push('\n');
    }
    Ok(s)
}
