//! Frame-by-frame tracking and mapping: correspondence-guided pose
//! initialization, pose quality verification, appearance restoration,
//! gradient refinement and densification.

pub mod matcher;
pub mod registration;
pub mod restoration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{Frame, Image};
use crate::perturb::filters::gaussian_blur;
use crate::poseopt::{refine_pose, RefineConfig};
use crate::splat::{densify, fit_seeded, render_loss, render_with, GaussianMap};
use crate::trajectory::Trajectory;

pub use matcher::{Match2D, MatchContext, Matcher, MatcherConfig, OracleMatcher, PatchMatcher};
pub use registration::{
    lift_matches, soft_l1, solve_relative_pose, Correspondence3D, RelativePose, SolveOptions, MIN_CORRESPONDENCES,
};
pub use restoration::{apply_restoration, fit_restoration, RestorationModel};

/// Everything the tracker can be told, as read from a JSON config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub use_cpl: bool,
    pub use_pqv: bool,
    pub use_carl: bool,
    /// Predict each pose by repeating the last inter-frame motion; otherwise
    /// start from the previous pose.
    pub constant_velocity: bool,
    pub matcher: MatcherConfig,
    pub refine: RefineConfig,
    pub solve: SolveOptions,
    /// Matches below this confidence are ignored.
    pub min_confidence: f64,
    /// Fewest matches needed before attempting the relative-pose solve.
    pub min_matches: usize,
    /// Coverage below which the rendered depth used for lifting is VOID.
    pub render_min_coverage: f64,
    /// Pixels whose rendered coverage is below this receive new Gaussians.
    pub densify_tau: f64,
    pub densify_stride: usize,
    /// Sweeps fitting each batch of new Gaussians to the frame it came from.
    pub fit_passes: usize,
    /// Tracking fails after more consecutive fallbacks than this.
    pub max_consecutive_fallbacks: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::corrgs()
    }
}

impl TrackerConfig {
    pub fn corrgs() -> Self {
        TrackerConfig {
            use_cpl: true,
            use_pqv: true,
            use_carl: true,
            constant_velocity: true,
            matcher: MatcherConfig::default(),
            refine: RefineConfig::default(),
            solve: SolveOptions::default(),
            min_confidence: 0.2,
            min_matches: 20,
            render_min_coverage: 0.5,
            densify_tau: 0.5,
            densify_stride: 1,
            fit_passes: 5,
            max_consecutive_fallbacks: 5,
        }
    }

    /// Pure gradient tracking: no correspondences, no verification, no
    /// restoration.
    pub fn baseline() -> Self {
        TrackerConfig { use_cpl: false, use_pqv: false, use_carl: false, ..TrackerConfig::corrgs() }
    }
}

/// The map and the poses estimated so far.
#[derive(Debug, Clone)]
pub struct SlamState {
    pub map: GaussianMap,
    /// World-to-camera poses, frame 0 at the identity.
    pub poses: Vec<Pose>,
    pub consecutive_fallbacks: usize,
}

impl SlamState {
    /// Anchors the world at frame 0 and builds the initial map from it.
    pub fn new(frame0: &Frame, cfg: &TrackerConfig) -> Result<Self> {
        frame0.validate()?;
        let empty = Image::new(frame0.width(), frame0.height(), 1);
        let mut state = SlamState { map: GaussianMap::default(), poses: vec![Pose::identity()], consecutive_fallbacks: 0 };
        state.extend_map(frame0, &Pose::identity(), &empty, cfg);
        if state.map.is_empty() {
            return Err(Error::InsufficientData("first frame has no valid depth".into()));
        }
        Ok(state)
    }

    /// Seeds Gaussians where `coverage` is thin and fits them to `frame`.
    /// Returns how many were added.
    pub fn extend_map(&mut self, frame: &Frame, pose: &Pose, coverage: &Image, cfg: &TrackerConfig) -> usize {
        let before = self.map.len();
        self.map = densify(&self.map, frame, pose, coverage, cfg.densify_tau, cfg.densify_stride);
        if self.map.len() > before {
            fit_seeded(&mut self.map, before, frame, pose, cfg.fit_passes, &cfg.refine.settings);
        }
        self.map.len() - before
    }

    /// Where the next frame is expected to be seen from.
    pub fn predict(&self, constant_velocity: bool) -> Pose {
        let n = self.poses.len();
        let last = self.poses[n - 1];
        if constant_velocity && n >= 2 {
            let step = last.compose(&self.poses[n - 2].inverse());
            step.compose(&last)
        } else {
            last
        }
    }
}

/// A correspondence-based pose proposal and what it was built from.
#[derive(Debug, Clone)]
pub struct CplCandidate {
    pub pose: Pose,
    pub relative: RelativePose,
    pub rendered: Frame,
    /// Matches that survived the confidence filter and lifting, aligned
    /// with `correspondences`.
    pub matches: Vec<Match2D>,
    pub correspondences: Vec<Correspondence3D>,
}

#[derive(Debug, Clone)]
pub enum CplOutcome {
    Candidate(Box<CplCandidate>),
    /// The proposal could not be formed; the reason is for diagnostics.
    Fallback(String),
}

/// Proposes a pose by matching a render at `init` against `obs` and
/// solving for the rigid motion between the lifted matches.
pub fn cpl_initialize(
    map: &GaussianMap,
    init: &Pose,
    obs: &Frame,
    matcher: &dyn Matcher,
    frame_index: usize,
    round: u32,
    cfg: &TrackerConfig,
) -> CplOutcome {
    if map.is_empty() {
        return CplOutcome::Fallback("empty map".into());
    }
    let k = &obs.intrinsics;
    let out = render_with(map, init, k, &cfg.refine.settings);
    let rendered = out.to_frame(k, obs.timestamp, cfg.render_min_coverage);
    let ctx = MatchContext { map, render_pose: init, frame_index, round };
    let matches: Vec<Match2D> = matcher
        .find_matches(&rendered, obs, &ctx)
        .into_iter()
        .filter(|m| m.confidence >= cfg.min_confidence)
        .collect();
    if matches.len() < cfg.min_matches {
        return CplOutcome::Fallback(format!("{} matches, need {}", matches.len(), cfg.min_matches));
    }
    let (matches, correspondences): (Vec<_>, Vec<_>) = matches
        .into_iter()
        .filter_map(|m| lift_matches(&[m], &rendered.depth, &obs.depth, k).pop().map(|c| (m, c)))
        .unzip();
    let relative = match solve_relative_pose(&correspondences, &cfg.solve) {
        Ok(r) => r,
        Err(e) => return CplOutcome::Fallback(e.to_string()),
    };
    let pose = relative.to_pose().compose(init);
    CplOutcome::Candidate(Box::new(CplCandidate { pose, relative, rendered, matches, correspondences }))
}

/// Render loss of `pose` against `obs`.
pub fn pose_loss(map: &GaussianMap, pose: &Pose, obs: &Frame, cfg: &RefineConfig) -> f64 {
    render_loss(&render_with(map, pose, &obs.intrinsics, &cfg.settings), obs, &cfg.weights)
}

/// The lower-loss pose of the two with both losses; ties keep `naive`.
pub fn pose_quality_verify(
    map: &GaussianMap,
    cpl_pose: &Pose,
    naive_pose: &Pose,
    obs: &Frame,
    cfg: &RefineConfig,
) -> (Pose, f64, f64) {
    let l_cpl = pose_loss(map, cpl_pose, obs, cfg);
    let l_naive = pose_loss(map, naive_pose, obs, cfg);
    let pick = match choose(l_cpl, l_naive) {
        Choice::Cpl => *cpl_pose,
        Choice::Naive => *naive_pose,
    };
    (pick, l_cpl, l_naive)
}

/// Which candidate verification keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Cpl,
    Naive,
}

/// Strictly lower loss wins; ties keep the naive pose.
pub fn choose(l_cpl: f64, l_naive: f64) -> Choice {
    if l_cpl < l_naive {
        Choice::Cpl
    } else {
        Choice::Naive
    }
}

/// Blur applied to both images before colors are sampled.
pub const COLOR_SAMPLE_SIGMA: f64 = 1.0;

/// Observed/rendered color pairs for restoration fitting.
///
/// Each lifted rendered point is carried into the observed view by `pose`,
/// taken relative to the pose the candidate was rendered at, and the
/// observed image is sampled where it lands.
pub fn correspondence_colors(cand: &CplCandidate, render_pose: &Pose, pose: &Pose, obs: &Frame) -> Vec<([f64; 3], [f64; 3])> {
    let k = &obs.intrinsics;
    let rel = pose.compose(&render_pose.inverse());
    let rendered = gaussian_blur(&cand.rendered.rgb, COLOR_SAMPLE_SIGMA);
    let observed = gaussian_blur(&obs.rgb, COLOR_SAMPLE_SIGMA);
    let sample = |img: &Image, u: f64, v: f64| -> Option<[f64; 3]> {
        Some([img.bilinear(u, v, 0)?, img.bilinear(u, v, 1)?, img.bilinear(u, v, 2)?])
    };
    cand.matches
        .iter()
        .zip(&cand.correspondences)
        .filter_map(|(m, c)| {
            let x = rel.transform_point(&c.p_r);
            if x.z <= 0.0 {
                return None;
            }
            let (u, v) = k.project(&x);
            Some((sample(&observed, u, v)?, sample(&rendered, m.u_r, m.v_r)?))
        })
        .collect()
}

/// What happened while tracking one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub index: usize,
    /// Correspondences that could not produce a proposal in the first round.
    pub fallback: bool,
    /// Rounds in which the correspondence proposal won verification.
    pub cpl_accepted: u32,
    pub matches: usize,
    pub restoration: Option<RestorationModel>,
    pub loss: f64,
    pub added_gaussians: usize,
}

/// Tracks one frame, updating the map unless correspondence search failed.
/// Returns the pose and the restored observation.
pub fn track_frame(
    state: &mut SlamState,
    obs: &Frame,
    matcher: &dyn Matcher,
    cfg: &TrackerConfig,
) -> Result<(Pose, Frame, FrameReport)> {
    obs.validate()?;
    let index = state.poses.len();
    let naive = state.predict(cfg.constant_velocity);
    let mut pose = naive;
    let mut restored = obs.clone();
    let mut report = FrameReport {
        index,
        fallback: false,
        cpl_accepted: 0,
        matches: 0,
        restoration: None,
        loss: f64::NAN,
        added_gaussians: 0,
    };

    if cfg.use_cpl {
        match cpl_initialize(&state.map, &naive, obs, matcher, index, 0, cfg) {
            CplOutcome::Candidate(cand) => {
                report.matches = cand.matches.len();
                pose = verify(state, &cand.pose, &naive, obs, cfg, &mut report);
                if cfg.use_carl {
                    let model = fit_restoration(&correspondence_colors(&cand, &naive, &pose, obs));
                    restored = obs.with_rgb(apply_restoration(&model, &obs.rgb));
                    report.restoration = Some(model);
                }
                if let CplOutcome::Candidate(second) = cpl_initialize(&state.map, &pose, &restored, matcher, index, 1, cfg) {
                    pose = verify(state, &second.pose, &pose, &restored, cfg, &mut report);
                }
            }
            CplOutcome::Fallback(_) => report.fallback = true,
        }
    }

    if report.fallback {
        state.consecutive_fallbacks += 1;
        if state.consecutive_fallbacks > cfg.max_consecutive_fallbacks {
            return Err(Error::TrackingFailure(format!(
                "frame {index}: {} consecutive frames without usable correspondences",
                state.consecutive_fallbacks
            )));
        }
    } else {
        state.consecutive_fallbacks = 0;
    }

    let refined = refine_pose(&state.map, &pose, &restored, &cfg.refine);
    pose = refined.pose;
    report.loss = refined.loss;

    if !report.fallback {
        let coverage = render_with(&state.map, &pose, &obs.intrinsics, &cfg.refine.settings).coverage;
        report.added_gaussians = state.extend_map(&restored, &pose, &coverage, cfg);
    }
    state.poses.push(pose);
    Ok((pose, restored, report))
}

fn verify(state: &SlamState, cand: &Pose, current: &Pose, obs: &Frame, cfg: &TrackerConfig, report: &mut FrameReport) -> Pose {
    if !cfg.use_pqv {
        report.cpl_accepted += 1;
        return *cand;
    }
    let (pick, l_cpl, l_cur) = pose_quality_verify(&state.map, cand, current, obs, &cfg.refine);
    if l_cpl < l_cur {
        report.cpl_accepted += 1;
    }
    pick
}

/// A whole tracked sequence.
#[derive(Debug, Clone)]
pub struct TrackingRun {
    pub trajectory: Trajectory,
    pub restored: Vec<Frame>,
    pub reports: Vec<FrameReport>,
    pub map: GaussianMap,
}

/// Tracks a sequence from its first frame. `gt` is only consulted by the
/// oracle matcher and is re-anchored so that its first pose is the identity.
pub fn run_tracking(frames: &[Frame], cfg: &TrackerConfig, gt: Option<&Trajectory>) -> Result<TrackingRun> {
    let Some(first) = frames.first() else {
        return Err(Error::InsufficientData("empty sequence".into()));
    };
    let anchored = gt.map(|t| t.anchored_to_first().poses());
    if let Some(p) = &anchored {
        if p.len() != frames.len() {
            return Err(Error::invalid(format!("{} ground-truth poses for {} frames", p.len(), frames.len())));
        }
    }
    let matcher = cfg.matcher.build(anchored.as_deref())?;
    let mut state = SlamState::new(first, cfg)?;
    let mut restored = vec![first.clone()];
    let mut reports = vec![FrameReport {
        index: 0,
        fallback: false,
        cpl_accepted: 0,
        matches: 0,
        restoration: None,
        loss: 0.0,
        added_gaussians: state.map.len(),
    }];
    for obs in &frames[1..] {
        let (_, r, report) = track_frame(&mut state, obs, matcher.as_ref(), cfg)?;
        restored.push(r);
        reports.push(report);
    }
    let entries = frames.iter().map(|f| f.timestamp).zip(state.poses.iter().copied()).collect();
    Ok(TrackingRun { trajectory: Trajectory::new(entries)?, restored, reports, map: state.map })
}
