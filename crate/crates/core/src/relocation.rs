//! Relocation pipeline: quasi-static path, per-edge trajectories, smoothing.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{terrain_rrt, EdgeKind, PlanContext, PlanGraph, PlannerError, PlannerParams, QuasiStaticPath};
use crate::robot::{RobotModel, SimplifiedState};
use crate::terrain::{gravity_in_base, TerrainModel};
use crate::trajopt::{
    receding_horizon_smooth, solve_manipulation_ocp, solve_segment_ocp, ArmPoints, ManipulationOptions,
    ManipulationProblem, Pose, Resimulation, Segment, SegmentKind, SegmentOptions, SegmentProblem, SmoothingOptions,
    SmoothingReport, Trajectory, TrajectoryStatus, TrajoptError, MOBILE_INPUTS, MOBILE_STATES,
};

#[derive(Debug, Error)]
pub enum RelocationError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("edge {edge}: {source}")]
    Segment { edge: usize, source: TrajoptError },
    #[error(transparent)]
    Trajopt(#[from] TrajoptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelocationOptions {
    pub segment: SegmentOptions,
    pub manipulation: ManipulationOptions,
    pub smoothing: SmoothingOptions,
    pub smooth: bool,
}

impl Default for RelocationOptions {
    fn default() -> Self {
        Self {
            segment: SegmentOptions::default(),
            manipulation: ManipulationOptions::default(),
            smoothing: SmoothingOptions::default(),
            smooth: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocationResult {
    pub graph: PlanGraph,
    pub path: QuasiStaticPath,
    /// One piece per path edge.
    pub segments: Vec<Segment>,
    /// Drive edges that kept the quasi-static fallback.
    pub fallbacks: usize,
    pub smoothed: Vec<Segment>,
    pub report: SmoothingReport,
    pub trajectory: Trajectory,
    pub resim: Resimulation,
}

impl RelocationResult {
    pub fn segment_time(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.trajectory.duration()
    }
}

fn pose(n: &crate::planner::PlanNode) -> Pose {
    Pose::new(n.x, n.y, n.heading)
}

/// Arm motion at a fixed base pose, mapped onto the mobile columns.
fn reconfiguration_segment(
    robot: &RobotModel,
    terrain: &TerrainModel,
    at: Pose,
    before: &ArmPoints,
    after: &ArmPoints,
    opts: &ManipulationOptions,
) -> Result<Segment, TrajoptError> {
    let att = terrain.base_attitude(at.x, at.y, at.heading)?;
    let p = ManipulationProblem {
        robot,
        gravity: gravity_in_base(&att, terrain.gravity),
        start: SimplifiedState::at_rest(before.q1, before.d),
        goal: SimplifiedState::at_rest(after.q1, after.d),
    };
    let r = solve_manipulation_ocp(&p, opts)?;
    let a = &r.trajectory;
    let mut traj = Trajectory::empty(&MOBILE_STATES, &MOBILE_INPUTS, a.status);
    for k in 0..a.len() {
        let s = &a.states[k];
        let u = &a.inputs[k];
        traj.push(
            a.times[k],
            vec![at.x, at.y, 0.0, at.heading, 0.0, s[0], s[1], s[2], s[3]],
            vec![0.0, 0.0, u[0], u[1]],
            a.zmp[k],
            a.margin[k],
        );
    }
    Ok(Segment {
        kind: SegmentKind::Reconfigure,
        start: at,
        goal: at,
        points: after.clone(),
        trajectory: traj,
        resim: r.resim,
        edges: 1,
    })
}

/// Trajectory of every path edge, solved independently. Returns the pieces
/// and the number of drive edges that kept the quasi-static fallback.
pub fn path_segments(
    robot: &RobotModel,
    terrain: &TerrainModel,
    path: &QuasiStaticPath,
    opts: &RelocationOptions,
) -> Result<(Vec<Segment>, usize), RelocationError> {
    let solved: Vec<Result<(Segment, bool), RelocationError>> = path
        .edges
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            let a = &path.nodes[k];
            let b = &path.nodes[k + 1];
            let wrap = |source| RelocationError::Segment { edge: k, source };
            match e.kind {
                EdgeKind::Reconfigure => reconfiguration_segment(
                    robot,
                    terrain,
                    pose(a),
                    &path.arms[a.arm],
                    &path.arms[b.arm],
                    &opts.manipulation,
                )
                .map(|s| (s, false))
                .map_err(wrap),
                EdgeKind::Drive => {
                    let pts = &path.arms[a.arm];
                    let p = SegmentProblem {
                        robot,
                        terrain,
                        points: pts,
                        start: pose(a),
                        goal: pose(b),
                        free_final_heading: false,
                    };
                    let r = solve_segment_ocp(&p, &opts.segment).map_err(wrap)?;
                    Ok((
                        Segment {
                            kind: SegmentKind::Drive,
                            start: p.start,
                            goal: p.goal,
                            points: pts.clone(),
                            trajectory: r.trajectory,
                            resim: r.resim,
                            edges: 1,
                        },
                        r.used_fallback,
                    ))
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(solved.len());
    let mut fallbacks = 0;
    for s in solved {
        let (seg, fb) = s?;
        fallbacks += usize::from(fb);
        out.push(seg);
    }
    Ok((out, fallbacks))
}

/// Concatenated trajectory and re-simulation of consecutive pieces.
pub fn combine(segments: &[Segment]) -> (Trajectory, Resimulation) {
    let mut traj = Trajectory::empty(&MOBILE_STATES, &MOBILE_INPUTS, TrajectoryStatus::Optimal);
    let mut resim = Resimulation {
        times: Vec::new(),
        zmp: Vec::new(),
        margin: Vec::new(),
        accel_ratio: 0.0,
        rate_ratio: 0.0,
    };
    for s in segments {
        let offset = traj.times.last().copied().unwrap_or(0.0) - s.trajectory.times.first().copied().unwrap_or(0.0);
        traj.append(&s.trajectory);
        resim.extend(&s.resim, offset);
    }
    (traj, resim)
}

/// Plans a certified quasi-static path from `init` to `goal`, turns every
/// edge into a time-optimal piece and, when enabled, merges drive pieces.
pub fn relocate(
    robot: &RobotModel,
    terrain: &TerrainModel,
    params: &PlannerParams,
    init: Vector2<f64>,
    heading: f64,
    goal: Vector2<f64>,
    arm: ArmPoints,
    opts: &RelocationOptions,
) -> Result<RelocationResult, RelocationError> {
    let ctx = PlanContext::new(robot, terrain, params);
    let (graph, path) = terrain_rrt(&ctx, init, heading, goal, arm)?;
    let (segments, fallbacks) = path_segments(robot, terrain, &path, opts)?;
    let (smoothed, report) = if opts.smooth {
        receding_horizon_smooth(robot, terrain, segments.clone(), |xy| ctx.polyline_clear(xy), &opts.smoothing)?
    } else {
        let t: f64 = segments.iter().map(Segment::duration).sum();
        (
            segments.clone(),
            SmoothingReport {
                time_before: t,
                time_after: t,
                ..SmoothingReport::default()
            },
        )
    };
    let (trajectory, resim) = combine(&smoothed);
    Ok(RelocationResult {
        graph,
        path,
        segments,
        fallbacks,
        smoothed,
        report,
        trajectory,
        resim,
    })
}
