use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::segment::{solve_base_ocp, ArmPoints, Pose, SegmentOptions, SegmentProblem};
use super::{Resimulation, Trajectory, TrajoptError};
use crate::robot::RobotModel;
use crate::terrain::TerrainModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    /// Base motion with the arm frozen.
    Drive,
    /// Arm motion with the base at rest.
    Reconfigure,
}

/// One piece of a relocation trajectory, rest at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: Pose,
    pub goal: Pose,
    /// Arm held during a drive; the final arm of a reconfiguration.
    pub points: ArmPoints,
    pub trajectory: Trajectory,
    pub resim: Resimulation,
    /// Planner edges covered by this piece.
    pub edges: usize,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.trajectory.duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingOptions {
    /// Pieces merged per window.
    pub window: usize,
    /// Sweeps over the sequence; odd sweeps shift the windows by half a window.
    pub passes: usize,
    /// Longest mesh step of a window; long windows get more intervals
    /// than `segment.intervals`.
    pub max_step: f64,
    /// Mesh and solver budget of every window.
    pub segment: SegmentOptions,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        Self {
            window: 4,
            passes: 2,
            max_step: 0.25,
            segment: SegmentOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub windows: usize,
    pub accepted: usize,
    /// Windows whose original pieces were kept.
    pub kept: usize,
    pub iterations: usize,
    pub time_before: f64,
    pub time_after: f64,
}

fn total(segments: &[Segment]) -> f64 {
    segments.iter().map(Segment::duration).sum()
}

fn concatenated(window: &[Segment]) -> Trajectory {
    let mut t = window[0].trajectory.clone();
    for s in &window[1..] {
        t.append(&s.trajectory);
    }
    t
}

fn mergeable(a: &Segment, b: &Segment) -> bool {
    a.kind == SegmentKind::Drive && b.kind == SegmentKind::Drive && a.points == b.points
}

/// Re-solves windows of consecutive drive pieces as single rest-to-rest
/// problems, removing the stops between them. A window is replaced only
/// when its solution re-simulates inside the polygon and the limits, the
/// path passes `path_free`, and the window gets strictly faster, so the
/// total duration never grows. Reconfigurations are never merged.
pub fn receding_horizon_smooth<F>(
    robot: &RobotModel,
    terrain: &TerrainModel,
    segments: Vec<Segment>,
    path_free: F,
    opts: &SmoothingOptions,
) -> Result<(Vec<Segment>, SmoothingReport), TrajoptError>
where
    F: Fn(&[Vector2<f64>]) -> bool,
{
    let mut report = SmoothingReport {
        time_before: total(&segments),
        ..SmoothingReport::default()
    };
    let mut current = segments;
    let w = opts.window.max(2);
    for pass in 0..opts.passes {
        let mut out: Vec<Segment> = Vec::with_capacity(current.len());
        let mut i = 0;
        while i < current.len() {
            let mut r = i + 1;
            while r < current.len() && mergeable(&current[r - 1], &current[r]) {
                r += 1;
            }
            // odd passes start each run with a half window
            let mut size = if pass % 2 == 1 { (w / 2).max(1) } else { w };
            let mut k = i;
            while k < r {
                let j = (k + size).min(r);
                size = w;
                let window = &current[k..j];
                k = j;
                if window.len() < 2 {
                    out.extend(window.iter().cloned());
                    continue;
                }
                report.windows += 1;
                let before = total(window);
                let p = SegmentProblem {
                    robot,
                    terrain,
                    points: &window[0].points,
                    start: window[0].start,
                    goal: window[window.len() - 1].goal,
                    free_final_heading: false,
                };
                let mut seg = opts.segment;
                seg.intervals = seg.intervals.max((before / opts.max_step).ceil() as usize);
                let (solved, iters) = solve_base_ocp(&p, &seg, &concatenated(window), before)?;
                report.iterations += iters;
                let accepted = solved.filter(|(t, _, _)| {
                    let xy: Vec<Vector2<f64>> = t.states.iter().map(|s| Vector2::new(s[0], s[1])).collect();
                    t.duration() < before && path_free(&xy)
                });
                match accepted {
                    Some((trajectory, resim, _)) => {
                        report.accepted += 1;
                        out.push(Segment {
                            kind: SegmentKind::Drive,
                            start: p.start,
                            goal: p.goal,
                            points: window[0].points.clone(),
                            trajectory,
                            resim,
                            edges: window.iter().map(|s| s.edges).sum(),
                        });
                    }
                    None => {
                        report.kept += 1;
                        out.extend(window.iter().cloned());
                    }
                }
            }
            i = r;
        }
        current = out;
    }
    report.time_after = total(&current);
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::Bounds2;
    use crate::trajopt::{solve_segment_ocp, SegmentOptions};

    fn feller() -> RobotModel {
        RobotModel::from_json_str(include_str!("../../../../robots/feller_buncher.json")).unwrap()
    }

    fn drive(robot: &RobotModel, terrain: &TerrainModel, pts: &ArmPoints, a: Pose, b: Pose) -> Segment {
        let p = SegmentProblem {
            robot,
            terrain,
            points: pts,
            start: a,
            goal: b,
            free_final_heading: false,
        };
        let r = solve_segment_ocp(&p, &SegmentOptions::default()).unwrap();
        Segment {
            kind: SegmentKind::Drive,
            start: a,
            goal: b,
            points: pts.clone(),
            trajectory: r.trajectory,
            resim: r.resim,
            edges: 1,
        }
    }

    #[test]
    fn single_segment_is_unchanged() {
        let robot = feller();
        let terrain = TerrainModel::flat(Bounds2::square(50.0));
        let pts = ArmPoints::new(&robot, 0.0, 3.27).unwrap();
        let s = vec![drive(&robot, &terrain, &pts, Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 2.0, 0.0))];
        let (out, rep) = receding_horizon_smooth(&robot, &terrain, s.clone(), |_| true, &SmoothingOptions::default()).unwrap();
        assert_eq!(out, s);
        assert_eq!(rep.windows, 0);
    }

    #[test]
    fn collinear_segments_lose_the_stop() {
        let robot = feller();
        let terrain = TerrainModel::flat(Bounds2::square(50.0));
        let pts = ArmPoints::new(&robot, 0.0, 3.27).unwrap();
        let s = vec![
            drive(&robot, &terrain, &pts, Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 2.0, 0.0)),
            drive(&robot, &terrain, &pts, Pose::new(0.0, 2.0, 0.0), Pose::new(0.0, 4.0, 0.0)),
        ];
        let sum = total(&s);
        assert!((sum - 4.0 * 2f64.sqrt()).abs() < 0.05 * sum);
        let (out, rep) = receding_horizon_smooth(&robot, &terrain, s, |_| true, &SmoothingOptions::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].edges, 2);
        // rest-to-rest 4 m at unit acceleration
        assert!((rep.time_after - 4.0).abs() < 0.08, "{}", rep.time_after);
        assert!(rep.time_after < rep.time_before);
    }

    #[test]
    fn blocked_window_keeps_the_originals() {
        let robot = feller();
        let terrain = TerrainModel::flat(Bounds2::square(50.0));
        let pts = ArmPoints::new(&robot, 0.0, 3.27).unwrap();
        let s = vec![
            drive(&robot, &terrain, &pts, Pose::new(0.0, 0.0, 0.0), Pose::new(0.0, 2.0, 0.0)),
            drive(&robot, &terrain, &pts, Pose::new(0.0, 2.0, 0.0), Pose::new(0.0, 4.0, 0.0)),
        ];
        let (out, rep) = receding_horizon_smooth(&robot, &terrain, s.clone(), |_| false, &SmoothingOptions::default()).unwrap();
        assert_eq!(out, s);
        assert_eq!(rep.kept, rep.windows);
        assert_eq!(rep.time_after, rep.time_before);
    }
}
