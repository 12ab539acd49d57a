use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::baseline::Bcb;
use super::{rk4, Resimulation, Trajectory, TrajectoryStatus, TrajoptError, MOBILE_INPUTS, MOBILE_STATES};
use crate::collocation::{solve_ocp, OcpGuess, OcpModel, OcpSpec};
use crate::nlp::{AlmOptions, AlmStatus};
use crate::robot::{BaseLimits, RobotModel};
use crate::stability::{
    contains, dynamic_deviation_bounds, inradius, polygon_edges, relocation_envelope, signed_distance, turn_envelope,
    zmp_dynamic, MassAggregates, ZmpPoint,
};
use crate::terrain::{gravity_in_base, TerrainModel};

/// Mass points of the base and the arm held at `(q1, d)`, in `F0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPoints {
    pub q1: f64,
    pub d: f64,
    pub masses: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl ArmPoints {
    pub fn new(robot: &RobotModel, q1: f64, d: f64) -> Result<Self, TrajoptError> {
        let q = robot.simplified_joints(q1, d)?;
        Ok(Self {
            q1,
            d,
            masses: robot.masses(),
            positions: robot.link_com_positions(&q),
        })
    }

    pub fn aggregates(&self) -> MassAggregates {
        MassAggregates::from_points(&self.masses, &self.positions)
    }
}

/// Planar base pose; `heading` is kept continuous (not wrapped).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }
}

const ATT_STEP: f64 = 1e-2;

fn rotation(terrain: &TerrainModel, s: [f64; 3]) -> Result<Matrix3<f64>, TrajoptError> {
    Ok(terrain.base_attitude(s[0], s[1], s[2])?.rotation)
}

fn shifted(s: [f64; 3], d: [f64; 3], dd: [f64; 3], h: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| s[i] + h * d[i] + 0.5 * h * h * dd[i])
}

/// Dynamic ZMP of the moving base with a frozen arm.
///
/// `x = (x, y, v, ψ, ψ̇)`, `u = (u_a, u_ψ)`. The attitude derivatives along
/// the motion are taken by central differences over a short time step.
pub fn mobile_zmp(terrain: &TerrainModel, points: &ArmPoints, x: &[f64], u: &[f64]) -> Result<ZmpPoint, TrajoptError> {
    let h = ATT_STEP;
    let s = [x[0], x[1], x[3]];
    let r = rotation(terrain, s)?;
    let r2 = r.column(1).into_owned();
    let v = x[2];
    let sd = [v * r2.x, v * r2.y, x[4]];
    let zero = [0.0; 3];
    let r_dot = (rotation(terrain, shifted(s, sd, zero, h))? - rotation(terrain, shifted(s, sd, zero, -h))?) / (2.0 * h);
    let r2_dot = r_dot.column(1).into_owned();
    let p_dd = r2 * u[0] + r2_dot * v;
    let sdd = [p_dd.x, p_dd.y, u[1]];
    let r_ddot =
        (rotation(terrain, shifted(s, sd, sdd, h))? - r * 2.0 + rotation(terrain, shifted(s, sd, sdd, -h))?) / (h * h);
    let rt = r.transpose();
    let acc: Vec<Vector3<f64>> = points.positions.iter().map(|p| rt * (p_dd + r_ddot * p)).collect();
    let gravity = rt * Vector3::new(0.0, 0.0, terrain.gravity);
    Ok(zmp_dynamic(&points.masses, &points.positions, &acc, &gravity)?)
}

fn base_rhs(terrain: &TerrainModel, x: &[f64], u: &[f64]) -> [f64; 5] {
    let r2 = match terrain.base_attitude(x[0], x[1], x[3]) {
        Ok(a) => a.r2(),
        Err(_) => {
            let (s, c) = x[3].sin_cos();
            Vector3::new(-s, c, 0.0)
        }
    };
    [x[2] * r2.x, x[2] * r2.y, u[0], x[4], u[1]]
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentProblem<'a> {
    pub robot: &'a RobotModel,
    pub terrain: &'a TerrainModel,
    pub points: &'a ArmPoints,
    pub start: Pose,
    pub goal: Pose,
    /// Leaves the final heading to the optimiser.
    pub free_final_heading: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentOptions {
    pub intervals: usize,
    /// ZMP clearance at grid points, as a fraction of the polygon inradius.
    pub margin_fraction: f64,
    /// Fraction by which speed and yaw-rate limits are shrunk in the OCP.
    pub rate_backoff: f64,
    pub resim_density: usize,
    pub smoothing: f64,
    /// Largest accepted distance between the re-simulated and planned end.
    pub end_tolerance: f64,
    /// Cruise speed of the quasi-static fallback before any halving.
    pub fallback_speed: f64,
    pub fallback_rounds: usize,
    /// Skips the OCP and returns the fallback directly.
    pub fallback_only: bool,
    pub solver: AlmOptions,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            intervals: 20,
            margin_fraction: 0.02,
            rate_backoff: 1e-2,
            resim_density: 10,
            smoothing: 1e-5,
            end_tolerance: 0.02,
            fallback_speed: 1.0,
            fallback_rounds: 8,
            fallback_only: false,
            solver: AlmOptions {
                max_inner: 40,
                max_total_inner: 600,
                objective_rtol: 1e-4,
                ..AlmOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    /// Columns as in [`MOBILE_STATES`] and [`MOBILE_INPUTS`].
    pub trajectory: Trajectory,
    pub resim: Resimulation,
    /// Duration of the quasi-static fallback, if one was built.
    pub fallback_time: Option<f64>,
    pub used_fallback: bool,
    pub iterations: usize,
    /// Distance between the re-simulated end position and the goal.
    pub end_error: f64,
}

/// Samples `(t, position, rate, accel)` of a profile, doubling every phase
/// switch so that the acceleration is piecewise constant between samples.
fn bcb_samples(p: &Bcb, count: usize) -> Vec<(f64, f64, f64, f64)> {
    let s = p.distance.signum();
    let a = s * p.accel;
    let t1 = p.t_accel;
    let t2 = p.t_accel + p.t_coast;
    let mut out = Vec::new();
    if p.duration == 0.0 {
        return vec![(0.0, p.start, 0.0, 0.0)];
    }
    let acc_at = |t: f64| {
        if t < t1 {
            a
        } else if t < t2 {
            0.0
        } else {
            -a
        }
    };
    let mut times: Vec<f64> = (0..count.max(2)).map(|k| p.duration * k as f64 / (count.max(2) - 1) as f64).collect();
    times.retain(|t| (t - t1).abs() > 1e-12 && (t - t2).abs() > 1e-12);
    let mut switches = vec![(t1, a, if p.t_coast > 0.0 { 0.0 } else { -a })];
    if p.t_coast > 0.0 {
        switches.push((t2, 0.0, -a));
    }
    let mut k = 0;
    for t in times {
        while k < switches.len() && switches[k].0 < t {
            let (ts, before, after) = switches[k];
            let (pos, vel, _) = p.eval(ts);
            out.push((ts, pos, vel, before));
            out.push((ts, pos, vel, after));
            k += 1;
        }
        let (pos, vel, _) = p.eval(t);
        let acc = if t >= p.duration { -a } else { acc_at(t) };
        out.push((t, pos, vel, acc));
    }
    out
}

/// Horizontal position along the straight line `from → to` after a surface
/// arc length `s`, from a cumulative length table.
struct ArcTable {
    from: Vector2<f64>,
    dir: Vector2<f64>,
    horizontal: Vec<f64>,
    surface: Vec<f64>,
}

impl ArcTable {
    fn new(terrain: &TerrainModel, from: Vector2<f64>, to: Vector2<f64>, steps: usize) -> Result<Self, TrajoptError> {
        let len = (to - from).norm();
        let dir = if len > 0.0 { (to - from) / len } else { Vector2::zeros() };
        let mut horizontal = vec![0.0];
        let mut surface = vec![0.0];
        let mut prev = terrain.height(from.x, from.y)?;
        for k in 1..=steps {
            let l = len * k as f64 / steps as f64;
            let p = from + dir * l;
            let z = terrain.height(p.x, p.y)?;
            let dl = len / steps as f64;
            surface.push(surface[k - 1] + (dl * dl + (z - prev) * (z - prev)).sqrt());
            horizontal.push(l);
            prev = z;
        }
        Ok(Self {
            from,
            dir,
            horizontal,
            surface,
        })
    }

    fn length(&self) -> f64 {
        *self.surface.last().unwrap()
    }

    fn at(&self, s: f64) -> Vector2<f64> {
        let k = self.surface.partition_point(|&v| v < s).clamp(1, self.surface.len() - 1);
        let (s0, s1) = (self.surface[k - 1], self.surface[k]);
        let w = if s1 > s0 { ((s - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        let l = self.horizontal[k - 1] + w * (self.horizontal[k] - self.horizontal[k - 1]);
        self.from + self.dir * l
    }
}

fn mobile_row(points: &ArmPoints, x: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut s = x[..5].to_vec();
    s.extend([points.q1, 0.0, points.d, 0.0]);
    (s, vec![u[0], u[1], 0.0, 0.0])
}

fn push_mobile(
    traj: &mut Trajectory,
    p: &SegmentProblem,
    t: f64,
    x: &[f64],
    u: &[f64],
) -> Result<(), TrajoptError> {
    let z = mobile_zmp(p.terrain, p.points, x, u)?;
    let margin = signed_distance(&p.robot.support_polygon, z.v());
    let (s, i) = mobile_row(p.points, x, u);
    traj.push(t, s, i, z, margin);
    Ok(())
}

fn mobile_trajectory(status: TrajectoryStatus) -> Trajectory {
    Trajectory::empty(&MOBILE_STATES, &MOBILE_INPUTS, status)
}

/// Replays a segment trajectory with RK4 at `density` sub-steps per sample
/// interval, inputs interpolated linearly. Returns the replay and the final
/// base state `(x, y, v, ψ, ψ̇)`.
pub fn resimulate_segment(
    terrain: &TerrainModel,
    points: &ArmPoints,
    polygon: &[Vector2<f64>],
    limits: &BaseLimits,
    traj: &Trajectory,
    density: usize,
) -> Result<(Resimulation, [f64; 5]), TrajoptError> {
    let mut x = [0.0; 5];
    x.copy_from_slice(&traj.states[0][..5]);
    let mut out = Resimulation {
        times: Vec::new(),
        zmp: Vec::new(),
        margin: Vec::new(),
        accel_ratio: 0.0,
        rate_ratio: 0.0,
    };
    let record = |out: &mut Resimulation, t: f64, x: &[f64; 5], u: &[f64]| -> Result<(), TrajoptError> {
        let z = mobile_zmp(terrain, points, x, u)?;
        out.times.push(t);
        out.zmp.push(z);
        out.margin.push(signed_distance(polygon, z.v()));
        let speed = if x[2] < limits.v_min {
            1.0 + (limits.v_min - x[2]) / limits.v_max
        } else {
            x[2] / limits.v_max
        };
        out.rate_ratio = out.rate_ratio.max(speed).max(x[4].abs() / limits.yaw_rate);
        out.accel_ratio = out.accel_ratio.max(u[0].abs() / limits.accel).max(u[1].abs() / limits.yaw_accel);
        Ok(())
    };
    record(&mut out, traj.times[0], &x, &traj.inputs[0][..2])?;
    for k in 0..traj.len().saturating_sub(1) {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        if t1 <= t0 {
            continue;
        }
        let u0 = [traj.inputs[k][0], traj.inputs[k][1]];
        let u1 = [traj.inputs[k + 1][0], traj.inputs[k + 1][1]];
        let steps = density.max(1);
        let h = (t1 - t0) / steps as f64;
        let input = |t: f64| {
            let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            [u0[0] + w * (u1[0] - u0[0]), u0[1] + w * (u1[1] - u0[1])]
        };
        for j in 0..steps {
            let t = t0 + h * j as f64;
            x = rk4(|tt, s: &[f64; 5]| base_rhs(terrain, s, &input(tt)), t, &x, h);
            let te = t + h;
            record(&mut out, te, &x, &input(te))?;
        }
    }
    Ok((out, x))
}

fn end_error(x: &[f64; 5], goal: &Pose) -> f64 {
    (x[0] - goal.x).hypot(x[1] - goal.y)
}

fn certified(resim: &Resimulation) -> bool {
    resim.min_margin() >= 0.0 && resim.within_limits(1e-6)
}

/// Turn in place to the goal heading, then drive straight to the goal at
/// a speed and acceleration small enough for the dynamic ZMP to stay near
/// its quasi-static value. Halves the motion limits until the re-simulated
/// ZMP stays inside the polygon.
pub fn quasi_static_segment(
    p: &SegmentProblem,
    opts: &SegmentOptions,
) -> Result<(Trajectory, Resimulation), TrajoptError> {
    let poly = &p.robot.support_polygon;
    let lim = &p.robot.base_limits;
    let g = p.terrain.gravity;
    let agg = p.points.aggregates();
    let att_a = p.terrain.base_attitude(p.start.x, p.start.y, p.start.heading)?;
    let att_b0 = p.terrain.base_attitude(p.start.x, p.start.y, p.goal.heading)?;
    let att_b = p.terrain.base_attitude(p.goal.x, p.goal.y, p.goal.heading)?;
    let sweep = p.goal.heading - p.start.heading;

    let arc = contains(poly, &turn_envelope(&agg, &att_a, sweep), 0.0).margins.margin;
    let g_z_turn = gravity_in_base(&att_a, g).z;
    let dev = dynamic_deviation_bounds(&p.points.masses, &p.points.positions, g_z_turn, 0.0, 1.0, 0.0);
    // 2·W·S per unit of (ψ̇² + |u_ψ|)
    let ws2 = dev.turn;
    let from = Vector2::new(p.start.x, p.start.y);
    let to = Vector2::new(p.goal.x, p.goal.y);
    let driving = (to - from).norm() > 1e-9;
    let rect = if driving {
        let env = relocation_envelope(&agg, &att_b0, &att_b, g, std::f64::consts::PI, 0.0)?;
        contains(poly, &env, 0.0).margins.margin
    } else {
        f64::INFINITY
    };
    if sweep != 0.0 && arc <= 0.0 {
        return Err(TrajoptError::Infeasible(format!("turn arc leaves the polygon (margin {arc:.3e})")));
    }
    if driving && rect <= 0.0 {
        return Err(TrajoptError::Infeasible(format!("relocation box leaves the polygon (margin {rect:.3e})")));
    }
    let k_turn = 0.5 * arc;
    let (mut yaw_acc, mut yaw_rate) = if ws2 > 0.0 && k_turn.is_finite() {
        ((k_turn / (2.0 * ws2)).min(lim.yaw_accel), (k_turn / (2.0 * ws2)).sqrt().min(lim.yaw_rate))
    } else {
        (lim.yaw_accel, lim.yaw_rate)
    };
    let g_z = g_z_turn.min(gravity_in_base(&att_b, g).z);
    let lever = (agg.mz / (agg.m * g_z)).abs();
    let mut acc = if lever > 0.0 { (0.5 * rect / lever).min(lim.accel) } else { lim.accel };
    let mut speed = opts.fallback_speed.min(lim.v_max);
    let table = ArcTable::new(p.terrain, from, to, 200)?;

    for _ in 0..opts.fallback_rounds.max(1) {
        let turn = Bcb::new(p.start.heading, sweep, yaw_rate, yaw_acc);
        let drive = Bcb::new(0.0, table.length(), speed, acc);
        let mut traj = mobile_trajectory(TrajectoryStatus::Feasible);
        for (t, psi, rate, a) in bcb_samples(&turn, 40) {
            push_mobile(&mut traj, p, t, &[p.start.x, p.start.y, 0.0, psi, rate], &[0.0, a])?;
        }
        if driving {
            let t0 = turn.duration;
            for (t, s, v, a) in bcb_samples(&drive, 60) {
                let q = table.at(s);
                push_mobile(&mut traj, p, t0 + t, &[q.x, q.y, v, p.goal.heading, 0.0], &[a, 0.0])?;
            }
        }
        let (resim, end) = resimulate_segment(p.terrain, p.points, poly, lim, &traj, opts.resim_density)?;
        if certified(&resim) && end_error(&end, &p.goal) <= opts.end_tolerance {
            return Ok((traj, resim));
        }
        yaw_acc *= 0.5;
        yaw_rate *= 0.5;
        acc *= 0.5;
        speed *= 0.5;
    }
    Err(TrajoptError::Infeasible("no quasi-static time scaling passed re-simulation".into()))
}

struct BaseOcp<'a> {
    terrain: &'a TerrainModel,
    points: &'a ArmPoints,
    edges: Vec<(Vector2<f64>, Vector2<f64>)>,
    margin: f64,
}

impl OcpModel for BaseOcp<'_> {
    fn nx(&self) -> usize {
        5
    }
    fn nu(&self) -> usize {
        2
    }
    fn np(&self) -> usize {
        self.edges.len()
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx.copy_from_slice(&base_rhs(self.terrain, x, u));
    }
    fn path(&self, x: &[f64], u: &[f64], g: &mut [f64]) {
        match mobile_zmp(self.terrain, self.points, x, u) {
            Ok(z) => {
                for (i, (a, n)) in self.edges.iter().enumerate() {
                    g[i] = self.margin - n.dot(&(z.v() - a));
                }
            }
            Err(_) => g.iter_mut().for_each(|v| *v = 10.0),
        }
    }
}

fn guess_from(traj: &Trajectory, intervals: usize) -> OcpGuess {
    let tf = traj.duration();
    let t0 = traj.times[0];
    let at: Vec<f64> = (0..=intervals).map(|k| t0 + tf * k as f64 / intervals as f64).collect();
    let states: Vec<Vec<f64>> = super::resample(&traj.times, &traj.states, &at).into_iter().map(|s| s[..5].to_vec()).collect();
    let inputs = super::resample(&traj.times, &traj.inputs, &at).into_iter().map(|u| u[..2].to_vec()).collect();
    OcpGuess { tf, states, inputs }
}

/// Solves one rest-to-rest base OCP with `guess` as warm start and returns
/// the certified trajectory, or `None` when the solution does not certify.
pub(crate) fn solve_base_ocp(
    p: &SegmentProblem,
    opts: &SegmentOptions,
    guess: &Trajectory,
    tf_upper: f64,
) -> Result<(Option<(Trajectory, Resimulation, f64)>, usize), TrajoptError> {
    let lim = &p.robot.base_limits;
    let poly = &p.robot.support_polygon;
    let model = BaseOcp {
        terrain: p.terrain,
        points: p.points,
        edges: polygon_edges(poly),
        margin: opts.margin_fraction * inradius(poly),
    };
    let rs = 1.0 - opts.rate_backoff;
    let inf = f64::INFINITY;
    let spec = OcpSpec {
        x_lower: vec![-inf, -inf, lim.v_min, -inf, -rs * lim.yaw_rate],
        x_upper: vec![inf, inf, rs * lim.v_max, inf, rs * lim.yaw_rate],
        u_lower: vec![-lim.accel, -lim.yaw_accel],
        u_upper: vec![lim.accel, lim.yaw_accel],
        x0: vec![Some(p.start.x), Some(p.start.y), Some(0.0), Some(p.start.heading), Some(0.0)],
        xf: vec![
            Some(p.goal.x),
            Some(p.goal.y),
            Some(0.0),
            if p.free_final_heading { None } else { Some(p.goal.heading) },
            Some(0.0),
        ],
        tf_lower: 0.0,
        tf_upper,
        intervals: opts.intervals,
        smoothing: opts.smoothing,
        midpoint_path: true,
    };
    let sol = solve_ocp(&model, &spec, &guess_from(guess, opts.intervals), &opts.solver);
    if !(sol.max_defect <= 1e-6 && sol.max_path_violation <= 1e-6) {
        return Ok((None, sol.iterations));
    }
    let status = if sol.status == AlmStatus::Converged {
        TrajectoryStatus::Optimal
    } else {
        TrajectoryStatus::Feasible
    };
    let mut traj = mobile_trajectory(status);
    for k in 0..sol.times.len() {
        push_mobile(&mut traj, p, sol.times[k], &sol.states[k], &sol.inputs[k])?;
    }
    let (resim, end) = resimulate_segment(p.terrain, p.points, poly, lim, &traj, opts.resim_density)?;
    let err = end_error(&end, &p.goal);
    if certified(&resim) && err <= opts.end_tolerance {
        Ok((Some((traj, resim, err)), sol.iterations))
    } else {
        Ok((None, sol.iterations))
    }
}

/// Minimum-time base motion between two planner nodes with the arm frozen.
///
/// The quasi-static fallback is built first and serves as warm start and
/// as the result whenever the OCP does not return a certified, faster
/// trajectory.
pub fn solve_segment_ocp(p: &SegmentProblem, opts: &SegmentOptions) -> Result<SegmentResult, TrajoptError> {
    let poly = &p.robot.support_polygon;
    let lim = &p.robot.base_limits;
    let same_place = (p.goal.x - p.start.x).hypot(p.goal.y - p.start.y) <= 1e-9;
    if same_place && (p.free_final_heading || p.goal.heading == p.start.heading) {
        let mut traj = mobile_trajectory(TrajectoryStatus::Optimal);
        let x = [p.start.x, p.start.y, 0.0, p.start.heading, 0.0];
        push_mobile(&mut traj, p, 0.0, &x, &[0.0, 0.0])?;
        let (resim, _) = resimulate_segment(p.terrain, p.points, poly, lim, &traj, 1)?;
        return Ok(SegmentResult {
            trajectory: traj,
            resim,
            fallback_time: Some(0.0),
            used_fallback: false,
            iterations: 0,
            end_error: 0.0,
        });
    }

    let fallback = quasi_static_segment(p, opts);
    if opts.fallback_only {
        let (trajectory, resim) = fallback?;
        return Ok(SegmentResult {
            fallback_time: Some(trajectory.duration()),
            trajectory,
            resim,
            used_fallback: true,
            iterations: 0,
            end_error: 0.0,
        });
    }
    let (guess, tf_upper) = match &fallback {
        Ok((t, _)) => (t.clone(), t.duration()),
        Err(_) => {
            let dist = (p.goal.x - p.start.x).hypot(p.goal.y - p.start.y);
            let tf = 2.0 * (dist / lim.accel).sqrt() + (p.goal.heading - p.start.heading).abs() / lim.yaw_rate + 1.0;
            let mut t = mobile_trajectory(TrajectoryStatus::Feasible);
            for k in 0..=opts.intervals {
                let w = k as f64 / opts.intervals as f64;
                let x = [
                    p.start.x + w * (p.goal.x - p.start.x),
                    p.start.y + w * (p.goal.y - p.start.y),
                    0.0,
                    p.start.heading + w * (p.goal.heading - p.start.heading),
                    0.0,
                ];
                let (s, i) = mobile_row(p.points, &x, &[0.0, 0.0]);
                t.push(w * tf, s, i, ZmpPoint::new(f64::NAN, f64::NAN), f64::NAN);
            }
            (t, 4.0 * tf)
        }
    };
    let (solved, iterations) = solve_base_ocp(p, opts, &guess, tf_upper)?;
    match (solved, fallback) {
        (Some((trajectory, resim, end_error)), fb) => {
            let fallback_time = fb.as_ref().ok().map(|(t, _)| t.duration());
            if fallback_time.map_or(true, |f| trajectory.duration() < f) {
                return Ok(SegmentResult {
                    trajectory,
                    resim,
                    fallback_time,
                    used_fallback: false,
                    iterations,
                    end_error,
                });
            }
            let (trajectory, resim) = fb?;
            Ok(SegmentResult {
                fallback_time,
                trajectory,
                resim,
                used_fallback: true,
                iterations,
                end_error: 0.0,
            })
        }
        (None, Ok((trajectory, resim))) => Ok(SegmentResult {
            fallback_time: Some(trajectory.duration()),
            trajectory,
            resim,
            used_fallback: true,
            iterations,
            end_error: 0.0,
        }),
        (None, Err(e)) => Err(e),
    }
}
