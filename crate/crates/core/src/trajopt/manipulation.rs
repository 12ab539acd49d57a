use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::baseline::Bcb;
use super::base::BangBang;
use super::{lerp_input, resample, rk4, Resimulation, Trajectory, TrajectoryStatus, TrajoptError};
use crate::collocation::{solve_ocp, OcpGuess, OcpModel, OcpSpec};
use crate::nlp::{AlmOptions, AlmStatus};
use crate::robot::{RobotModel, SimplifiedState};
use crate::stability::{inradius, polygon_edges, signed_distance, zmp_of, ZmpPoint};

pub struct ManipulationProblem<'a> {
    pub robot: &'a RobotModel,
    /// Support vector `Rᵀ·(0, 0, g)` of the fixed base attitude.
    pub gravity: Vector3<f64>,
    pub start: SimplifiedState,
    pub goal: SimplifiedState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManipulationOptions {
    pub intervals: usize,
    /// ZMP clearance required at grid points, as a fraction of the polygon inradius.
    pub margin_fraction: f64,
    pub tightening_rounds: usize,
    pub tightening_factor: f64,
    pub resim_density: usize,
    pub refine: bool,
    pub tf_max: f64,
    /// Initial guess duration relative to the phase-plane time.
    pub guess_stretch: f64,
    pub smoothing: f64,
    /// Fraction by which the rate limits are shrunk inside the OCP, so that
    /// motion between grid points stays within the true limits.
    pub rate_backoff: f64,
    /// Enforces the ZMP and rate rows at interval midpoints as well.
    pub midpoint_path: bool,
    pub solver: AlmOptions,
}

impl Default for ManipulationOptions {
    fn default() -> Self {
        Self {
            intervals: 40,
            margin_fraction: 0.02,
            tightening_rounds: 10,
            tightening_factor: 0.9,
            resim_density: 10,
            refine: true,
            tf_max: 120.0,
            guess_stretch: 1.2,
            smoothing: 1e-5,
            rate_backoff: 1e-2,
            midpoint_path: false,
            solver: AlmOptions {
                max_inner: 40,
                objective_rtol: 1e-4,
                ..AlmOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationResult {
    /// States `(q1, q1_dot, d, d_dot)`, inputs `(u_q1, u_d)`.
    pub trajectory: Trajectory,
    pub resim: Resimulation,
    pub baseline_time: f64,
    pub u_d_bound: f64,
    pub tightening_rounds: usize,
    pub refined: bool,
    pub iterations: usize,
}

/// Full-model ZMP of a reduced-arm state and input, with the base frame
/// accelerating by `base_accel` (expressed in `F0`).
pub fn reduced_zmp(
    robot: &RobotModel,
    gravity: &Vector3<f64>,
    x: &SimplifiedState,
    u: (f64, f64),
    base_accel: Vector3<f64>,
) -> Result<ZmpPoint, TrajoptError> {
    let (q, qd, qdd) = robot.simplified_to_full(x, u)?;
    let pts = robot.mass_points_fixed_base(&q, &qd, &qdd, base_accel);
    Ok(zmp_of(&pts, gravity)?)
}

fn state_of(x: &[f64]) -> SimplifiedState {
    SimplifiedState {
        q1: x[0],
        q1_dot: x[1],
        d: x[2],
        d_dot: x[3],
    }
}

struct ArmOcp<'a> {
    robot: &'a RobotModel,
    gravity: Vector3<f64>,
    edges: Vec<(Vector2<f64>, Vector2<f64>)>,
    margin: f64,
    rate_scale: f64,
}

impl OcpModel for ArmOcp<'_> {
    fn nx(&self) -> usize {
        4
    }
    fn nu(&self) -> usize {
        2
    }
    fn np(&self) -> usize {
        self.edges.len() + 2
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = u[0];
        dx[2] = x[3];
        dx[3] = u[1];
    }
    fn path(&self, x: &[f64], u: &[f64], g: &mut [f64]) {
        let ne = self.edges.len();
        match reduced_zmp(self.robot, &self.gravity, &state_of(x), (u[0], u[1]), Vector3::zeros()) {
            Ok(z) => {
                for (k, (a, n)) in self.edges.iter().enumerate() {
                    g[k] = self.margin - n.dot(&(z.v() - a));
                }
            }
            Err(_) => g[..ne].iter_mut().for_each(|v| *v = 10.0),
        }
        let lim = self.rate_scale * self.robot.reach_rate_limit(x[2]).unwrap_or(0.0);
        g[ne] = x[3] - lim;
        g[ne + 1] = -x[3] - lim;
    }
}

fn profile_guess(b1: &Bcb, b2: &Bcb, tf: f64, intervals: usize) -> OcpGuess {
    let (p1, p2) = (b1.stretched(tf), b2.stretched(tf));
    let mut g = OcpGuess {
        tf,
        states: Vec::with_capacity(intervals + 1),
        inputs: Vec::with_capacity(intervals + 1),
    };
    for k in 0..=intervals {
        let t = tf * k as f64 / intervals as f64;
        let (a, ad, add) = p1.eval(t);
        let (b, bd, bdd) = p2.eval(t);
        g.states.push(vec![a, ad, b, bd]);
        g.inputs.push(vec![add, bdd]);
    }
    g
}

fn refine_guess(traj: &Trajectory, intervals: usize) -> OcpGuess {
    let tf = traj.duration();
    let at: Vec<f64> = (0..=intervals).map(|k| tf * k as f64 / intervals as f64).collect();
    OcpGuess {
        tf,
        states: resample(&traj.times, &traj.states, &at),
        inputs: resample(&traj.times, &traj.inputs, &at),
    }
}

fn arm_trajectory(
    robot: &RobotModel,
    gravity: &Vector3<f64>,
    times: &[f64],
    states: &[Vec<f64>],
    inputs: &[Vec<f64>],
    status: TrajectoryStatus,
) -> Result<Trajectory, TrajoptError> {
    let mut traj = Trajectory::empty(&["q1", "q1_dot", "d", "d_dot"], &["u_q1", "u_d"], status);
    for k in 0..times.len() {
        let z = reduced_zmp(robot, gravity, &state_of(&states[k]), (inputs[k][0], inputs[k][1]), Vector3::zeros())?;
        let m = signed_distance(&robot.support_polygon, z.v());
        traj.push(times[k], states[k].clone(), inputs[k].clone(), z, m);
    }
    Ok(traj)
}

/// Replays the arm inputs with RK4 at `density` steps per interval. The
/// base frame accelerates along its y axis by `base_accel(t)`; after the
/// arm finishes it is held at rest until `horizon`.
fn resimulate_arm(
    robot: &RobotModel,
    gravity: &Vector3<f64>,
    traj: &Trajectory,
    density: usize,
    base_accel: &dyn Fn(f64) -> f64,
    horizon: f64,
) -> Result<Resimulation, TrajoptError> {
    let jl = &robot.joint_limits;
    let mut out = Resimulation {
        times: Vec::new(),
        zmp: Vec::new(),
        margin: Vec::new(),
        accel_ratio: 0.0,
        rate_ratio: 0.0,
    };
    let mut record = |t: f64, x: &[f64; 4], u: (f64, f64)| -> Result<(), TrajoptError> {
        let s = state_of(x);
        let (q, qd, qdd) = robot.simplified_to_full(&s, u)?;
        let pts = robot.mass_points_fixed_base(&q, &qd, &qdd, Vector3::new(0.0, base_accel(t), 0.0));
        let z = zmp_of(&pts, gravity)?;
        for (i, l) in jl.iter().enumerate() {
            out.accel_ratio = out.accel_ratio.max(qdd[i].abs() / l.accel);
            out.rate_ratio = out.rate_ratio.max(qd[i].abs() / l.rate);
        }
        out.times.push(t);
        out.zmp.push(z);
        out.margin.push(signed_distance(&robot.support_polygon, z.v()));
        Ok(())
    };
    let first = &traj.states[0];
    let mut x = [first[0], first[1], first[2], first[3]];
    let density = density.max(1);
    let mut step = 0.01;
    for k in 0..traj.len().saturating_sub(1) {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let h = (t1 - t0) / density as f64;
        step = h;
        let u = |t: f64| {
            let v = lerp_input(&traj.times, &traj.inputs, k, t);
            (v[0], v[1])
        };
        for j in 0..density {
            let t = t0 + j as f64 * h;
            record(t, &x, u(t))?;
            x = rk4(
                |t, s: &[f64; 4]| {
                    let (a, b) = u(t);
                    [s[1], a, s[3], b]
                },
                t,
                &x,
                h,
            );
        }
    }
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    record(t_end, &x, (0.0, 0.0))?;
    if horizon > t_end {
        let rest = [x[0], 0.0, x[2], 0.0];
        let count = ((horizon - t_end) / step.max(1e-3)).ceil() as usize;
        for j in 1..=count {
            let t = t_end + (horizon - t_end) * j as f64 / count as f64;
            record(t, &rest, (0.0, 0.0))?;
        }
    }
    Ok(out)
}

/// Re-simulation of an arm trajectory combined with a straight base motion
/// that starts at the same time.
pub fn combined_resimulation(
    robot: &RobotModel,
    gravity: &Vector3<f64>,
    arm: &Trajectory,
    base: &BangBang,
    density: usize,
) -> Result<Resimulation, TrajoptError> {
    let horizon = arm.duration().max(base.duration);
    resimulate_arm(robot, gravity, arm, density, &|t| base.eval(t).2, horizon)
}

fn rest(s: &SimplifiedState) -> bool {
    s.q1_dot == 0.0 && s.d_dot == 0.0
}

/// Minimum-time reduced-arm motion whose full-model ZMP stays inside the
/// support polygon, certified by fine-step re-simulation.
pub fn solve_manipulation_ocp(
    p: &ManipulationProblem,
    opts: &ManipulationOptions,
) -> Result<ManipulationResult, TrajoptError> {
    let robot = p.robot;
    let arm = robot.reduced()?;
    let poly = &robot.support_polygon;
    let margin = opts.margin_fraction * inradius(poly);
    for (name, s) in [("start", &p.start), ("goal", &p.goal)] {
        let z = reduced_zmp(robot, &p.gravity, s, (0.0, 0.0), Vector3::zeros())?;
        if signed_distance(poly, z.v()) <= margin {
            return Err(TrajoptError::Infeasible(format!("{name} configuration is not statically stable")));
        }
    }
    if !rest(&p.start) || !rest(&p.goal) {
        return Err(TrajoptError::Infeasible("endpoints must be at rest".into()));
    }

    let jl = &robot.joint_limits;
    let l = arm.link_length;
    let d_ref = p.start.d.abs().max(p.goal.d.abs());
    let c_ref = (1.0 - (d_ref / (2.0 * l)).powi(2)).max(0.0).sqrt();
    let a_q2 = jl[1].accel.min(jl[2].accel / 2.0).min(jl[3].accel);
    let r_q2 = jl[1].rate.min(jl[2].rate / 2.0).min(jl[3].rate);
    let mut u_d = 2.0 * l * c_ref * a_q2;

    let b1 = Bcb::new(p.start.q1, p.goal.q1 - p.start.q1, jl[0].rate, jl[0].accel);
    let b2 = Bcb::new(p.start.d, p.goal.d - p.start.d, robot.reach_rate_limit(d_ref)?, u_d);
    let baseline_time = b1.duration.max(b2.duration);

    let model = ArmOcp {
        robot,
        gravity: p.gravity,
        edges: polygon_edges(poly),
        margin,
        rate_scale: 1.0 - opts.rate_backoff,
    };
    let rs = 1.0 - opts.rate_backoff;

    if baseline_time == 0.0 {
        let x = vec![p.start.q1, 0.0, p.start.d, 0.0];
        let traj = arm_trajectory(robot, &p.gravity, &[0.0], &[x], &[vec![0.0, 0.0]], TrajectoryStatus::Optimal)?;
        let resim = resimulate_arm(robot, &p.gravity, &traj, 1, &|_| 0.0, 0.0)?;
        return Ok(ManipulationResult {
            trajectory: traj,
            resim,
            baseline_time,
            u_d_bound: u_d,
            tightening_rounds: 0,
            refined: false,
            iterations: 0,
        });
    }

    let mut n = opts.intervals;
    let mut guess = profile_guess(&b1, &b2, baseline_time * opts.guess_stretch, n);
    let mut refined = false;
    let mut rounds = 0;
    let mut iterations = 0;
    let fixed = |s: &SimplifiedState| vec![Some(s.q1), Some(0.0), Some(s.d), Some(0.0)];
    loop {
        let spec = OcpSpec {
            x_lower: vec![jl[0].lower, -rs * jl[0].rate, arm.reach_min, -rs * 2.0 * l * r_q2],
            x_upper: vec![jl[0].upper, rs * jl[0].rate, arm.reach_max, rs * 2.0 * l * r_q2],
            u_lower: vec![-jl[0].accel, -u_d],
            u_upper: vec![jl[0].accel, u_d],
            x0: fixed(&p.start),
            xf: fixed(&p.goal),
            tf_lower: 0.0,
            tf_upper: opts.tf_max,
            intervals: n,
            smoothing: opts.smoothing,
            midpoint_path: opts.midpoint_path,
        };
        let sol = solve_ocp(&model, &spec, &guess, &opts.solver);
        iterations += sol.iterations;
        // a budget-limited iterate still counts when it is feasible; the
        // re-simulation below decides whether it is usable
        let ok = sol.max_defect <= 1e-6 && sol.max_path_violation <= 1e-6;
        if !ok {
            return Err(TrajoptError::SolverStall {
                status: sol.status,
                violation: sol.max_defect.max(sol.max_path_violation),
            });
        }
        let status = if sol.status == AlmStatus::Converged {
            TrajectoryStatus::Optimal
        } else {
            TrajectoryStatus::Feasible
        };
        let traj = arm_trajectory(robot, &p.gravity, &sol.times, &sol.states, &sol.inputs, status)?;
        let resim = resimulate_arm(robot, &p.gravity, &traj, opts.resim_density, &|_| 0.0, 0.0)?;
        if resim.accel_ratio > 1.0 + 1e-6 && rounds < opts.tightening_rounds {
            u_d *= opts.tightening_factor;
            rounds += 1;
            guess = refine_guess(&traj, n);
            continue;
        }
        if resim.min_margin() < 0.0 || resim.rate_ratio > 1.0 + 1e-6 {
            if opts.refine && !refined {
                refined = true;
                n *= 2;
                guess = refine_guess(&traj, n);
                continue;
            }
            return Err(TrajoptError::Infeasible(format!(
                "re-simulation leaves the limits (margin {:.3e}, rate ratio {:.6})",
                resim.min_margin(),
                resim.rate_ratio
            )));
        }
        if resim.accel_ratio > 1.0 + 1e-6 {
            return Err(TrajoptError::Infeasible(format!(
                "mapped joint accelerations exceed limits after {rounds} tightening rounds"
            )));
        }
        return Ok(ManipulationResult {
            trajectory: traj,
            resim,
            baseline_time,
            u_d_bound: u_d,
            tightening_rounds: rounds,
            refined,
            iterations,
        });
    }
}
