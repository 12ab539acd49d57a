//! Executes a loaded scenario and writes its artifacts.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use terrazmp::planner::{terrain_rrt, PlanContext, PlannerError};
use terrazmp::relocation::{combine, path_segments, RelocationError, RelocationOptions};
use terrazmp::robot::SimplifiedState;
use terrazmp::stability::{inradius, MassAggregates};
use terrazmp::terrain::{gravity_in_base, STANDARD_GRAVITY};
use terrazmp::trajopt::{
    bang_bang_base, base_accel_bounds, combined_resimulation, phase_plane_baseline, receding_horizon_smooth,
    solve_manipulation_ocp, ArmPoints, ManipulationProblem, ManipulationResult, Resimulation, SmoothingReport,
    Trajectory, TrajoptError,
};
use thiserror::Error;

use crate::scenario::{ConfigError, Loaded, Mode};

/// Command-line overrides of scenario values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub samples: Option<usize>,
    pub no_smooth: bool,
    pub no_traction_opt: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Output { .. } => 1,
            RunError::Infeasible(_) => 2,
            RunError::Budget(_) => 3,
        }
    }
}

impl From<TrajoptError> for RunError {
    fn from(e: TrajoptError) -> Self {
        match e {
            TrajoptError::SolverStall { .. } => RunError::Budget(e.to_string()),
            _ => RunError::Infeasible(e.to_string()),
        }
    }
}

impl From<PlannerError> for RunError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::IterationBudgetExhausted { .. } => RunError::Budget(e.to_string()),
            _ => RunError::Infeasible(e.to_string()),
        }
    }
}

impl From<RelocationError> for RunError {
    fn from(e: RelocationError) -> Self {
        match e {
            RelocationError::Planner(p) => p.into(),
            RelocationError::Trajopt(t) => t.into(),
            RelocationError::Segment { edge, source } => match RunError::from(source) {
                RunError::Budget(m) => RunError::Budget(format!("edge {edge}: {m}")),
                other => RunError::Infeasible(format!("edge {edge}: {other}")),
            },
        }
    }
}

/// Result of a run: the summary written to `summary.json` and the files
/// produced in `dir`.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub summary: Value,
    pub files: Vec<String>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, RunError> {
        fs::create_dir_all(&dir).map_err(|e| RunError::Output {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn bytes(&mut self, name: &str, data: Vec<u8>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| RunError::Output {
            path,
            message: e.to_string(),
        })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, f: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| RunError::Output {
            path: self.dir.join(name),
            message: e.to_string(),
        })?;
        self.bytes(name, buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), RunError> {
        let mut buf = serde_json::to_vec_pretty(v).map_err(|e| RunError::Output {
            path: self.dir.join(name),
            message: e.to_string(),
        })?;
        buf.push(b'\n');
        self.bytes(name, buf)
    }
}

/// Columns `t, x_zmp, y_zmp, margin`.
pub fn write_zmp_csv<W: std::io::Write>(resim: &Resimulation, w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "x_zmp", "y_zmp", "margin"])?;
    for k in 0..resim.times.len() {
        wr.write_record([
            resim.times[k].to_string(),
            resim.zmp[k].x.to_string(),
            resim.zmp[k].y.to_string(),
            resim.margin[k].to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn resim_json(r: &Resimulation) -> Value {
    json!({
        "min_margin": r.min_margin(),
        "accel_ratio": r.accel_ratio,
        "rate_ratio": r.rate_ratio,
        "samples": r.times.len(),
    })
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs the scenario and writes its artifacts. `summary.json` is written
/// for infeasible and budget-exhausted runs as well.
pub fn run(loaded: &Loaded, ov: &Overrides) -> Result<Outcome, RunError> {
    let sc = &loaded.scenario;
    let dir = ov.out.clone().unwrap_or_else(|| loaded.output_dir());
    let mut w = Writer::new(dir.clone())?;
    let seed = ov.seed.unwrap_or(sc.seed);
    let start = Instant::now();
    let mut timing = serde_json::Map::new();
    let result = match sc.mode {
        Mode::Manipulate | Mode::BaselineCompare => manipulate(loaded, &mut w, &mut timing),
        Mode::Relocate => relocate(loaded, ov, seed, &mut w, &mut timing),
        Mode::MonteCarlo => monte_carlo(loaded, ov, seed, &mut w, &mut timing),
    };
    timing.insert("total_s".into(), json!(secs(start)));
    let (results, error) = match &result {
        Ok(v) => (v.clone(), None),
        Err(RunError::Config(_)) | Err(RunError::Output { .. }) => return Err(result.unwrap_err()),
        Err(e) => (Value::Null, Some(e)),
    };
    let summary = json!({
        "scenario": sc.name,
        "mode": sc.mode,
        "seed": seed,
        "success": error.is_none(),
        "exit_code": error.map_or(0, RunError::exit_code),
        "error": error.map(|e| e.to_string()),
        "results": results,
        "timing": timing,
    });
    w.json("summary.json", &summary)?;
    result?;
    Ok(Outcome {
        dir,
        summary,
        files: w.files,
    })
}

type Timing = serde_json::Map<String, Value>;

fn manipulate(loaded: &Loaded, w: &mut Writer, timing: &mut Timing) -> Result<Value, RunError> {
    let sc = &loaded.scenario;
    let robot = &loaded.robot;
    let (Some(att), Some(arm)) = (sc.attitude, sc.arm) else {
        return Err(ConfigError::new("arm", "missing").into());
    };
    let g = loaded.terrain.as_ref().map_or(STANDARD_GRAVITY, |t| t.gravity);
    let gravity = gravity_in_base(&att.attitude(), g);
    let p = ManipulationProblem {
        robot,
        gravity,
        start: SimplifiedState::at_rest(arm.start.q1, arm.start.d),
        goal: SimplifiedState::at_rest(arm.goal.q1, arm.goal.d),
    };
    let opts = &sc.solver.manipulation;
    let t = Instant::now();
    let r = solve_manipulation_ocp(&p, opts)?;
    timing.insert("manipulation_s".into(), json!(secs(t)));
    w.csv("trajectory.csv", |b| r.trajectory.write_csv(b))?;
    let mut results = json!({
        "t_f": r.trajectory.duration(),
        "status": r.trajectory.status,
        "iterations": r.iterations,
        "baseline_time": r.baseline_time,
        "tightening_rounds": r.tightening_rounds,
        "refined": r.refined,
        "arm_resim": resim_json(&r.resim),
    });

    let mut resim = r.resim.clone();
    if let Some(bm) = sc.base_motion {
        let t = Instant::now();
        let margin = 0.5 * opts.margin_fraction * inradius(&robot.support_polygon);
        let agg = heaviest_lever(robot, &r.trajectory)?;
        let bounds = base_accel_bounds(&r.resim.zmp, &robot.support_polygon, &agg, gravity.z, margin)?
            .intersect(-bm.accel, bm.accel);
        let bb = bang_bang_base(bm.distance, bounds, bm.v_max)?;
        resim = combined_resimulation(robot, &gravity, &r.trajectory, &bb, opts.resim_density)?;
        timing.insert("base_s".into(), json!(secs(t)));
        w.csv("base.csv", |b| bb.to_trajectory(200).write_csv(b))?;
        results["base"] = json!({
            "accel_lower": bounds.lower,
            "accel_upper": bounds.upper,
            "first": bb.first,
            "last": bb.last,
            "peak_velocity": bb.peak,
            "duration": bb.duration,
            "combined_resim": resim_json(&resim),
        });
    }
    w.csv("zmp.csv", |b| write_zmp_csv(&resim, b))?;

    if sc.mode == Mode::BaselineCompare {
        let t = Instant::now();
        let q0 = robot.simplified_joints(arm.start.q1, arm.start.d).map_err(TrajoptError::from)?;
        let qf = robot.simplified_joints(arm.goal.q1, arm.goal.d).map_err(TrajoptError::from)?;
        let base = phase_plane_baseline(robot, &q0, &qf, &gravity, 400)?;
        timing.insert("baseline_s".into(), json!(secs(t)));
        w.csv("baseline.csv", |b| base.write_csv(b))?;
        results["baseline"] = json!({
            "t_f": base.duration(),
            "min_margin": base.min_margin(),
            "exits_polygon": base.min_margin() < 0.0,
        });
    }
    Ok(results)
}

/// Aggregates of the sample with the largest `M_z / M`, which gives the
/// largest ZMP shift per unit base acceleration.
fn heaviest_lever(robot: &terrazmp::robot::RobotModel, arm: &Trajectory) -> Result<MassAggregates, RunError> {
    let mut best: Option<MassAggregates> = None;
    for s in &arm.states {
        let agg = ArmPoints::new(robot, s[0], s[2])?.aggregates();
        if best.as_ref().map_or(true, |b| agg.mz / agg.m > b.mz / b.m) {
            best = Some(agg);
        }
    }
    best.ok_or_else(|| RunError::Infeasible("empty arm trajectory".into()))
}

fn relocate(loaded: &Loaded, ov: &Overrides, seed: u64, w: &mut Writer, timing: &mut Timing) -> Result<Value, RunError> {
    let sc = &loaded.scenario;
    let robot = &loaded.robot;
    let (Some(terrain), Some(spec)) = (&loaded.terrain, sc.relocation) else {
        return Err(ConfigError::new("relocation", "missing").into());
    };
    let mut params = sc.solver.planner.clone();
    params.seed = seed;
    if ov.no_traction_opt {
        params.traction_opt = false;
    }
    let opts = RelocationOptions {
        segment: sc.solver.segment,
        manipulation: sc.solver.manipulation,
        smoothing: sc.solver.smoothing,
        smooth: sc.solver.smooth.unwrap_or(true) && !ov.no_smooth,
    };
    let arm = ArmPoints::new(robot, spec.arm.q1, spec.arm.d)?;
    let ctx = PlanContext::new(robot, terrain, &params);

    let t = Instant::now();
    let planned = terrain_rrt(
        &ctx,
        Vector2::new(spec.start[0], spec.start[1]),
        spec.heading,
        Vector2::new(spec.goal[0], spec.goal[1]),
        arm,
    );
    timing.insert("planner_s".into(), json!(secs(t)));
    let (graph, path) = match planned {
        Ok(v) => v,
        Err(PlannerError::IterationBudgetExhausted { iterations, graph }) => {
            w.json("tree.json", &graph)?;
            return Err(PlannerError::IterationBudgetExhausted { iterations, graph }.into());
        }
        Err(e) => return Err(e.into()),
    };
    w.csv("path.csv", |b| path.write_csv(b))?;
    w.json(
        "certificates.json",
        &json!({
            "edges": path.edges,
            "reconfigurations": path.reconfigurations,
            "arms": path.arms.iter().map(|a| [a.q1, a.d]).collect::<Vec<_>>(),
        }),
    )?;

    let t = Instant::now();
    let (segments, fallbacks) = path_segments(robot, terrain, &path, &opts)?;
    timing.insert("segments_s".into(), json!(secs(t)));
    let segment_time: f64 = segments.iter().map(|s| s.duration()).sum();

    let t = Instant::now();
    let (smoothed, report) = if opts.smooth {
        receding_horizon_smooth(robot, terrain, segments, |xy| ctx.polyline_clear(xy), &opts.smoothing)?
    } else {
        let report = SmoothingReport {
            time_before: segment_time,
            time_after: segment_time,
            ..SmoothingReport::default()
        };
        (segments, report)
    };
    timing.insert("smoothing_s".into(), json!(secs(t)));
    let (trajectory, resim) = combine(&smoothed);
    w.csv("trajectory.csv", |b| trajectory.write_csv(b))?;
    w.csv("zmp.csv", |b| write_zmp_csv(&resim, b))?;

    let speeds = trajectory.states.iter().map(|s| s[2]);
    let v_min = speeds.clone().fold(f64::INFINITY, f64::min);
    let v_max = speeds.fold(f64::NEG_INFINITY, f64::max);
    let mean_abs_x = path.nodes.iter().map(|n| n.zmp.x.abs()).sum::<f64>() / path.nodes.len() as f64;
    Ok(json!({
        "iterations": graph.iterations,
        "graph_nodes": graph.nodes.len(),
        "path_nodes": path.nodes.len(),
        "path_length": path.length(),
        "reconfigurations": path.reconfigurations,
        "mean_abs_x_zmp": mean_abs_x,
        "segments": path.edges.len(),
        "fallbacks": fallbacks,
        "segment_time": segment_time,
        "smoothing": report,
        "total_time": trajectory.duration(),
        "trajectory_status": trajectory.status,
        "velocity_range": [v_min, v_max],
        "resim": resim_json(&resim),
    }))
}

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    roll_deg: f64,
    index: usize,
    q1_start: f64,
    q1_goal: f64,
    status: &'static str,
    t_f: f64,
    iterations: usize,
    wall_s: f64,
}

fn classify(r: &Result<ManipulationResult, TrajoptError>) -> (&'static str, f64, usize) {
    match r {
        Ok(m) if m.resim.min_margin() >= 0.0 && m.resim.within_limits(1e-6) => {
            ("success", m.trajectory.duration(), m.iterations)
        }
        Ok(m) => ("uncertified", m.trajectory.duration(), m.iterations),
        Err(TrajoptError::Infeasible(_)) => ("infeasible_endpoint", f64::NAN, 0),
        Err(TrajoptError::SolverStall { .. }) => ("solver_stall", f64::NAN, 0),
        Err(_) => ("error", f64::NAN, 0),
    }
}

fn histogram(times: &[f64], width: f64) -> Vec<(f64, usize)> {
    let mut bins: Vec<(f64, usize)> = Vec::new();
    for &t in times {
        let k = (t / width).floor() as usize;
        if bins.len() <= k {
            bins.extend((bins.len()..=k).map(|i| (i as f64 * width, 0)));
        }
        bins[k].1 += 1;
    }
    bins
}

fn monte_carlo(loaded: &Loaded, ov: &Overrides, seed: u64, w: &mut Writer, timing: &mut Timing) -> Result<Value, RunError> {
    let sc = &loaded.scenario;
    let robot = &loaded.robot;
    let (Some(att), Some(mc)) = (sc.attitude, &sc.monte_carlo) else {
        return Err(ConfigError::new("monte_carlo", "missing").into());
    };
    let samples = ov.samples.unwrap_or(mc.samples);
    if samples == 0 {
        return Err(ConfigError::new("samples", "must be at least 1").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = mc.yaw_range;
    let pairs: Vec<(f64, f64)> = (0..samples).map(|_| (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi))).collect();
    let g = loaded.terrain.as_ref().map_or(STANDARD_GRAVITY, |t| t.gravity);
    let opts = &sc.solver.manipulation;

    let mut all: Vec<Sample> = Vec::with_capacity(samples * mc.rolls_deg.len());
    let mut table = Vec::new();
    for &roll in &mc.rolls_deg {
        let t = Instant::now();
        let attitude = terrazmp::terrain::BaseAttitude::from_pitch_roll(att.pitch_deg.to_radians(), roll.to_radians());
        let gravity: Vector3<f64> = gravity_in_base(&attitude, g);
        let rows: Vec<Sample> = pairs
            .par_iter()
            .enumerate()
            .map(|(index, &(a, b))| {
                let p = ManipulationProblem {
                    robot,
                    gravity,
                    start: SimplifiedState::at_rest(a, mc.d),
                    goal: SimplifiedState::at_rest(b, mc.d),
                };
                let t = Instant::now();
                let r = solve_manipulation_ocp(&p, opts);
                let wall_s = secs(t);
                let (status, t_f, iterations) = classify(&r);
                Sample {
                    roll_deg: roll,
                    index,
                    q1_start: a,
                    q1_goal: b,
                    status,
                    t_f,
                    iterations,
                    wall_s,
                }
            })
            .collect();
        timing.insert(format!("roll_{roll}_s"), json!(secs(t)));
        let ok: Vec<f64> = rows.iter().filter(|s| s.status == "success").map(|s| s.wall_s).collect();
        let count = |st: &str| rows.iter().filter(|s| s.status == st).count();
        table.push(json!({
            "roll_deg": roll,
            "samples": rows.len(),
            "successes": ok.len(),
            "success_rate": ok.len() as f64 / rows.len() as f64,
            "infeasible_endpoint": count("infeasible_endpoint"),
            "solver_stall": count("solver_stall"),
            "uncertified": count("uncertified"),
            "error": count("error"),
        }));
        timing.insert(format!("roll_{roll}_solve_time_histogram"), json!(histogram(&ok, 0.25)));
        all.extend(rows);
    }
    w.csv("montecarlo.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["roll_deg", "sample", "q1_start", "q1_goal", "status", "t_f", "iterations"])?;
        for s in &all {
            wr.write_record([
                s.roll_deg.to_string(),
                s.index.to_string(),
                s.q1_start.to_string(),
                s.q1_goal.to_string(),
                s.status.to_string(),
                s.t_f.to_string(),
                s.iterations.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    })?;
    Ok(json!({ "samples": samples, "rates": table }))
}

