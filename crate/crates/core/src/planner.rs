//! Quasi-static path search over terrain with stability certificates and
//! arm reconfiguration when the tree stops growing.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{RobotError, RobotModel};
use crate::stability::{
    contains, contains_point, relocation_envelope, turn_envelope, zmp_quasistatic, MassAggregates,
    StabilityError, StabilityMargin, ZmpEnvelope, ZmpPoint,
};
use crate::terrain::{gravity_in_base, wrap_angle, BaseAttitude, Bounds2, TerrainModel};
use crate::traction::{deviation_limit, track_lines, traction_score, traction_state};
use crate::trajopt::ArmPoints;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("initial node is not stable (margin {margin:.3} m)")]
    InitUnstable { margin: f64 },
    #[error("no path after {iterations} iterations ({nodes} nodes)", nodes = graph.nodes.len())]
    IterationBudgetExhausted { iterations: usize, graph: Box<PlanGraph> },
    #[error("none of {samples} sampled arm configurations is stable")]
    NoStableConfigFound { samples: usize },
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Robot(#[from] RobotError),
}

/// Convex no-go region in the horizontal plane, vertices counter-clockwise.
pub type Obstacle = Vec<Vector2<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub max_step: f64,
    pub goal_bias: f64,
    pub goal_radius: f64,
    pub max_iterations: usize,
    pub growth_min_nodes: usize,
    pub growth_window: usize,
    /// New nodes closer than this to an existing node are discarded, so
    /// that growth counts only new ground.
    pub min_node_spacing: f64,
    pub reconfig_samples: usize,
    /// Required clearance of every quasi-static ZMP from the polygon edges.
    pub margin: f64,
    pub mu: f64,
    /// Applies the slope-dependent limit on the lateral ZMP offset.
    pub traction_opt: bool,
    /// Largest pitch or roll change covered by one relocation rectangle.
    pub attitude_cap: f64,
    /// Rectangle inflation as a fraction of the polygon width.
    pub inflation: f64,
    /// Rectangles per edge.
    pub edge_pieces: usize,
    /// Halvings of the step allowed when an edge exceeds the attitude cap.
    pub step_halvings: usize,
    /// Sampling region; the terrain bounds when absent.
    pub region: Option<Bounds2>,
    pub obstacles: Vec<Obstacle>,
    /// Distance kept between the base reference point and any obstacle.
    pub obstacle_clearance: f64,
    /// Base acceleration (m/s²) whose fore-aft ZMP shift every node and
    /// slide must absorb on top of `margin`; zero for a purely static check.
    pub brake_reserve: f64,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            max_step: 2.0,
            goal_bias: 0.05,
            goal_radius: 2.0,
            max_iterations: 50_000,
            growth_min_nodes: 5,
            growth_window: 200,
            min_node_spacing: 0.5,
            reconfig_samples: 64,
            margin: 0.05,
            mu: 0.6,
            traction_opt: true,
            attitude_cap: 5f64.to_radians(),
            inflation: 0.01,
            edge_pieces: 4,
            step_halvings: 4,
            region: None,
            obstacles: Vec::new(),
            obstacle_clearance: 3.0,
            brake_reserve: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Continuous heading; a turn of `s` at the parent adds `s`.
    pub heading: f64,
    /// Index into [`PlanGraph::arms`].
    pub arm: usize,
    pub q: Vec<f64>,
    pub parent: Option<usize>,
    pub attitude: BaseAttitude,
    pub zmp: ZmpPoint,
    pub margin: f64,
    pub traction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    /// Turn in place at the parent, then slide straight to the child.
    Drive,
    /// Arm change at a fixed base pose.
    Reconfigure,
}

/// Evidence that an edge keeps the quasi-static ZMP inside the polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCertificate {
    pub parent: usize,
    pub child: usize,
    pub kind: EdgeKind,
    pub sweep: f64,
    pub arc: Option<ZmpEnvelope>,
    pub arc_margin: f64,
    pub rectangles: Vec<ZmpEnvelope>,
    pub rect_margin: f64,
    /// Smaller quasi-static margin of the two endpoints.
    pub endpoint_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGraph {
    pub nodes: Vec<PlanNode>,
    /// Certificate of the edge into every non-root node, in node order.
    pub edges: Vec<EdgeCertificate>,
    pub arms: Vec<ArmPoints>,
    pub seed: u64,
    /// Nodes accepted in each growth window.
    pub growth: Vec<usize>,
    /// Growth windows that triggered a reconfiguration, with the node used.
    pub reconfigurations: Vec<(usize, usize)>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationEvent {
    /// Index into the path of the node carrying the new arm.
    pub index: usize,
    pub q_before: (f64, f64),
    pub q_after: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiStaticPath {
    pub nodes: Vec<PlanNode>,
    /// `edges[k]` leads into `nodes[k + 1]`.
    pub edges: Vec<EdgeCertificate>,
    pub arms: Vec<ArmPoints>,
    pub reconfigurations: Vec<ReconfigurationEvent>,
}

impl QuasiStaticPath {
    pub fn length(&self) -> f64 {
        self.nodes.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum()
    }

    /// Columns `index, x, y, z, heading, q1..qn, margin`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.nodes.first().map_or(0, |p| p.q.len());
        let mut header: Vec<String> = ["index", "x", "y", "z", "heading"].map(String::from).to_vec();
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.push("margin".into());
        wr.write_record(&header)?;
        for (i, p) in self.nodes.iter().enumerate() {
            let mut rec = vec![i.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string(), p.heading.to_string()];
            rec.extend(p.q.iter().map(f64::to_string));
            rec.push(p.margin.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Fixed data shared by every certificate check.
pub struct PlanContext<'a> {
    pub robot: &'a RobotModel,
    pub terrain: &'a TerrainModel,
    pub params: &'a PlannerParams,
    width: f64,
    center: f64,
}

struct PoseCheck {
    attitude: BaseAttitude,
    zmp: ZmpPoint,
    margin: f64,
    traction: f64,
}

impl<'a> PlanContext<'a> {
    pub fn new(robot: &'a RobotModel, terrain: &'a TerrainModel, params: &'a PlannerParams) -> Self {
        let (lo, hi) = track_lines(&robot.support_polygon);
        Self {
            robot,
            terrain,
            params,
            width: hi - lo,
            center: 0.5 * (lo + hi),
        }
    }

    /// Quasi-static check of one pose: ZMP inside with margin, no static
    /// sliding and, with traction optimisation on, the lateral ZMP offset
    /// within the slope-dependent limit.
    fn pose(&self, x: f64, y: f64, heading: f64, agg: &MassAggregates) -> Option<PoseCheck> {
        let attitude = self.terrain.base_attitude(x, y, heading).ok()?;
        let g = gravity_in_base(&attitude, self.terrain.gravity);
        let zmp = zmp_quasistatic(agg, &g);
        let c = contains_point(&self.robot.support_polygon, zmp, self.params.margin);
        if !c.inside || !self.fore_aft_ok(&c.margins, agg, g.z) {
            return None;
        }
        let ts = traction_state(agg, &g, zmp, track_lines(&self.robot.support_polygon), self.params.mu).ok()?;
        if self.params.traction_opt {
            let slope = self.terrain.slope_angle(x, y).ok()?;
            if (zmp.x - self.center).abs() > deviation_limit(slope, self.width) {
                return None;
            }
        }
        Some(PoseCheck {
            attitude,
            zmp,
            margin: c.margins.margin,
            traction: traction_score(&ts),
        })
    }

    /// Room along the heading for the ZMP shift of braking at
    /// `brake_reserve`.
    fn fore_aft_ok(&self, m: &StabilityMargin, agg: &MassAggregates, g_z: f64) -> bool {
        let r = self.params.brake_reserve;
        if r <= 0.0 {
            return true;
        }
        let need = self.params.margin + (agg.mz / (agg.m * g_z)).abs() * r;
        m.d_u >= need && m.d_l >= need
    }

    fn pose_margin(&self, x: f64, y: f64, heading: f64, agg: &MassAggregates) -> Option<f64> {
        self.pose(x, y, heading, agg).map(|p| p.margin)
    }

    fn clear(&self, a: Vector2<f64>, b: Vector2<f64>) -> bool {
        self.params
            .obstacles
            .iter()
            .all(|o| segment_polygon_distance(a, b, o) >= self.params.obstacle_clearance)
    }

    /// True when every piece of a horizontal polyline keeps clear of the
    /// obstacles.
    pub fn polyline_clear(&self, pts: &[Vector2<f64>]) -> bool {
        pts.windows(2).all(|w| self.clear(w[0], w[1]))
    }
}

fn point_in_convex(p: Vector2<f64>, poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let e = poly[(i + 1) % n] - a;
        e.perp(&(p - a)) >= 0.0
    })
}

fn point_segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let t = if ab.norm_squared() > 0.0 { ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - p).norm()
}

fn segments_cross(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, d: Vector2<f64>) -> bool {
    let o = |p: Vector2<f64>, q: Vector2<f64>, r: Vector2<f64>| (q - p).perp(&(r - p));
    let (d1, d2) = (o(a, b, c), o(a, b, d));
    let (d3, d4) = (o(c, d, a), o(c, d, b));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Distance between a segment and a convex polygon, zero on overlap.
pub fn segment_polygon_distance(a: Vector2<f64>, b: Vector2<f64>, poly: &[Vector2<f64>]) -> f64 {
    if poly.is_empty() {
        return f64::INFINITY;
    }
    if point_in_convex(a, poly) || point_in_convex(b, poly) {
        return 0.0;
    }
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (c, d) = (poly[i], poly[(i + 1) % n]);
        if segments_cross(a, b, c, d) {
            return 0.0;
        }
        best = best
            .min(point_segment_distance(c, a, b))
            .min(point_segment_distance(a, c, d))
            .min(point_segment_distance(b, c, d));
    }
    best
}

fn node_from(
    ctx: &PlanContext,
    x: f64,
    y: f64,
    heading: f64,
    arm: usize,
    points: &ArmPoints,
    parent: Option<usize>,
    check: PoseCheck,
) -> Result<PlanNode, PlannerError> {
    Ok(PlanNode {
        x,
        y,
        z: check.attitude.position.z,
        heading,
        arm,
        q: ctx.robot.simplified_joints(points.q1, points.d)?.iter().copied().collect(),
        parent,
        attitude: check.attitude,
        zmp: check.zmp,
        margin: check.margin,
        traction: check.traction,
    })
}

fn drive_certificate(
    ctx: &PlanContext,
    a: &PlanNode,
    agg: &MassAggregates,
    target: Vector2<f64>,
    sweep: f64,
) -> Result<Option<(EdgeCertificate, PoseCheck)>, PlannerError> {
    let poly = &ctx.robot.support_polygon;
    let p = ctx.params;
    let heading = a.heading + sweep;
    let (arc, arc_margin) = if sweep != 0.0 {
        let env = turn_envelope(agg, &a.attitude, sweep);
        let c = contains(poly, &env, p.margin);
        if !c.inside {
            return Ok(None);
        }
        (Some(env), c.margins.margin)
    } else {
        (None, f64::INFINITY)
    };
    let Some(start) = ctx.pose(a.x, a.y, heading, agg) else {
        return Ok(None);
    };
    let Some(end) = ctx.pose(target.x, target.y, heading, agg) else {
        return Ok(None);
    };
    let from = Vector2::new(a.x, a.y);
    let pieces = p.edge_pieces.max(1);
    let mut rectangles = Vec::with_capacity(pieces);
    let mut rect_margin = f64::INFINITY;
    let mut prev = start.attitude;
    for k in 1..=pieces {
        let q = from + (target - from) * (k as f64 / pieces as f64);
        let att = if k == pieces {
            end.attitude
        } else {
            match ctx.terrain.base_attitude(q.x, q.y, heading) {
                Ok(a) => a,
                Err(_) => return Ok(None),
            }
        };
        let env = relocation_envelope(agg, &prev, &att, ctx.terrain.gravity, p.attitude_cap, p.inflation * ctx.width)?;
        let c = contains(poly, &env, p.margin);
        let g_z = ctx.terrain.gravity * prev.rotation[(2, 2)].min(att.rotation[(2, 2)]);
        if !c.inside || !ctx.fore_aft_ok(&c.margins, agg, g_z) {
            return Ok(None);
        }
        rect_margin = rect_margin.min(c.margins.margin);
        rectangles.push(env);
        prev = att;
    }
    let cert = EdgeCertificate {
        parent: 0,
        child: 0,
        kind: EdgeKind::Drive,
        sweep,
        arc,
        arc_margin,
        rectangles,
        rect_margin,
        endpoint_margin: start.margin.min(end.margin),
    };
    Ok(Some((cert, end)))
}

/// Certifies the motion from `a` to `b` with the arm held at `points`:
/// a turn in place at `a` to the edge heading, then a straight slide.
/// The shorter turn is tried first, the longer one if it fails. Returns
/// the certificate and the sweep used, or `None` when no direction is
/// stable.
pub fn zmp_stable_edge(
    ctx: &PlanContext,
    a: &PlanNode,
    b: Vector2<f64>,
    points: &ArmPoints,
) -> Result<Option<(EdgeCertificate, f64)>, PlannerError> {
    let d = b - Vector2::new(a.x, a.y);
    let agg = points.aggregates();
    let short = if d.norm() > 0.0 { wrap_angle((-d.x).atan2(d.y) - a.heading) } else { 0.0 };
    let long = if short > 0.0 { short - TAU } else if short < 0.0 { short + TAU } else { 0.0 };
    for sweep in [short, long] {
        if let Some((cert, _)) = drive_certificate(ctx, a, &agg, b, sweep)? {
            return Ok(Some((cert, sweep)));
        }
        if short == 0.0 {
            break;
        }
    }
    Ok(None)
}

/// Samples arm configurations at `node` and returns the most stable one,
/// or the current one when no sample beats it.
pub fn reconfigure(
    ctx: &PlanContext,
    node: &PlanNode,
    current: &ArmPoints,
    rng: &mut ChaCha8Rng,
) -> Result<ArmPoints, PlannerError> {
    let arm = ctx.robot.reduced()?;
    let q1_lim = &ctx.robot.joint_limits[0];
    let (q1_lo, q1_hi) = (q1_lim.lower.max(-PI), q1_lim.upper.min(PI));
    let base = ctx.pose_margin(node.x, node.y, node.heading, &current.aggregates());
    let mut best: Option<(f64, ArmPoints)> = None;
    for _ in 0..ctx.params.reconfig_samples {
        let q1 = rng.gen_range(q1_lo..=q1_hi);
        let d = rng.gen_range(arm.reach_min..=arm.reach_max);
        let Ok(pts) = ArmPoints::new(ctx.robot, q1, d) else {
            continue;
        };
        if let Some(m) = ctx.pose_margin(node.x, node.y, node.heading, &pts.aggregates()) {
            if best.as_ref().map_or(true, |(b, _)| m > *b) {
                best = Some((m, pts));
            }
        }
    }
    match best {
        None => Err(PlannerError::NoStableConfigFound {
            samples: ctx.params.reconfig_samples,
        }),
        Some((m, pts)) if base.map_or(true, |b| m > b) => Ok(pts),
        Some(_) => Ok(current.clone()),
    }
}

struct Tree<'c, 'a> {
    ctx: &'c PlanContext<'a>,
    g: PlanGraph,
    twins: BTreeMap<(usize, usize), usize>,
}

impl Tree<'_, '_> {
    fn arm_index(&mut self, pts: ArmPoints) -> usize {
        match self.g.arms.iter().position(|a| *a == pts) {
            Some(i) => i,
            None => {
                self.g.arms.push(pts);
                self.g.arms.len() - 1
            }
        }
    }

    /// Node at the pose of `i` carrying `arm`, added through a
    /// reconfiguration edge when needed.
    fn with_arm(&mut self, i: usize, arm: usize) -> Result<Option<usize>, PlannerError> {
        if self.g.nodes[i].arm == arm {
            return Ok(Some(i));
        }
        if let Some(&t) = self.twins.get(&(i, arm)) {
            return Ok(Some(t));
        }
        let a = self.g.nodes[i].clone();
        let pts = &self.g.arms[arm];
        let Some(check) = self.ctx.pose(a.x, a.y, a.heading, &pts.aggregates()) else {
            return Ok(None);
        };
        let node = node_from(self.ctx, a.x, a.y, a.heading, arm, pts, Some(i), check)?;
        let child = self.g.nodes.len();
        self.g.edges.push(EdgeCertificate {
            parent: i,
            child,
            kind: EdgeKind::Reconfigure,
            sweep: 0.0,
            arc: None,
            arc_margin: f64::INFINITY,
            rectangles: Vec::new(),
            rect_margin: f64::INFINITY,
            endpoint_margin: a.margin.min(node.margin),
        });
        self.g.nodes.push(node);
        self.twins.insert((i, arm), child);
        Ok(Some(child))
    }

    /// Extends from node `i` toward `target` with up to `max_step`,
    /// halving the step while an edge exceeds the attitude cap.
    fn extend(&mut self, i: usize, target: Vector2<f64>, spaced: bool) -> Result<Option<usize>, PlannerError> {
        let p = self.ctx.params;
        let a = self.g.nodes[i].clone();
        let from = Vector2::new(a.x, a.y);
        let dist = (target - from).norm();
        if dist <= 1e-9 {
            return Ok(None);
        }
        let mut step = dist.min(p.max_step);
        let pts = self.g.arms[a.arm].clone();
        for _ in 0..=p.step_halvings {
            let b = from + (target - from) * (step / dist);
            if !self.ctx.clear(from, b) || (spaced && !self.spaced(b)) {
                return Ok(None);
            }
            match zmp_stable_edge(self.ctx, &a, b, &pts) {
                Ok(Some((mut cert, sweep))) => {
                    let heading = a.heading + sweep;
                    let Some(check) = self.ctx.pose(b.x, b.y, heading, &pts.aggregates()) else {
                        return Ok(None);
                    };
                    let node = node_from(self.ctx, b.x, b.y, heading, a.arm, &pts, Some(i), check)?;
                    let child = self.g.nodes.len();
                    cert.parent = i;
                    cert.child = child;
                    self.g.edges.push(cert);
                    self.g.nodes.push(node);
                    return Ok(Some(child));
                }
                Ok(None) => return Ok(None),
                Err(PlannerError::Stability(StabilityError::StepTooLarge { .. })) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    fn spaced(&self, p: Vector2<f64>) -> bool {
        let s2 = self.ctx.params.min_node_spacing.powi(2);
        self.g.nodes.iter().all(|n| (n.x - p.x).powi(2) + (n.y - p.y).powi(2) >= s2)
    }

    fn nearest(&self, p: Vector2<f64>) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.g.nodes.iter().enumerate() {
            let d = (n.x - p.x).powi(2) + (n.y - p.y).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn path_to(&self, last: usize) -> QuasiStaticPath {
        let mut idx = vec![last];
        while let Some(p) = self.g.nodes[*idx.last().unwrap()].parent {
            idx.push(p);
        }
        idx.reverse();
        let nodes: Vec<PlanNode> = idx.iter().map(|&i| self.g.nodes[i].clone()).collect();
        // the edge into node i is edges[i - 1]
        let edges: Vec<EdgeCertificate> = idx[1..].iter().map(|&i| self.g.edges[i - 1].clone()).collect();
        let arm = |n: &PlanNode| (self.g.arms[n.arm].q1, self.g.arms[n.arm].d);
        let reconfigurations = edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EdgeKind::Reconfigure)
            .map(|(k, _)| ReconfigurationEvent {
                index: k + 1,
                q_before: arm(&nodes[k]),
                q_after: arm(&nodes[k + 1]),
            })
            .collect();
        QuasiStaticPath {
            nodes,
            edges,
            arms: self.g.arms.clone(),
            reconfigurations,
        }
    }
}

/// Grows a tree of certified quasi-static motions from `(init, heading)`
/// with the arm at `arm` until a node connects exactly to `goal`.
pub fn terrain_rrt(
    ctx: &PlanContext,
    init: Vector2<f64>,
    heading: f64,
    goal: Vector2<f64>,
    arm: ArmPoints,
) -> Result<(PlanGraph, QuasiStaticPath), PlannerError> {
    let p = ctx.params;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let region = p.region.unwrap_or(ctx.terrain.bounds);
    let agg = arm.aggregates();
    let Some(check) = ctx.pose(init.x, init.y, heading, &agg) else {
        let margin = ctx
            .terrain
            .base_attitude(init.x, init.y, heading)
            .map(|att| {
                let z = zmp_quasistatic(&agg, &gravity_in_base(&att, ctx.terrain.gravity));
                contains_point(&ctx.robot.support_polygon, z, 0.0).margins.margin
            })
            .unwrap_or(f64::NEG_INFINITY);
        return Err(PlannerError::InitUnstable { margin });
    };
    let root = node_from(ctx, init.x, init.y, heading, 0, &arm, None, check)?;
    let mut tree = Tree {
        ctx,
        g: PlanGraph {
            nodes: vec![root],
            edges: Vec::new(),
            arms: vec![arm],
            seed: p.seed,
            growth: Vec::new(),
            reconfigurations: Vec::new(),
            iterations: 0,
        },
        twins: BTreeMap::new(),
    };
    if (goal - init).norm() <= 1e-9 {
        let path = tree.path_to(0);
        return Ok((tree.g, path));
    }
    let mut current = 0usize;
    let mut added = 0usize;
    let window = p.growth_window.max(1);
    for it in 0..p.max_iterations {
        tree.g.iterations = it + 1;
        let sample = if rng.gen::<f64>() < p.goal_bias {
            goal
        } else {
            Vector2::new(
                rng.gen_range(region.min_x..=region.max_x),
                rng.gen_range(region.min_y..=region.max_y),
            )
        };
        let near = tree.nearest(sample);
        let before = tree.g.nodes.len();
        if let Some(start) = tree.with_arm(near, current)? {
            if let Some(new) = tree.extend(start, sample, true)? {
                let n = &tree.g.nodes[new];
                let to_goal = (goal - Vector2::new(n.x, n.y)).norm();
                if to_goal <= p.goal_radius.max(1e-9) && to_goal <= p.max_step {
                    if let Some(last) = tree.extend(new, goal, false)? {
                        let l = &tree.g.nodes[last];
                        if (goal - Vector2::new(l.x, l.y)).norm() <= 1e-9 {
                            let path = tree.path_to(last);
                            return Ok((tree.g, path));
                        }
                    }
                }
            }
        }
        added += tree.g.nodes.len() - before;
        if (it + 1) % window == 0 {
            tree.g.growth.push(added);
            if added < p.growth_min_nodes {
                // stalled: change the arm at the node closest to the goal
                let at = tree.nearest(goal);
                let node = tree.g.nodes[at].clone();
                let pts = reconfigure(ctx, &node, &tree.g.arms[current], &mut rng)?;
                let idx = tree.arm_index(pts);
                if idx != current {
                    tree.g.reconfigurations.push((tree.g.growth.len() - 1, at));
                    current = idx;
                }
            }
            added = 0;
        }
    }
    let iterations = tree.g.iterations;
    Err(PlannerError::IterationBudgetExhausted {
        iterations,
        graph: Box::new(tree.g),
    })
}
