use nalgebra::Vector2;
use proptest::prelude::*;
use terrazmp::planner::*;
use terrazmp::robot::RobotModel;
use terrazmp::stability::{contains, signed_distance, zmp_quasistatic};
use terrazmp::terrain::{gravity_in_base, Bounds2, TerrainModel};
use terrazmp::trajopt::ArmPoints;

const SWEEP_SAMPLES: usize = 1000;

fn robot() -> RobotModel {
    RobotModel::from_json_str(include_str!("../../../robots/feller_buncher.json")).unwrap()
}

fn mountain() -> TerrainModel {
    TerrainModel::sinusoidal_mountain(10.0, 10.0, Bounds2::new(-40.0, 40.0, -20.0, 80.0))
}

fn params(seed: u64) -> PlannerParams {
    PlannerParams {
        mu: 1.2,
        brake_reserve: 1.0,
        seed,
        region: Some(Bounds2::new(-30.0, 30.0, -10.0, 70.0)),
        ..PlannerParams::default()
    }
}

fn plan(robot: &RobotModel, terrain: &TerrainModel, p: &PlannerParams, goal: Vector2<f64>) -> Result<(PlanGraph, QuasiStaticPath), PlannerError> {
    let ctx = PlanContext::new(robot, terrain, p);
    let arm = ArmPoints::new(robot, 0.0, 3.27).unwrap();
    terrain_rrt(&ctx, Vector2::zeros(), 0.0, goal, arm)
}

/// Smallest ZMP margin over a dense sweep of every drive edge on the path:
/// the turn in place at the parent, then the slide to the child.
fn dense_margin(robot: &RobotModel, terrain: &TerrainModel, path: &QuasiStaticPath) -> f64 {
    let poly = &robot.support_polygon;
    let mut worst = f64::INFINITY;
    for (k, e) in path.edges.iter().enumerate() {
        let (a, b) = (&path.nodes[k], &path.nodes[k + 1]);
        let agg = path.arms[b.arm].aggregates();
        let margin_at = |x: f64, y: f64, h: f64| {
            let att = terrain.base_attitude(x, y, h).unwrap();
            signed_distance(poly, zmp_quasistatic(&agg, &gravity_in_base(&att, terrain.gravity)).v())
        };
        if e.kind == EdgeKind::Reconfigure {
            worst = worst.min(margin_at(b.x, b.y, b.heading));
            continue;
        }
        assert!((a.heading + e.sweep - b.heading).abs() < 1e-9);
        for i in 0..=SWEEP_SAMPLES {
            let s = i as f64 / SWEEP_SAMPLES as f64;
            worst = worst.min(margin_at(a.x, a.y, a.heading + s * e.sweep));
            worst = worst.min(margin_at(a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), b.heading));
        }
    }
    worst
}

#[test]
fn certificates_hold_on_dense_sweeps() {
    let (robot, terrain) = (robot(), mountain());
    let (graph, path) = plan(&robot, &terrain, &params(1), Vector2::new(0.0, 63.0)).unwrap();
    assert_eq!(path.nodes.last().map(|n| (n.x, n.y)), Some((0.0, 63.0)));
    assert!(!path.reconfigurations.is_empty());
    for e in &graph.edges {
        assert!(e.endpoint_margin >= 0.0);
        if let Some(arc) = &e.arc {
            assert!(contains(&robot.support_polygon, arc, 0.0).inside);
        }
        for r in &e.rectangles {
            assert!(contains(&robot.support_polygon, r, 0.0).inside);
        }
    }
    let m = dense_margin(&robot, &terrain, &path);
    assert!(m >= 0.0, "{m}");
}

#[test]
fn same_seed_same_graph() {
    let (robot, terrain) = (robot(), mountain());
    let goal = Vector2::new(15.0, 20.0);
    let a = plan(&robot, &terrain, &params(4), goal).unwrap();
    let b = plan(&robot, &terrain, &params(4), goal).unwrap();
    assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
    assert_eq!(a.1, b.1);
}

#[test]
fn budget_exhaustion_returns_the_tree() {
    let (robot, terrain) = (robot(), mountain());
    let p = PlannerParams { max_iterations: 20, goal_bias: 0.0, ..params(2) };
    match plan(&robot, &terrain, &p, Vector2::new(0.0, 63.0)) {
        Err(PlannerError::IterationBudgetExhausted { graph, .. }) => {
            assert_eq!(graph.iterations, 20);
            assert_eq!(graph.edges.len() + 1, graph.nodes.len());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unstable_start_is_rejected() {
    let robot = robot();
    let terrain = TerrainModel::inclined_x(60f64.to_radians(), Bounds2::square(50.0));
    let p = PlannerParams { mu: 2.0, ..PlannerParams::default() };
    let ctx = PlanContext::new(&robot, &terrain, &p);
    for q1 in [-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2] {
        let arm = ArmPoints::new(&robot, q1, 6.0).unwrap();
        let r = terrain_rrt(&ctx, Vector2::zeros(), 0.0, Vector2::new(0.0, 20.0), arm);
        assert!(matches!(r, Err(PlannerError::InitUnstable { .. })), "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_plans_stay_stable(seed in 0u64..1000, gx in -20.0f64..20.0, gy in 10.0f64..30.0) {
        let (robot, terrain) = (robot(), mountain());
        let p = PlannerParams { max_iterations: 20_000, ..params(seed) };
        let r = plan(&robot, &terrain, &p, Vector2::new(gx, gy));
        prop_assume!(r.is_ok());
        let (_, path) = r.unwrap();
        let m = dense_margin(&robot, &terrain, &path);
        prop_assert!(m >= 0.0, "{}", m);
    }
}
