//! Zero-moment-point evaluation and support-polygon certificates.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::MassPoints;
use crate::terrain::{euler_zxy, BaseAttitude};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("ZMP denominator {0:.3e} is too close to zero")]
    DegenerateDenominator(f64),
    #[error("attitude change of pitch {pitch:.4} rad, roll {roll:.4} rad exceeds the {cap:.4} rad cap")]
    StepTooLarge { pitch: f64, roll: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZmpPoint {
    pub x: f64,
    pub y: f64,
}

impl ZmpPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn v(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Total mass and first mass moments in `F0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassAggregates {
    pub m: f64,
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl MassAggregates {
    pub fn from_points(masses: &[f64], positions: &[Vector3<f64>]) -> Self {
        let mut a = Self {
            m: 0.0,
            mx: 0.0,
            my: 0.0,
            mz: 0.0,
        };
        for (m, p) in masses.iter().zip(positions) {
            a.m += m;
            a.mx += m * p.x;
            a.my += m * p.y;
            a.mz += m * p.z;
        }
        a
    }

    pub fn com(&self) -> Vector3<f64> {
        Vector3::new(self.mx, self.my, self.mz) / self.m
    }
}

/// Dynamic ZMP of a set of point masses.
///
/// `gravity` is the upward support vector `Rᵀ·(0, 0, g)` in `F0`; the
/// gravitational acceleration acting on the masses is its negative.
pub fn zmp_dynamic(
    masses: &[f64],
    positions: &[Vector3<f64>],
    accelerations: &[Vector3<f64>],
    gravity: &Vector3<f64>,
) -> Result<ZmpPoint, StabilityError> {
    let mut den = 0.0;
    let mut nx = 0.0;
    let mut ny = 0.0;
    let mut total = 0.0;
    for ((m, p), a) in masses.iter().zip(positions).zip(accelerations) {
        let w = m * (a.z + gravity.z);
        den += w;
        nx += w * p.x - m * (a.x + gravity.x) * p.z;
        ny += w * p.y - m * (a.y + gravity.y) * p.z;
        total += m;
    }
    if !(den.abs() >= 1e-6 * total * gravity.norm()) {
        return Err(StabilityError::DegenerateDenominator(den));
    }
    Ok(ZmpPoint::new(nx / den, ny / den))
}

pub fn zmp_of(points: &MassPoints, gravity: &Vector3<f64>) -> Result<ZmpPoint, StabilityError> {
    zmp_dynamic(&points.masses, &points.positions, &points.accelerations, gravity)
}

/// Quasi-static ZMP `((M_x g_z − M_z g_x)/(M g_z), (M_y g_z − M_z g_y)/(M g_z))`.
pub fn zmp_quasistatic(agg: &MassAggregates, gravity: &Vector3<f64>) -> ZmpPoint {
    let den = agg.m * gravity.z;
    ZmpPoint::new(
        (agg.mx * gravity.z - agg.mz * gravity.x) / den,
        (agg.my * gravity.z - agg.mz * gravity.y) / den,
    )
}

/// Region swept by the ZMP during a motion primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ZmpEnvelope {
    Point {
        at: Vector2<f64>,
    },
    /// Points `center + radius·(cos α, sin α)` for α from `start` over `sweep`.
    Arc {
        center: Vector2<f64>,
        radius: f64,
        start: f64,
        sweep: f64,
    },
    Rectangle {
        min: Vector2<f64>,
        max: Vector2<f64>,
    },
}

impl ZmpEnvelope {
    pub fn arc_point(center: Vector2<f64>, radius: f64, angle: f64) -> Vector2<f64> {
        center + Vector2::new(angle.cos(), angle.sin()) * radius
    }

    /// Evenly spaced points covering the envelope boundary and corners.
    pub fn samples(&self, n: usize) -> Vec<Vector2<f64>> {
        match *self {
            ZmpEnvelope::Point { at } => vec![at],
            ZmpEnvelope::Arc {
                center,
                radius,
                start,
                sweep,
            } => (0..=n)
                .map(|k| Self::arc_point(center, radius, start + sweep * k as f64 / n as f64))
                .collect(),
            ZmpEnvelope::Rectangle { min, max } => vec![
                min,
                Vector2::new(max.x, min.y),
                max,
                Vector2::new(min.x, max.y),
            ],
        }
    }
}

/// Arc traced by the quasi-static ZMP while the base yaws in place by
/// `turn` radians (positive counter-clockwise about the base normal).
pub fn turn_envelope(agg: &MassAggregates, att: &BaseAttitude, turn: f64) -> ZmpEnvelope {
    let r = att.vertical_components();
    let k = -agg.mz / (r.z * agg.m);
    let offset = Vector2::new(r.x * k, r.y * k);
    let center = Vector2::new(agg.mx / agg.m, agg.my / agg.m);
    let radius = offset.norm();
    let start = if radius > 0.0 { offset.y.atan2(offset.x) } else { 0.0 };
    ZmpEnvelope::Arc {
        center,
        radius,
        start,
        sweep: -turn,
    }
}

/// Rotation `ΔR = R_aᵀ·R_b` split into `(residual yaw, pitch, roll)`.
pub fn attitude_change(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Vector3<f64> {
    euler_zxy(&(a.transpose() * b))
}

/// Axis-aligned box bounding the quasi-static ZMP while the attitude
/// ramps from `a` to `b`, inflated by `inflation` on every side.
pub fn relocation_envelope(
    agg: &MassAggregates,
    a: &BaseAttitude,
    b: &BaseAttitude,
    g: f64,
    cap: f64,
    inflation: f64,
) -> Result<ZmpEnvelope, StabilityError> {
    let change = attitude_change(&a.rotation, &b.rotation);
    if change.y.abs() > cap || change.z.abs() > cap {
        return Err(StabilityError::StepTooLarge {
            pitch: change.y,
            roll: change.z,
            cap,
        });
    }
    let za = zmp_quasistatic(agg, &crate::terrain::gravity_in_base(a, g)).v();
    let zb = zmp_quasistatic(agg, &crate::terrain::gravity_in_base(b, g)).v();
    let pad = Vector2::new(inflation, inflation);
    Ok(ZmpEnvelope::Rectangle {
        min: za.inf(&zb) - pad,
        max: za.sup(&zb) + pad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMargin {
    /// Clearance to the polygon boundary along +y.
    pub d_u: f64,
    /// Clearance to the polygon boundary along −y.
    pub d_l: f64,
    /// Smallest signed distance to any edge, positive inside.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub inside: bool,
    pub margins: StabilityMargin,
}

/// Edge start points with inward unit normals of a counter-clockwise polygon.
pub fn polygon_edges(poly: &[Vector2<f64>]) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    edges(poly).collect()
}

fn edges(poly: &[Vector2<f64>]) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
    let n = poly.len();
    (0..n).map(move |i| {
        let a = poly[i];
        let e = poly[(i + 1) % n] - a;
        (a, Vector2::new(-e.y, e.x) / e.norm())
    })
}

pub fn is_convex_ccw(poly: &[Vector2<f64>]) -> bool {
    let n = poly.len();
    n >= 3
        && (0..n).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let c = poly[(i + 2) % n];
            let e1 = b - a;
            let e2 = c - b;
            e1.x * e2.y - e1.y * e2.x > 0.0
        })
}

/// Signed distance from `p` to the nearest edge line, positive inside.
pub fn signed_distance(poly: &[Vector2<f64>], p: Vector2<f64>) -> f64 {
    edges(poly).map(|(a, n)| n.dot(&(p - a))).fold(f64::INFINITY, f64::min)
}

/// Distance from `p` to the polygon boundary along direction `dir`.
fn ray_clearance(poly: &[Vector2<f64>], p: Vector2<f64>, dir: Vector2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for (a, n) in edges(poly) {
        let approach = -n.dot(&dir);
        if approach > 1e-15 {
            best = best.min(n.dot(&(p - a)) / approach);
        }
    }
    best
}

/// Largest circle radius that fits in the polygon around its vertex centroid
/// (exact for centrally symmetric polygons).
pub fn inradius(poly: &[Vector2<f64>]) -> f64 {
    let c = poly.iter().sum::<Vector2<f64>>() / poly.len() as f64;
    signed_distance(poly, c)
}

fn point_margins(poly: &[Vector2<f64>], p: Vector2<f64>) -> StabilityMargin {
    StabilityMargin {
        d_u: ray_clearance(poly, p, Vector2::y()),
        d_l: ray_clearance(poly, p, -Vector2::y()),
        margin: signed_distance(poly, p),
    }
}

/// Minimum of `cos(t)` for `t` in `[lo, hi]`.
fn min_cos(lo: f64, hi: f64) -> f64 {
    use std::f64::consts::PI;
    let k = ((lo - PI) / (2.0 * PI)).ceil();
    if PI + 2.0 * PI * k <= hi {
        -1.0
    } else {
        lo.cos().min(hi.cos())
    }
}

fn envelope_margin(poly: &[Vector2<f64>], env: &ZmpEnvelope) -> f64 {
    match *env {
        ZmpEnvelope::Point { at } => signed_distance(poly, at),
        ZmpEnvelope::Rectangle { .. } => env
            .samples(4)
            .into_iter()
            .map(|p| signed_distance(poly, p))
            .fold(f64::INFINITY, f64::min),
        ZmpEnvelope::Arc {
            center,
            radius,
            start,
            sweep,
        } => {
            let (lo, hi) = if sweep >= 0.0 { (start, start + sweep) } else { (start + sweep, start) };
            edges(poly)
                .map(|(a, n)| {
                    let beta = n.y.atan2(n.x);
                    n.dot(&(center - a)) + radius * min_cos(lo - beta, hi - beta)
                })
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Whether every point of `env` lies strictly inside the polygon with at
/// least `margin` clearance to every edge.
pub fn contains(poly: &[Vector2<f64>], env: &ZmpEnvelope, margin: f64) -> Containment {
    let signed = envelope_margin(poly, env);
    let pts = match env {
        ZmpEnvelope::Arc { .. } => env.samples(180),
        _ => env.samples(4),
    };
    let mut d_u = f64::INFINITY;
    let mut d_l = f64::INFINITY;
    for p in pts {
        let m = point_margins(poly, p);
        d_u = d_u.min(m.d_u);
        d_l = d_l.min(m.d_l);
    }
    Containment {
        inside: signed > margin && signed > 0.0,
        margins: StabilityMargin {
            d_u,
            d_l,
            margin: signed,
        },
    }
}

pub fn contains_point(poly: &[Vector2<f64>], p: ZmpPoint, margin: f64) -> Containment {
    let m = point_margins(poly, p.v());
    Containment {
        inside: m.margin > margin && m.margin > 0.0,
        margins: m,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBounds {
    pub forward: f64,
    pub turn: f64,
}

/// Upper bounds on the distance between dynamic and quasi-static ZMP for
/// straight driving with acceleration `u_a` and for an in-place turn with
/// rate `yaw_rate` and yaw acceleration `u_psi`.
pub fn dynamic_deviation_bounds(
    masses: &[f64],
    positions: &[Vector3<f64>],
    g_z: f64,
    u_a: f64,
    yaw_rate: f64,
    u_psi: f64,
) -> DeviationBounds {
    let agg = MassAggregates::from_points(masses, positions);
    let den = agg.m * g_z;
    let forward = (agg.mz / den).abs() * u_a.abs();
    let weights = masses
        .iter()
        .zip(positions)
        .map(|(m, p)| (m * p.z / den).powi(2))
        .sum::<f64>()
        .sqrt();
    let spread: f64 = positions.iter().map(|p| p.x.abs() + p.y.abs()).sum();
    let turn = 2.0 * weights * spread * (yaw_rate * yaw_rate + u_psi.abs());
    DeviationBounds { forward, turn }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::RobotModel;
    use crate::terrain::{gravity_in_base, rot_x, rot_y, Bounds2, TerrainModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DVector, Matrix2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn feller() -> RobotModel {
        RobotModel::from_json_str(include_str!("../../../robots/feller_buncher.json")).unwrap()
    }

    fn rect() -> Vec<Vector2<f64>> {
        feller().support_polygon
    }

    // Point on z = 0 where the summed moment of inertial and gravity forces
    // has no horizontal component, from explicit cross products.
    fn newton_euler_zmp(m: &[f64], p: &[Vector3<f64>], a: &[Vector3<f64>], up: &Vector3<f64>) -> Vector2<f64> {
        let moment = |px: f64, py: f64| {
            let o = Vector3::new(px, py, 0.0);
            let mut t = Vector3::zeros();
            for i in 0..m.len() {
                t += (p[i] - o).cross(&((a[i] + up) * m[i]));
            }
            Vector2::new(t.x, t.y)
        };
        let m0 = moment(0.0, 0.0);
        let jx = moment(1.0, 0.0) - m0;
        let jy = moment(0.0, 1.0) - m0;
        let j = Matrix2::from_columns(&[jx, jy]);
        -j.try_inverse().unwrap() * m0
    }

    #[test]
    fn single_static_mass_projects_down() {
        let z = zmp_dynamic(&[5.0], &[Vector3::new(0.3, -0.7, 2.0)], &[Vector3::zeros()], &Vector3::new(0.0, 0.0, 9.81)).unwrap();
        assert_abs_diff_eq!(z.x, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(z.y, -0.7, epsilon = 1e-15);
    }

    #[test]
    fn two_masses_match_moment_balance() {
        let m = [2.0, 3.0];
        let p = [Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.5, 2.0)];
        let a = [Vector3::zeros(), Vector3::new(1.5, 0.0, 0.0)];
        let up = Vector3::new(0.0, 0.0, 9.81);
        let z = zmp_dynamic(&m, &p, &a, &up).unwrap();
        let o = newton_euler_zmp(&m, &p, &a, &up);
        assert_abs_diff_eq!(z.v(), o, epsilon = 1e-12);
        // accelerating toward +x pushes the ZMP back toward −x
        assert!(z.x < 0.6);
    }

    #[test]
    fn random_systems_match_moment_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.gen_range(1..8);
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5000.0)).collect();
            let p: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..6.0)))
                .collect();
            let a: Vec<Vector3<f64>> = (0..n)
                .map(|_| Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
                .collect();
            let tilt = BaseAttitude::from_pitch_roll(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let up = gravity_in_base(&tilt, 9.81);
            let z = zmp_dynamic(&m, &p, &a, &up).unwrap();
            let o = newton_euler_zmp(&m, &p, &a, &up);
            assert!((z.v() - o).norm() <= 1e-9 * (1.0 + o.norm()));
        }
    }

    #[test]
    fn degenerate_denominator() {
        let r = zmp_dynamic(&[1.0], &[Vector3::new(0.0, 0.0, 1.0)], &[Vector3::new(0.0, 0.0, -9.81)], &Vector3::new(0.0, 0.0, 9.81));
        assert!(matches!(r, Err(StabilityError::DegenerateDenominator(_))));
    }

    fn machine_at(q: &[f64]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let m = feller();
        let q = DVector::from_column_slice(q);
        (m.masses(), m.link_com_positions(&q))
    }

    #[test]
    fn quasistatic_matches_dynamic_at_rest() {
        let (m, p) = machine_at(&[0.0, -PI / 6.0, -2.0 * PI / 3.0, PI / 3.0, -PI / 2.0]);
        let up = gravity_in_base(&BaseAttitude::from_pitch_roll(0.0, PI / 6.0), 9.81);
        let zeros = vec![Vector3::zeros(); m.len()];
        let d = zmp_dynamic(&m, &p, &zeros, &up).unwrap();
        let agg = MassAggregates::from_points(&m, &p);
        let s = zmp_quasistatic(&agg, &up);
        assert_abs_diff_eq!(d.v(), s.v(), epsilon = 1e-12);
        let by_hand = (agg.mx * up.z - agg.mz * up.x) / (agg.m * up.z);
        assert_abs_diff_eq!(s.x, by_hand, epsilon = 1e-15);
    }

    #[test]
    fn quasistatic_flat_and_downhill() {
        let agg = MassAggregates {
            m: 10.0,
            mx: 3.0,
            my: -2.0,
            mz: 15.0,
        };
        let flat = zmp_quasistatic(&agg, &Vector3::new(0.0, 0.0, 9.81));
        assert_abs_diff_eq!(flat.v(), Vector2::new(0.3, -0.2), epsilon = 1e-15);
        let tilted = zmp_quasistatic(&agg, &Vector3::new(1.0, 0.0, 9.7));
        assert!(tilted.x < 0.3);
    }

    #[test]
    fn turn_arc_radius_and_degenerate_cases() {
        let agg = MassAggregates {
            m: 20000.0,
            mx: 100.0,
            my: 3000.0,
            mz: 40000.0,
        };
        let flat = turn_envelope(&agg, &BaseAttitude::identity(), 1.0);
        match flat {
            ZmpEnvelope::Arc { radius, center, .. } => {
                assert_eq!(radius, 0.0);
                assert_abs_diff_eq!(center, Vector2::new(0.005, 0.15), epsilon = 1e-15);
            }
            _ => unreachable!(),
        }
        let alpha = PI / 6.0;
        let plane = TerrainModel::inclined_x(alpha, Bounds2::square(10.0));
        let att = plane.base_attitude(0.0, 0.0, 0.3).unwrap();
        let ZmpEnvelope::Arc { radius, start, center, sweep } = turn_envelope(&agg, &att, 0.0) else {
            unreachable!()
        };
        // the printed expression in the source is this radius squared
        assert_abs_diff_eq!(radius, alpha.tan() * 2.0, epsilon = 1e-12);
        assert_eq!(sweep, 0.0);
        let z0 = zmp_quasistatic(&agg, &gravity_in_base(&att, 9.81));
        assert_abs_diff_eq!(ZmpEnvelope::arc_point(center, radius, start), z0.v(), epsilon = 1e-12);
    }

    #[test]
    fn turn_samples_lie_on_arc_monotonically() {
        let t = TerrainModel::sinusoidal_mountain(10.0, 10.0, Bounds2::square(80.0));
        let att = t.base_attitude(8.0, 11.0, 0.4).unwrap();
        let (m, p) = machine_at(&[0.7, -PI / 6.0, -2.0 * PI / 3.0, PI / 3.0, -PI / 2.0]);
        let agg = MassAggregates::from_points(&m, &p);
        let env = turn_envelope(&agg, &att, PI);
        let ZmpEnvelope::Arc { center, radius, start, sweep } = env else { unreachable!() };
        for k in 0..=1000 {
            let psi = PI * k as f64 / 1000.0;
            let z = zmp_quasistatic(&agg, &gravity_in_base(&att.yawed(psi), 9.81)).v();
            assert!(((z - center).norm() - radius).abs() <= 1e-10);
            // the angular parameter advances linearly with the yaw, hence monotonically
            assert_abs_diff_eq!(ZmpEnvelope::arc_point(center, radius, start + sweep * psi / PI), z, epsilon = 1e-10);
        }
    }

    #[test]
    fn relocation_rectangle_cases() {
        let (m, p) = machine_at(&[0.3, -PI / 6.0, -2.0 * PI / 3.0, PI / 3.0, -PI / 2.0]);
        let agg = MassAggregates::from_points(&m, &p);
        let a = BaseAttitude::from_pitch_roll(0.1, 0.05);
        let ZmpEnvelope::Rectangle { min, max } = relocation_envelope(&agg, &a, &a, 9.81, 5f64.to_radians(), 0.0).unwrap() else {
            unreachable!()
        };
        assert_abs_diff_eq!(min, max, epsilon = 0.0);
        let flat = BaseAttitude::identity();
        let mut b = flat;
        b.rotation = rot_x(3f64.to_radians());
        let ZmpEnvelope::Rectangle { min, max } = relocation_envelope(&agg, &flat, &b, 9.81, 5f64.to_radians(), 0.0).unwrap() else {
            unreachable!()
        };
        assert_abs_diff_eq!(min.x, max.x, epsilon = 1e-12);
        assert!(max.y - min.y > 0.05);
        b.rotation = rot_x(6f64.to_radians());
        assert!(matches!(
            relocation_envelope(&agg, &flat, &b, 9.81, 5f64.to_radians(), 0.0),
            Err(StabilityError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn ramp_samples_stay_in_inflated_rectangle() {
        let (m, p) = machine_at(&[1.1, -0.4, -PI + 0.8, PI / 2.0 - 0.4, -PI / 2.0]);
        let agg = MassAggregates::from_points(&m, &p);
        let a = BaseAttitude::from_pitch_roll(0.3, -0.25);
        let (th, ph) = (3f64.to_radians(), 2f64.to_radians());
        let mut b = a;
        b.rotation = a.rotation * rot_x(th) * rot_y(ph);
        let infl = 0.01 * 3.23;
        let env = relocation_envelope(&agg, &a, &b, 9.81, 5f64.to_radians(), infl).unwrap();
        let ZmpEnvelope::Rectangle { min, max } = env else { unreachable!() };
        for k in 0..=1000 {
            let s = k as f64 / 1000.0;
            let mut r = a;
            r.rotation = a.rotation * rot_x(s * th) * rot_y(s * ph);
            let z = zmp_quasistatic(&agg, &gravity_in_base(&r, 9.81)).v();
            assert!(z.x >= min.x && z.x <= max.x && z.y >= min.y && z.y <= max.y);
        }
    }

    #[test]
    fn containment_examples() {
        let poly = rect();
        let c = contains_point(&poly, ZmpPoint::new(0.0, 0.0), 0.0);
        assert!(c.inside);
        assert_abs_diff_eq!(c.margins.d_u, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.margins.d_l, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.margins.margin, 1.615, epsilon = 1e-12);
        assert!(!contains_point(&poly, ZmpPoint::new(1.615, 0.0), 0.0).inside);
        let big = ZmpEnvelope::Arc {
            center: Vector2::zeros(),
            radius: 1.7,
            start: 0.0,
            sweep: 2.0 * PI,
        };
        assert!(!contains(&poly, &big, 0.0).inside);
        // the same circle restricted to an arc pointing along y fits
        let partial = ZmpEnvelope::Arc {
            center: Vector2::zeros(),
            radius: 1.7,
            start: PI / 2.0 - 0.3,
            sweep: 0.6,
        };
        assert!(contains(&poly, &partial, 0.0).inside);
        assert_abs_diff_eq!(inradius(&poly), 1.615, epsilon = 1e-12);
    }

    #[test]
    fn arc_margin_matches_dense_sampling() {
        let poly = rect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let env = ZmpEnvelope::Arc {
                center: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0)),
                radius: rng.gen_range(0.0..2.0),
                start: rng.gen_range(-7.0..7.0),
                sweep: rng.gen_range(-7.0..7.0),
            };
            let exact = contains(&poly, &env, 0.0).margins.margin;
            let dense = env
                .samples(20000)
                .into_iter()
                .map(|p| signed_distance(&poly, p))
                .fold(f64::INFINITY, f64::min);
            assert!(exact <= dense + 1e-12);
            assert!(dense - exact <= 1e-6);
        }
    }

    #[test]
    fn deviation_bounds_zero_inputs() {
        let (m, p) = machine_at(&[0.0, -0.5, -2.0, 1.0, -1.5]);
        let b = dynamic_deviation_bounds(&m, &p, 9.81, 0.0, 0.0, 0.0);
        assert_eq!(b.forward, 0.0);
        assert_eq!(b.turn, 0.0);
    }

    #[test]
    fn deviation_bounds_hold() {
        let model = feller();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let q = DVector::from_fn(5, |i, _| match i {
                0 => rng.gen_range(-PI..PI),
                _ => rng.gen_range(-1.0..1.0) + [0.0, -0.5, -2.0, 1.0, -1.5][i],
            });
            let p = model.link_com_positions(&q);
            let m = model.masses();
            let up = gravity_in_base(&BaseAttitude::from_pitch_roll(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)), 9.81);
            let (u_a, w, u_psi) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0 / 3.0..2.0 / 3.0));
            let b = dynamic_deviation_bounds(&m, &p, up.z, u_a, w, u_psi);
            let stat = zmp_quasistatic(&MassAggregates::from_points(&m, &p), &up).v();
            let fwd: Vec<_> = p.iter().map(|_| Vector3::new(0.0, u_a, 0.0)).collect();
            let d = zmp_dynamic(&m, &p, &fwd, &up).unwrap().v();
            assert!((d - stat).norm() <= b.forward * (1.0 + 1e-12));
            let turn: Vec<_> = p
                .iter()
                .map(|r| Vector3::new(-w * w * r.x - u_psi * r.y, -w * w * r.y + u_psi * r.x, 0.0))
                .collect();
            let d = zmp_dynamic(&m, &p, &turn, &up).unwrap().v();
            assert!((d - stat).norm() <= b.turn * (1.0 + 1e-12));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn flat_ground_zmp_ignores_heading(q1 in -6.0f64..6.0, d in 1.0f64..6.0, heading in -7.0f64..7.0) {
            let model = feller();
            let q = model.simplified_joints(q1, d).unwrap();
            let agg = MassAggregates::from_points(&model.masses(), &model.link_com_positions(&q));
            let t = TerrainModel::flat(Bounds2::square(10.0));
            let a = zmp_quasistatic(&agg, &gravity_in_base(&t.base_attitude(0.0, 0.0, 0.0).unwrap(), 9.81));
            let b = zmp_quasistatic(&agg, &gravity_in_base(&t.base_attitude(0.0, 0.0, heading).unwrap(), 9.81));
            prop_assert!((a.v() - b.v()).norm() <= 1e-12);
        }

        #[test]
        fn reduction_to_quasistatic(q1 in -6.0f64..6.0, d in 1.0f64..6.0, pitch in -0.5f64..0.5, roll in -0.5f64..0.5) {
            let model = feller();
            let q = model.simplified_joints(q1, d).unwrap();
            let p = model.link_com_positions(&q);
            let m = model.masses();
            let up = gravity_in_base(&BaseAttitude::from_pitch_roll(pitch, roll), 9.81);
            let zero = vec![Vector3::zeros(); m.len()];
            let a = zmp_dynamic(&m, &p, &zero, &up).unwrap();
            let b = zmp_quasistatic(&MassAggregates::from_points(&m, &p), &up);
            prop_assert!((a.v() - b.v()).norm() <= 1e-12);
        }
    }
}
