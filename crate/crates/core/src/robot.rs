//! Link-chain kinematics of a tracked mobile manipulator and the reduced
//! two-coordinate arm model (cabin yaw, radial reach).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::terrain::{rot_x, rot_y, rot_z, TerrainError, TerrainModel};

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("reach {d:.4} m is outside the inverse-kinematics domain |d| < {limit:.4} m")]
    IkDomain { d: f64, limit: f64 },
    #[error("invalid robot description: {0}")]
    Invalid(String),
    #[error("robot has no reduced-arm mapping")]
    NoReducedModel,
    #[error("cannot read robot file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse robot file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which Denavit-Hartenberg parameter carries the joint variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointSlot {
    Theta,
    Alpha,
    D,
}

/// One row of the chain. The joint transform is `Rz(θ)·Tz(d)·Tx(a)·Rx(α)`,
/// with the joint variable added to the slot named by `joint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub theta: f64,
    pub joint: JointSlot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    /// Centre of mass in the link's own frame.
    pub com: Vector3<f64>,
}

/// Rigid load carried by the end effector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub mass: f64,
    /// Offset from the end-effector point, expressed in the base frame.
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
    pub rate: f64,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub accel: f64,
    pub yaw_rate: f64,
    pub yaw_accel: f64,
}

/// Reduced arm: joints `[q1, q2, q3, q4, q5]` follow
/// `q2 = asin(-d / 2l)`, `q3 = -π - 2·q2`, `q4 = π/2 + q2`, `q5` constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedArm {
    pub link_length: f64,
    pub wrist: f64,
    pub reach_min: f64,
    pub reach_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub base_mass: f64,
    /// Base centre of mass in `F0`.
    pub base_com: Vector3<f64>,
    /// Origin of the first joint frame in `F0`.
    pub mount: Vector3<f64>,
    pub dh: Vec<DhRow>,
    pub links: Vec<Link>,
    /// End-effector point in the last link frame.
    pub end_effector: Vector3<f64>,
    #[serde(default)]
    pub payload: Option<Payload>,
    /// Counter-clockwise convex polygon in the `F0` x-y plane.
    pub support_polygon: Vec<Vector2<f64>>,
    pub joint_limits: Vec<JointLimit>,
    pub base_limits: BaseLimits,
    #[serde(default)]
    pub reduced: Option<ReducedArm>,
}

/// Generalised coordinates `(p_b, ψ, θ, φ, q)` or their time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub base: Vector3<f64>,
    /// z-x-y Euler angles `(ψ, θ, φ)`.
    pub euler: Vector3<f64>,
    pub q: DVector<f64>,
}

impl FullState {
    pub fn zeros(n: usize) -> Self {
        Self {
            base: Vector3::zeros(),
            euler: Vector3::zeros(),
            q: DVector::zeros(n),
        }
    }

    pub fn with_joints(q: DVector<f64>) -> Self {
        Self {
            base: Vector3::zeros(),
            euler: Vector3::zeros(),
            q,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        euler_rotation(&self.euler)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedState {
    pub q1: f64,
    pub q1_dot: f64,
    pub d: f64,
    pub d_dot: f64,
}

impl SimplifiedState {
    pub fn at_rest(q1: f64, d: f64) -> Self {
        Self {
            q1,
            q1_dot: 0.0,
            d,
            d_dot: 0.0,
        }
    }
}

/// Chain outputs relative to the base frame for each mass point:
/// base, links `1..n`, then the payload if attached.
#[derive(Debug, Clone)]
pub struct ChainKinematics {
    pub masses: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    pub accelerations: Vec<Vector3<f64>>,
    pub end_effector: Vector3<f64>,
}

/// Per-mass-point data for ZMP evaluation, all in `F0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassPoints {
    pub masses: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub accelerations: Vec<Vector3<f64>>,
}

impl RobotModel {
    pub fn from_json_str(s: &str) -> Result<Self, RobotError> {
        let model: RobotModel = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    pub fn from_file(path: &Path) -> Result<Self, RobotError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        let bad = |m: String| Err(RobotError::Invalid(m));
        let n = self.dh.len();
        if n == 0 {
            return bad("chain has no joints".into());
        }
        if self.links.len() != n || self.joint_limits.len() != n {
            return bad(format!(
                "{n} joints but {} links and {} joint limits",
                self.links.len(),
                self.joint_limits.len()
            ));
        }
        if !(self.base_mass > 0.0) || self.links.iter().any(|l| !(l.mass > 0.0)) {
            return bad("masses must be positive".into());
        }
        if let Some(p) = &self.payload {
            if !(p.mass > 0.0) {
                return bad("payload mass must be positive".into());
            }
        }
        for (i, l) in self.joint_limits.iter().enumerate() {
            if !(l.lower < l.upper) || !(l.rate > 0.0) || !(l.accel > 0.0) {
                return bad(format!("joint {} limits are not well ordered", i + 1));
            }
        }
        let b = &self.base_limits;
        if !(b.v_min < b.v_max) || !(b.accel > 0.0) || !(b.yaw_rate > 0.0) || !(b.yaw_accel > 0.0) {
            return bad("base limits are not well ordered".into());
        }
        if self.support_polygon.len() < 3 {
            return bad("support polygon needs at least 3 vertices".into());
        }
        if !crate::stability::is_convex_ccw(&self.support_polygon) {
            return bad("support polygon must be convex and counter-clockwise".into());
        }
        if crate::stability::signed_distance(&self.support_polygon, Vector2::zeros()) <= 0.0 {
            return bad("support polygon must contain the base origin".into());
        }
        if let Some(r) = &self.reduced {
            if n != 5 {
                return bad("reduced arm mapping needs a five-joint chain".into());
            }
            if !(r.link_length > 0.0) || !(r.reach_min < r.reach_max) || r.reach_max.abs() >= 2.0 * r.link_length {
                return bad("reduced arm reach limits are invalid".into());
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.dh.len()
    }

    pub fn with_payload(&self, payload: Option<Payload>) -> Self {
        let mut m = self.clone();
        m.payload = payload;
        m
    }

    pub fn total_mass(&self) -> f64 {
        self.base_mass
            + self.links.iter().map(|l| l.mass).sum::<f64>()
            + self.payload.map_or(0.0, |p| p.mass)
    }

    pub fn masses(&self) -> Vec<f64> {
        let mut m = Vec::with_capacity(self.dof() + 2);
        m.push(self.base_mass);
        m.extend(self.links.iter().map(|l| l.mass));
        if let Some(p) = &self.payload {
            m.push(p.mass);
        }
        m
    }

    /// Extent of the support polygon along x (track gauge direction).
    pub fn polygon_width(&self) -> f64 {
        let (lo, hi) = self
            .support_polygon
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.x), hi.max(v.x)));
        hi - lo
    }

    pub fn reduced(&self) -> Result<&ReducedArm, RobotError> {
        self.reduced.as_ref().ok_or(RobotError::NoReducedModel)
    }

    /// Positions, velocities and accelerations of every mass point relative
    /// to the base frame, driven by joint motion only.
    pub fn chain(&self, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> ChainKinematics {
        let n = self.dof();
        let mut t = Matrix4::identity();
        t[(0, 3)] = self.mount.x;
        t[(1, 3)] = self.mount.y;
        t[(2, 3)] = self.mount.z;
        let mut td = Matrix4::zeros();
        let mut tdd = Matrix4::zeros();

        let cap = n + 2;
        let mut out = ChainKinematics {
            masses: self.masses(),
            positions: Vec::with_capacity(cap),
            velocities: Vec::with_capacity(cap),
            accelerations: Vec::with_capacity(cap),
            end_effector: Vector3::zeros(),
        };
        out.positions.push(self.base_com);
        out.velocities.push(Vector3::zeros());
        out.accelerations.push(Vector3::zeros());

        let point = |m: &Matrix4<f64>, p: &Vector3<f64>, w: f64| -> Vector3<f64> {
            (m * Vector4::new(p.x, p.y, p.z, w)).xyz()
        };

        for (i, row) in self.dh.iter().enumerate() {
            let (a, da, dda) = joint_transform(row, q[i]);
            let a_dot = da * qd[i];
            let a_ddot = dda * (qd[i] * qd[i]) + da * qdd[i];
            let next_tdd = tdd * a + 2.0 * td * a_dot + t * a_ddot;
            let next_td = td * a + t * a_dot;
            t *= a;
            td = next_td;
            tdd = next_tdd;
            let c = &self.links[i].com;
            out.positions.push(point(&t, c, 1.0));
            out.velocities.push(point(&td, c, 1.0));
            out.accelerations.push(point(&tdd, c, 1.0));
        }
        let ee = &self.end_effector;
        out.end_effector = point(&t, ee, 1.0);
        if let Some(p) = &self.payload {
            out.positions.push(out.end_effector + p.offset);
            out.velocities.push(point(&td, ee, 1.0));
            out.accelerations.push(point(&tdd, ee, 1.0));
        }
        out
    }

    /// Mass-point positions `p_i` in `F0` (base, links, payload).
    pub fn link_com_positions(&self, q: &DVector<f64>) -> Vec<Vector3<f64>> {
        let z = DVector::zeros(self.dof());
        self.chain(q, &z, &z).positions
    }

    pub fn end_effector(&self, q: &DVector<f64>) -> Vector3<f64> {
        let z = DVector::zeros(self.dof());
        self.chain(q, &z, &z).end_effector
    }

    /// Velocities `J_p·q̄̇` of every mass point, expressed in `F0`.
    pub fn link_com_velocities(&self, pos: &FullState, vel: &FullState) -> Vec<Vector3<f64>> {
        let z = DVector::zeros(self.dof());
        let ch = self.chain(&pos.q, &vel.q, &z);
        let (r, rd, _) = euler_rotation_derivatives(&pos.euler, &vel.euler, &Vector3::zeros());
        let rt = r.transpose();
        ch.positions
            .iter()
            .zip(&ch.velocities)
            .map(|(f, fd)| rt * (vel.base + rd * f + r * fd))
            .collect()
    }

    /// Inertial accelerations of every mass point, expressed in `F0`.
    pub fn link_com_accelerations(&self, pos: &FullState, vel: &FullState, acc: &FullState) -> Vec<Vector3<f64>> {
        self.mass_points(pos, vel, acc).accelerations
    }

    pub fn mass_points(&self, pos: &FullState, vel: &FullState, acc: &FullState) -> MassPoints {
        let ch = self.chain(&pos.q, &vel.q, &acc.q);
        let (r, rd, rdd) = euler_rotation_derivatives(&pos.euler, &vel.euler, &acc.euler);
        let rt = r.transpose();
        let accelerations = ch
            .positions
            .iter()
            .zip(&ch.velocities)
            .zip(&ch.accelerations)
            .map(|((f, fd), fdd)| rt * (acc.base + rdd * f + 2.0 * rd * fd + r * fdd))
            .collect();
        MassPoints {
            masses: ch.masses,
            positions: ch.positions,
            accelerations,
        }
    }

    /// Mass points for a fixed base whose `F0` frame accelerates linearly
    /// with `base_accel` (expressed in `F0`) while the arm moves.
    pub fn mass_points_fixed_base(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        base_accel: Vector3<f64>,
    ) -> MassPoints {
        let ch = self.chain(q, qd, qdd);
        MassPoints {
            masses: ch.masses,
            positions: ch.positions,
            accelerations: ch.accelerations.into_iter().map(|a| a + base_accel).collect(),
        }
    }

    /// Joint positions, rates and accelerations for a reduced-arm state and
    /// input `(u_q1, u_d)`.
    pub fn simplified_to_full(
        &self,
        x: &SimplifiedState,
        u: (f64, f64),
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>), RobotError> {
        let arm = self.reduced()?;
        let l = arm.link_length;
        let ratio = x.d / (2.0 * l);
        if !(ratio.abs() < 1.0) {
            return Err(RobotError::IkDomain { d: x.d, limit: 2.0 * l });
        }
        let c = (1.0 - ratio * ratio).sqrt();
        let q2 = (-ratio).asin();
        let q2d = -x.d_dot / (2.0 * l * c);
        let q2dd = -u.1 / (2.0 * l * c) - x.d * x.d_dot * x.d_dot / (8.0 * l.powi(3) * c.powi(3));
        let q = DVector::from_vec(vec![x.q1, q2, -PI - 2.0 * q2, PI / 2.0 + q2, arm.wrist]);
        let qd = DVector::from_vec(vec![x.q1_dot, q2d, -2.0 * q2d, q2d, 0.0]);
        let qdd = DVector::from_vec(vec![u.0, q2dd, -2.0 * q2dd, q2dd, 0.0]);
        Ok((q, qd, qdd))
    }

    pub fn simplified_joints(&self, q1: f64, d: f64) -> Result<DVector<f64>, RobotError> {
        Ok(self.simplified_to_full(&SimplifiedState::at_rest(q1, d), (0.0, 0.0))?.0)
    }

    /// Largest reach rate for which every mapped joint rate stays within limits.
    pub fn reach_rate_limit(&self, d: f64) -> Result<f64, RobotError> {
        let arm = self.reduced()?;
        let l = arm.link_length;
        let ratio = d / (2.0 * l);
        if !(ratio.abs() < 1.0) {
            return Err(RobotError::IkDomain { d, limit: 2.0 * l });
        }
        let c = (1.0 - ratio * ratio).sqrt();
        let jl = &self.joint_limits;
        let per_q2 = jl[1].rate.min(jl[2].rate / 2.0).min(jl[3].rate);
        Ok(2.0 * l * c * per_q2)
    }

    /// Componentwise check of joint accelerations against their limits.
    pub fn accel_within_limits(&self, qdd: &DVector<f64>, tol: f64) -> bool {
        qdd.iter()
            .zip(&self.joint_limits)
            .all(|(a, l)| a.abs() <= l.accel + tol)
    }

    pub fn rates_within_limits(&self, qd: &DVector<f64>, tol: f64) -> bool {
        qd.iter()
            .zip(&self.joint_limits)
            .all(|(a, l)| a.abs() <= l.rate + tol)
    }

    pub fn positions_within_limits(&self, q: &DVector<f64>, tol: f64) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(a, l)| *a >= l.lower - tol && *a <= l.upper + tol)
    }
}

fn joint_transform(row: &DhRow, qi: f64) -> (Matrix4<f64>, Matrix4<f64>, Matrix4<f64>) {
    let (mut theta, mut alpha, mut d) = (row.theta, row.alpha, row.d);
    match row.joint {
        JointSlot::Theta => theta += qi,
        JointSlot::Alpha => alpha += qi,
        JointSlot::D => d += qi,
    }
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    let a = row.a;
    #[rustfmt::skip]
    let m = Matrix4::new(
        ct, -st * ca, st * sa, a * ct,
        st, ct * ca, -ct * sa, a * st,
        0.0, sa, ca, d,
        0.0, 0.0, 0.0, 1.0,
    );
    let (da, dda) = match row.joint {
        JointSlot::Theta => {
            #[rustfmt::skip]
            let d1 = Matrix4::new(
                -st, -ct * ca, ct * sa, -a * st,
                ct, -st * ca, st * sa, a * ct,
                0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0,
            );
            #[rustfmt::skip]
            let d2 = Matrix4::new(
                -ct, st * ca, -st * sa, -a * ct,
                -st, -ct * ca, ct * sa, -a * st,
                0.0, 0.0, 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0,
            );
            (d1, d2)
        }
        JointSlot::Alpha => {
            #[rustfmt::skip]
            let d1 = Matrix4::new(
                0.0, st * sa, st * ca, 0.0,
                0.0, -ct * sa, -ct * ca, 0.0,
                0.0, ca, -sa, 0.0,
                0.0, 0.0, 0.0, 0.0,
            );
            #[rustfmt::skip]
            let d2 = Matrix4::new(
                0.0, st * ca, -st * sa, 0.0,
                0.0, -ct * ca, ct * sa, 0.0,
                0.0, -sa, -ca, 0.0,
                0.0, 0.0, 0.0, 0.0,
            );
            (d1, d2)
        }
        JointSlot::D => {
            let mut d1 = Matrix4::zeros();
            d1[(2, 3)] = 1.0;
            (d1, Matrix4::zeros())
        }
    };
    (m, da, dda)
}

/// `R = Rz(ψ)·Rx(θ)·Ry(φ)`.
pub fn euler_rotation(e: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(e.x) * rot_x(e.y) * rot_y(e.z)
}

/// `R`, `Ṙ` and `R̈` for z-x-y Euler angles and their derivatives.
pub fn euler_rotation_derivatives(
    e: &Vector3<f64>,
    ed: &Vector3<f64>,
    edd: &Vector3<f64>,
) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let factors = [
        (rot_z(e.x), skew(&Vector3::z())),
        (rot_x(e.y), skew(&Vector3::x())),
        (rot_y(e.z), skew(&Vector3::y())),
    ];
    let rates = [ed.x, ed.y, ed.z];
    let accs = [edd.x, edd.y, edd.z];
    let mut m = [Matrix3::zeros(); 3];
    let mut md = [Matrix3::zeros(); 3];
    let mut mdd = [Matrix3::zeros(); 3];
    for k in 0..3 {
        let (r, k_hat) = factors[k];
        m[k] = r;
        md[k] = r * k_hat * rates[k];
        mdd[k] = r * (k_hat * k_hat * rates[k] * rates[k] + k_hat * accs[k]);
    }
    let r = m[0] * m[1] * m[2];
    let rd = md[0] * m[1] * m[2] + m[0] * md[1] * m[2] + m[0] * m[1] * md[2];
    let rdd = mdd[0] * m[1] * m[2]
        + m[0] * mdd[1] * m[2]
        + m[0] * m[1] * mdd[2]
        + 2.0 * (md[0] * md[1] * m[2] + md[0] * m[1] * md[2] + m[0] * md[1] * md[2]);
    (r, rd, rdd)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unicycle base state on terrain plus arm joints.
#[derive(Debug, Clone, PartialEq)]
pub struct MobileState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub heading: f64,
    pub heading_rate: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileInput {
    pub u_a: f64,
    pub u_psi: f64,
    pub u_q: DVector<f64>,
}

impl MobileState {
    pub fn at_rest(x: f64, y: f64, heading: f64, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            x,
            y,
            v: 0.0,
            heading,
            heading_rate: 0.0,
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut v = DVector::zeros(5 + 2 * n);
        v[0] = self.x;
        v[1] = self.y;
        v[2] = self.v;
        v[3] = self.heading;
        v[4] = self.heading_rate;
        v.rows_mut(5, n).copy_from(&self.q);
        v.rows_mut(5 + n, n).copy_from(&self.qd);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = (v.len() - 5) / 2;
        Self {
            x: v[0],
            y: v[1],
            v: v[2],
            heading: v[3],
            heading_rate: v[4],
            q: v.rows(5, n).into_owned(),
            qd: v.rows(5 + n, n).into_owned(),
        }
    }
}

/// Time derivative of the mobile state. The base moves along its heading
/// axis `r̂2` at speed `v` and its attitude follows the terrain.
pub fn kinematics_rhs(terrain: &TerrainModel, x: &MobileState, u: &MobileInput) -> Result<MobileState, TerrainError> {
    let att = terrain.base_attitude(x.x, x.y, x.heading)?;
    let r2 = att.r2();
    Ok(MobileState {
        x: x.v * r2.x,
        y: x.v * r2.y,
        v: u.u_a,
        heading: x.heading_rate,
        heading_rate: u.u_psi,
        q: x.qd.clone(),
        qd: u.u_q.clone(),
    })
}

/// Inertial base velocity `v·r̂2`.
pub fn base_velocity(terrain: &TerrainModel, x: &MobileState) -> Result<Vector3<f64>, TerrainError> {
    Ok(terrain.base_attitude(x.x, x.y, x.heading)?.r2() * x.v)
}

/// One classical Runge-Kutta step.
pub fn rk4_step<F, E>(f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>, E>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, E>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (h / 2.0)))?;
    let k3 = f(&(x + &k2 * (h / 2.0)))?;
    let k4 = f(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// Integrates the mobile state under a constant input.
pub fn simulate_mobile(
    terrain: &TerrainModel,
    x0: &MobileState,
    u: &MobileInput,
    duration: f64,
    step: f64,
) -> Result<MobileState, TerrainError> {
    let steps = (duration / step).round().max(0.0) as usize;
    let h = if steps > 0 { duration / steps as f64 } else { 0.0 };
    let mut v = x0.to_vector();
    let f = |s: &DVector<f64>| kinematics_rhs(terrain, &MobileState::from_vector(s), u).map(|d| d.to_vector());
    for _ in 0..steps {
        v = rk4_step(f, &v, h)?;
    }
    Ok(MobileState::from_vector(&v))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Rz(θ)·Tz(d)·Tx(a)·Rx(α) as an explicit product
    fn dh_product(theta: f64, d: f64, a: f64, alpha: f64) -> Matrix4<f64> {
        let rz = Matrix4::from_euler_angles(0.0, 0.0, theta);
        let rx = Matrix4::from_euler_angles(alpha, 0.0, 0.0);
        let tz = Matrix4::new_translation(&Vector3::new(0.0, 0.0, d));
        let tx = Matrix4::new_translation(&Vector3::new(a, 0.0, 0.0));
        rz * tz * tx * rx
    }

    #[test]
    fn joint_transforms_match_product_and_differences() {
        let h = 1e-5;
        for (joint, q) in [(JointSlot::Theta, 0.7), (JointSlot::Alpha, -1.1), (JointSlot::D, 0.4)] {
            let row = DhRow { theta: 0.3, d: 1.2, a: 2.5, alpha: -0.8, joint };
            let eval = |q: f64| {
                let (mut t, mut d, mut al) = (row.theta, row.d, row.alpha);
                match joint {
                    JointSlot::Theta => t += q,
                    JointSlot::Alpha => al += q,
                    JointSlot::D => d += q,
                }
                dh_product(t, d, row.a, al)
            };
            let (m, d1, d2) = joint_transform(&row, q);
            assert!((m - eval(q)).amax() < 1e-12);
            let fd1 = (eval(q + h) - eval(q - h)) / (2.0 * h);
            let fd2 = (eval(q + h) - 2.0 * eval(q) + eval(q - h)) / (h * h);
            assert!((d1 - fd1).amax() < 1e-8);
            assert!((d2 - fd2).amax() < 1e-4);
        }
    }
    use crate::terrain::Bounds2;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn feller() -> RobotModel {
        RobotModel::from_json_str(include_str!("../../../robots/feller_buncher.json")).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    // Independent chain: plain homogeneous products, one hand-built factor per joint.
    fn oracle_positions(q: &[f64]) -> Vec<Vector3<f64>> {
        let (l0, l1, l2, l3, l4, l5) = (1.60, 0.96, 3.27, 3.27, 0.458, 0.677);
        let hom = |r: Matrix3<f64>, p: Vector3<f64>| {
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p);
            m
        };
        let tr = |x: f64, y: f64, z: f64| hom(Matrix3::identity(), Vector3::new(x, y, z));
        let at = |m: &Matrix4<f64>, x: f64, y: f64, z: f64| (m * Vector4::new(x, y, z, 1.0)).xyz();
        let f1 = tr(0.0, 0.0, l0) * hom(rot_z(q[0]), Vector3::zeros()) * tr(0.0, 0.0, l1);
        let f2 = f1 * hom(rot_x(q[1]), Vector3::zeros());
        let f3 = f2 * tr(0.0, 0.0, l2) * hom(rot_x(q[2]), Vector3::zeros());
        let f4 = f3 * tr(0.0, 0.0, l3) * hom(rot_x(q[3]), Vector3::zeros());
        let f5 = f4 * hom(rot_z(q[4]), Vector3::zeros()) * tr(0.0, 0.0, l4);
        vec![
            Vector3::new(0.0, 0.0, l0 / 2.0),
            at(&f1, 0.0, 0.0, -l1 / 2.0),
            at(&f2, 0.0, 0.0, l2 / 2.0),
            at(&f3, 0.0, 0.0, l3 / 2.0),
            at(&f4, 0.0, 0.0, l4 / 2.0),
            at(&f5, -l5 / 2.0, 0.0, 0.0),
        ]
    }

    #[test]
    fn loads_feller_buncher() {
        let m = feller();
        assert_eq!(m.dof(), 5);
        assert_eq!(m.masses(), vec![13000.0, 5000.0, 2000.0, 1000.0, 50.0, 2600.0]);
        assert_abs_diff_eq!(m.polygon_width(), 3.23, epsilon = 1e-12);
        assert!(m.payload.is_none());
    }

    #[test]
    fn base_com_at_zero_configuration() {
        let m = feller();
        let p = m.link_com_positions(&DVector::zeros(5));
        assert_eq!(p[0], m.base_com);
        assert_abs_diff_eq!(p[0], Vector3::new(0.0, 0.0, 0.8), epsilon = 0.0);
    }

    #[test]
    fn matches_homogeneous_oracle_at_test_configuration() {
        let m = feller();
        let q = [0.0, -PI / 6.0, -2.0 * PI / 3.0, PI / 6.0, -PI / 2.0];
        let got = m.link_com_positions(&dv(&q));
        for (a, b) in got.iter().zip(oracle_positions(&q)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_oracle_at_random_configurations() {
        let m = feller();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let q: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            for (a, b) in m.link_com_positions(&dv(&q)).iter().zip(oracle_positions(&q)) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn arm_geometry_lies_in_heading_plane() {
        let m = feller();
        let q = dv(&[0.0, -PI / 6.0, -2.0 * PI / 3.0, PI / 6.0, -PI / 2.0]);
        let ch = m.chain(&q, &DVector::zeros(5), &DVector::zeros(5));
        for p in &ch.positions {
            assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(ch.end_effector.x, 0.0, epsilon = 1e-12);
        let mapped = m.simplified_joints(0.0, 3.27).unwrap();
        let ch = m.chain(&mapped, &DVector::zeros(5), &DVector::zeros(5));
        // stick CoM sits halfway between the boom tip and the pivot-height stick tip
        assert_abs_diff_eq!(ch.positions[3].z, 1.60 + 0.96 + 3.27 * (PI / 6.0).cos() / 2.0, epsilon = 1e-12);
        let tip = m.end_effector(&mapped);
        assert_abs_diff_eq!(tip.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tip.y, 3.27 + 0.458, epsilon = 1e-12);
        assert_abs_diff_eq!(tip.z, 1.60 + 0.96 - 0.677, epsilon = 1e-12);
    }

    #[test]
    fn yaw_by_pi_mirrors_arm() {
        let m = feller();
        let q = dv(&[0.4, -0.3, -2.1, 0.9, -1.0]);
        let mut q2 = q.clone();
        q2[0] += PI;
        let a = m.link_com_positions(&q);
        let b = m.link_com_positions(&q2);
        for (pa, pb) in a.iter().zip(&b).skip(1) {
            assert_abs_diff_eq!(pb.x, -pa.x, epsilon = 1e-12);
            assert_abs_diff_eq!(pb.y, -pa.y, epsilon = 1e-12);
            assert_abs_diff_eq!(pb.z, pa.z, epsilon = 1e-12);
        }
    }

    #[test]
    fn payload_composition() {
        let m = feller();
        let q = dv(&[0.2, -PI / 6.0, -2.0 * PI / 3.0, PI / 3.0, -PI / 2.0]);
        let com = |model: &RobotModel| {
            let p = model.link_com_positions(&q);
            let w = model.masses();
            p.iter().zip(&w).map(|(p, m)| p * *m).sum::<Vector3<f64>>() / w.iter().sum::<f64>()
        };
        let bare = com(&m);
        let tree = Payload {
            mass: 4000.0,
            offset: Vector3::new(0.0, 0.0, 4.0),
        };
        let loaded = m.with_payload(Some(tree));
        let at = m.end_effector(&q) + tree.offset;
        let expect = (bare * m.total_mass() + at * 4000.0) / (m.total_mass() + 4000.0);
        assert_abs_diff_eq!(com(&loaded), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(loaded.total_mass(), 27650.0, epsilon = 1e-9);
    }

    fn random_full(rng: &mut ChaCha8Rng, scale: f64) -> FullState {
        let mut r = || rng.gen_range(-scale..scale);
        FullState {
            base: Vector3::new(r(), r(), r()),
            euler: Vector3::new(r(), r() * 0.5, r() * 0.5),
            q: DVector::from_fn(5, |_, _| r()),
        }
    }

    fn advance(p: &FullState, v: &FullState, a: &FullState, t: f64) -> FullState {
        FullState {
            base: p.base + v.base * t + a.base * (0.5 * t * t),
            euler: p.euler + v.euler * t + a.euler * (0.5 * t * t),
            q: &p.q + &v.q * t + &a.q * (0.5 * t * t),
        }
    }

    fn inertial(m: &RobotModel, s: &FullState) -> Vec<Vector3<f64>> {
        let r = s.rotation();
        m.link_com_positions(&s.q).iter().map(|f| s.base + r * f).collect()
    }

    #[test]
    fn accelerations_match_finite_differences() {
        let m = feller().with_payload(Some(Payload {
            mass: 4000.0,
            offset: Vector3::new(0.0, 0.0, 4.0),
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-3;
        for _ in 0..300 {
            let p = random_full(&mut rng, 1.0);
            let v = random_full(&mut rng, 1.0);
            let a = random_full(&mut rng, 1.0);
            let got = m.link_com_accelerations(&p, &v, &a);
            let rt = p.rotation().transpose();
            let plus = inertial(&m, &advance(&p, &v, &a, h));
            let mid = inertial(&m, &p);
            let minus = inertial(&m, &advance(&p, &v, &a, -h));
            for i in 0..got.len() {
                let fd = rt * ((plus[i] - 2.0 * mid[i] + minus[i]) / (h * h));
                let tol = 1e-6 * (1.0 + got[i].norm()) + 1e-4;
                assert!((got[i] - fd).norm() <= tol, "{} vs {}", got[i], fd);
            }
        }
    }

    #[test]
    fn accelerations_match_high_order_differences() {
        // five-point stencil along the quadratic state path for tighter checks
        let m = feller();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-2;
        for _ in 0..200 {
            let p = random_full(&mut rng, 1.0);
            let v = random_full(&mut rng, 1.0);
            let a = random_full(&mut rng, 1.0);
            let got = m.link_com_accelerations(&p, &v, &a);
            let rt = p.rotation().transpose();
            let s: Vec<Vec<Vector3<f64>>> = [-2.0, -1.0, 0.0, 1.0, 2.0]
                .iter()
                .map(|k| inertial(&m, &advance(&p, &v, &a, k * h)))
                .collect();
            for i in 0..got.len() {
                let fd = rt * ((-s[0][i] + 16.0 * s[1][i] - 30.0 * s[2][i] + 16.0 * s[3][i] - s[4][i]) / (12.0 * h * h));
                assert!((got[i] - fd).norm() <= 1e-6 * (1.0 + got[i].norm()), "{} vs {}", got[i], fd);
            }
        }
    }

    #[test]
    fn rest_has_zero_acceleration() {
        let m = feller();
        let p = FullState::with_joints(dv(&[0.1, -0.5, -2.0, 1.0, -1.5]));
        for a in m.link_com_accelerations(&p, &FullState::zeros(5), &FullState::zeros(5)) {
            assert_eq!(a, Vector3::zeros());
        }
    }

    #[test]
    fn pure_base_acceleration_is_rigid() {
        let m = feller();
        let p = FullState::with_joints(dv(&[0.1, -0.5, -2.0, 1.0, -1.5]));
        let mut acc = FullState::zeros(5);
        acc.base.y = 1.7;
        for a in m.link_com_accelerations(&p, &FullState::zeros(5), &acc) {
            assert_abs_diff_eq!(a, Vector3::new(0.0, 1.7, 0.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn velocities_match_finite_differences() {
        let m = feller();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..1000 {
            let p = random_full(&mut rng, 1.5);
            let v = random_full(&mut rng, 1.0);
            let z = FullState::zeros(5);
            let got = m.link_com_velocities(&p, &v);
            let rt = p.rotation().transpose();
            let plus = inertial(&m, &advance(&p, &v, &z, h));
            let minus = inertial(&m, &advance(&p, &v, &z, -h));
            for i in 0..got.len() {
                let fd = rt * ((plus[i] - minus[i]) / (2.0 * h));
                assert!((got[i] - fd).norm() <= 1e-6 * (1.0 + got[i].norm()));
            }
        }
    }

    #[test]
    fn simplified_mapping_values() {
        let m = feller();
        let (q, qd, _) = m.simplified_to_full(&SimplifiedState::at_rest(0.0, 0.0), (0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q, dv(&[0.0, 0.0, -PI, PI / 2.0, -PI / 2.0]), epsilon = 1e-15);
        assert_eq!(qd, DVector::zeros(5));
        let q = m.simplified_joints(0.0, 3.27).unwrap();
        assert_abs_diff_eq!(q[1], -PI / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[2], -2.0 * PI / 3.0, epsilon = 1e-14);
        assert!(matches!(
            m.simplified_joints(0.0, 6.54),
            Err(RobotError::IkDomain { .. })
        ));
    }

    #[test]
    fn simplified_rates_match_finite_differences() {
        let m = feller();
        // d(t) = 3 + sin(1.3 t), q1(t) = 0.5 t²
        let d = |t: f64| 3.0 + (1.3 * t).sin();
        let dd = |t: f64| 1.3 * (1.3 * t).cos();
        let ddd = |t: f64| -1.69 * (1.3 * t).sin();
        let q2 = |t: f64| m.simplified_joints(0.5 * t * t, d(t)).unwrap();
        let h = 1e-4;
        for k in 0..50 {
            let t = 0.1 * k as f64;
            let x = SimplifiedState {
                q1: 0.5 * t * t,
                q1_dot: t,
                d: d(t),
                d_dot: dd(t),
            };
            let (_, qd, qdd) = m.simplified_to_full(&x, (1.0, ddd(t))).unwrap();
            let fd1 = (q2(t + h) - q2(t - h)) / (2.0 * h);
            let fd2 = (q2(t + h) - 2.0 * q2(t) + q2(t - h)) / (h * h);
            for j in 0..5 {
                assert!((qd[j] - fd1[j]).abs() <= 1e-6, "rate {j}");
                assert!((qdd[j] - fd2[j]).abs() <= 1e-6 * (1.0 + qdd[j].abs()) + 1e-6, "accel {j}");
            }
        }
    }

    #[test]
    fn rhs_and_integration() {
        let t = TerrainModel::flat(Bounds2::square(50.0));
        let zero_in = MobileInput {
            u_a: 0.0,
            u_psi: 0.0,
            u_q: DVector::zeros(5),
        };
        let x = MobileState::at_rest(1.0, 2.0, 0.3, DVector::zeros(5));
        let d = kinematics_rhs(&t, &x, &zero_in).unwrap();
        assert_eq!(d.to_vector(), DVector::zeros(15));
        let mut moving = MobileState::at_rest(0.0, 0.0, 0.0, DVector::zeros(5));
        moving.v = 1.0;
        assert_abs_diff_eq!(base_velocity(&t, &moving).unwrap(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let push = MobileInput {
            u_a: 1.0,
            ..zero_in
        };
        let end = simulate_mobile(&t, &x, &push, 1.0, 1e-3).unwrap();
        assert!((end.v - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn reach_rate_limit_respects_joint_rates() {
        let m = feller();
        for k in 0..20 {
            let d = 1.0 + 0.25 * k as f64;
            let lim = m.reach_rate_limit(d).unwrap();
            let x = SimplifiedState {
                q1: 0.0,
                q1_dot: 0.0,
                d,
                d_dot: lim,
            };
            let (_, qd, _) = m.simplified_to_full(&x, (0.0, 0.0)).unwrap();
            assert!(m.rates_within_limits(&qd, 1e-12));
            assert!(qd.iter().zip(&m.joint_limits).any(|(r, l)| (r.abs() - l.rate).abs() < 1e-9));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn end_effector_height_is_invariant_under_reduced_motion(
            q1 in -7.0f64..7.0, d in 0.5f64..6.0, q1b in -7.0f64..7.0, db in 0.5f64..6.0,
        ) {
            let m = feller();
            let a = m.end_effector(&m.simplified_joints(q1, d).unwrap());
            let b = m.end_effector(&m.simplified_joints(q1b, db).unwrap());
            prop_assert!((a.z - b.z).abs() <= 1e-9);
            let radial = (a.x * a.x + a.y * a.y).sqrt();
            prop_assert!((radial - (d + 0.458)).abs() <= 1e-9);
        }
    }
}
