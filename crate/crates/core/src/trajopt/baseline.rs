use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{Trajectory, TrajectoryStatus, TrajoptError};
use crate::robot::RobotModel;
use crate::stability::{signed_distance, zmp_of};

/// Rest-to-rest bang–coast–bang profile along one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bcb {
    pub start: f64,
    pub distance: f64,
    /// Peak speed magnitude actually reached.
    pub peak: f64,
    pub accel: f64,
    pub t_accel: f64,
    pub t_coast: f64,
    pub duration: f64,
}

impl Bcb {
    /// Minimum-time profile under `|v| ≤ v_max`, `|a| ≤ a_max`.
    pub fn new(start: f64, distance: f64, v_max: f64, a_max: f64) -> Self {
        let d = distance.abs();
        if d == 0.0 || v_max <= 0.0 || a_max <= 0.0 {
            return Self {
                start,
                distance,
                peak: 0.0,
                accel: a_max.max(0.0),
                t_accel: 0.0,
                t_coast: 0.0,
                duration: 0.0,
            };
        }
        let peak = (d * a_max).sqrt().min(v_max);
        let t_accel = peak / a_max;
        let t_coast = ((d - peak * t_accel) / peak).max(0.0);
        Self {
            start,
            distance,
            peak,
            accel: a_max,
            t_accel,
            t_coast,
            duration: 2.0 * t_accel + t_coast,
        }
    }

    /// Same acceleration, slower coast so that the motion lasts `duration`.
    pub fn stretched(&self, duration: f64) -> Self {
        let d = self.distance.abs();
        if d == 0.0 || duration <= self.duration {
            return Self {
                duration: self.duration.max(if d == 0.0 { duration } else { 0.0 }),
                ..*self
            };
        }
        let a = self.accel;
        let disc = (a * duration).powi(2) - 4.0 * a * d;
        let peak = 0.5 * (a * duration - disc.max(0.0).sqrt());
        let t_accel = peak / a;
        Self {
            peak,
            t_accel,
            t_coast: duration - 2.0 * t_accel,
            duration,
            ..*self
        }
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let s = self.distance.signum();
        let d = self.distance.abs();
        if d == 0.0 {
            return (self.start, 0.0, 0.0);
        }
        let a = self.accel;
        let t1 = self.t_accel;
        let t2 = t1 + self.t_coast;
        let (p, v, acc) = if t <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if t < t1 {
            (0.5 * a * t * t, a * t, a)
        } else if t <= t2 {
            (0.5 * a * t1 * t1 + self.peak * (t - t1), self.peak, 0.0)
        } else if t < self.duration {
            let r = self.duration - t;
            (d - 0.5 * a * r * r, a * r, -a)
        } else {
            (d, 0.0, 0.0)
        };
        (self.start + s * p, s * v, s * acc)
    }
}

/// Joint-space time-optimal motion under box rate and acceleration limits
/// only, every joint synchronised to the slowest one. The ZMP column is
/// filled in for the attitude whose support vector is `gravity`.
pub fn phase_plane_baseline(
    robot: &RobotModel,
    q0: &DVector<f64>,
    qf: &DVector<f64>,
    gravity: &Vector3<f64>,
    samples: usize,
) -> Result<Trajectory, TrajoptError> {
    let n = robot.dof();
    if q0.len() != n || qf.len() != n {
        return Err(TrajoptError::Infeasible(format!("expected {n} joint values")));
    }
    let profiles: Vec<Bcb> = (0..n)
        .map(|i| {
            let l = &robot.joint_limits[i];
            Bcb::new(q0[i], qf[i] - q0[i], l.rate, l.accel)
        })
        .collect();
    let tf = profiles.iter().map(|p| p.duration).fold(0.0, f64::max);
    let profiles: Vec<Bcb> = profiles.iter().map(|p| p.stretched(tf)).collect();

    let mut state_names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
    state_names.extend((1..=n).map(|i| format!("q{i}_dot")));
    let input_names: Vec<String> = (1..=n).map(|i| format!("q{i}_ddot")).collect();
    let mut traj = Trajectory {
        state_names,
        input_names,
        ..Trajectory::empty(&[], &[], TrajectoryStatus::Optimal)
    };
    let count = if tf > 0.0 { samples.max(2) } else { 1 };
    for k in 0..count {
        let t = if count > 1 { tf * k as f64 / (count - 1) as f64 } else { 0.0 };
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        let mut qdd = DVector::zeros(n);
        for (i, p) in profiles.iter().enumerate() {
            let (a, b, c) = p.eval(t);
            q[i] = a;
            qd[i] = b;
            qdd[i] = c;
        }
        let pts = robot.mass_points_fixed_base(&q, &qd, &qdd, Vector3::zeros());
        let zmp = zmp_of(&pts, gravity)?;
        let margin = signed_distance(&robot.support_polygon, zmp.v());
        let mut x: Vec<f64> = q.iter().copied().collect();
        x.extend(qd.iter());
        traj.push(t, x, qdd.iter().copied().collect(), zmp, margin);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    // constant-acceleration steps sampled at each step midpoint
    fn integrate(p: &Bcb) -> (f64, f64) {
        let steps = 200_000;
        let h = p.duration / steps as f64;
        let (mut x, mut v) = (p.start, 0.0);
        for k in 0..steps {
            let t = (k as f64 + 0.5) * h;
            let a = p.eval(t).2;
            x += v * h + 0.5 * a * h * h;
            v += a * h;
        }
        (x, v)
    }

    #[test]
    fn half_turn_takes_four_and_a_half_seconds() {
        let p = Bcb::new(0.0, PI, PI / 4.0, PI / 2.0);
        assert_abs_diff_eq!(p.duration, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(p.duration).0, PI, epsilon = 1e-12);
    }

    #[test]
    fn triangular_profile() {
        let p = Bcb::new(1.0, -2.0, 10.0, 1.0);
        assert_abs_diff_eq!(p.duration, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(p.t_coast, 0.0);
        let (x, v) = integrate(&p);
        assert_abs_diff_eq!(x, -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-4);
    }

    #[test]
    fn zero_distance() {
        let p = Bcb::new(0.3, 0.0, 1.0, 1.0);
        assert_eq!(p.duration, 0.0);
        assert_eq!(p.eval(1.0), (0.3, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn stretched_profiles_reach_the_goal(d in -5.0f64..5.0, v in 0.1f64..2.0, a in 0.1f64..2.0, extra in 0.0f64..3.0) {
            let p = Bcb::new(0.0, d, v, a);
            let s = p.stretched(p.duration + extra);
            prop_assert!((s.duration - p.duration - extra).abs() < 1e-9 || d == 0.0);
            prop_assert!(s.peak <= v + 1e-12);
            let (x, vend) = integrate(&s);
            // a step straddling a switch is off by at most a·h in speed
            let h = s.duration / 200_000.0;
            prop_assert!((x - d).abs() <= 4.0 * a * h * s.duration + 1e-9);
            prop_assert!(vend.abs() <= 4.0 * a * h + 1e-12);
        }
    }
}
