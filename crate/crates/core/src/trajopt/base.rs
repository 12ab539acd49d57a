use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{Trajectory, TrajectoryStatus, TrajoptError};
use crate::stability::{contains_point, MassAggregates, ZmpPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelBounds {
    pub lower: f64,
    pub upper: f64,
}

impl AccelBounds {
    pub fn intersect(&self, lower: f64, upper: f64) -> Self {
        Self {
            lower: self.lower.max(lower),
            upper: self.upper.min(upper),
        }
    }
}

/// Interval of forward base accelerations that keeps every ZMP of `locus`
/// inside the polygon, each point shifted by `−(M_z/(M g_z))·ÿ` along y.
///
/// The clearances `d_u`, `d_l` are the worst along the locus, reduced by
/// `margin`.
pub fn base_accel_bounds(
    locus: &[ZmpPoint],
    polygon: &[Vector2<f64>],
    agg: &MassAggregates,
    g_z: f64,
    margin: f64,
) -> Result<AccelBounds, TrajoptError> {
    if !(agg.mz > 0.0) || !(g_z > 0.0) {
        return Err(TrajoptError::Infeasible("mass moment about the base plane must be positive".into()));
    }
    let mut d_u = f64::INFINITY;
    let mut d_l = f64::INFINITY;
    for p in locus {
        let m = contains_point(polygon, *p, 0.0).margins;
        d_u = d_u.min(m.d_u - margin);
        d_l = d_l.min(m.d_l - margin);
    }
    let gain = agg.m * g_z / agg.mz;
    let b = AccelBounds {
        lower: -d_u.max(0.0) * gain,
        upper: d_l.max(0.0) * gain,
    };
    if d_u <= 0.0 && d_l <= 0.0 {
        return Err(TrajoptError::EmptyInterval {
            lower: b.lower,
            upper: b.upper,
        });
    }
    Ok(b)
}

/// Rest-to-rest minimum-time straight motion with asymmetric acceleration
/// limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BangBang {
    pub distance: f64,
    /// Acceleration of the first phase (same sign as `distance`).
    pub first: f64,
    /// Acceleration of the last phase.
    pub last: f64,
    pub peak: f64,
    pub t_first: f64,
    pub t_coast: f64,
    pub duration: f64,
}

impl BangBang {
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        if self.duration == 0.0 || t <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let t1 = self.t_first;
        let t2 = t1 + self.t_coast;
        if t < t1 {
            (0.5 * self.first * t * t, self.first * t, self.first)
        } else if t <= t2 {
            (0.5 * self.first * t1 * t1 + self.peak * (t - t1), self.peak, 0.0)
        } else if t < self.duration {
            let r = self.duration - t;
            (self.distance + 0.5 * self.last * r * r, -self.last * r, self.last)
        } else {
            (self.distance, 0.0, 0.0)
        }
    }

    /// Samples with every phase switch included; states `(y, v)`, input `a`.
    pub fn to_trajectory(&self, samples: usize) -> Trajectory {
        let mut traj = Trajectory::empty(&["y", "v"], &["a"], TrajectoryStatus::Optimal);
        let mut times: Vec<f64> = (0..samples.max(2))
            .map(|k| self.duration * k as f64 / (samples.max(2) - 1) as f64)
            .collect();
        times.extend([self.t_first, self.t_first + self.t_coast]);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for t in times {
            let (p, v, a) = self.eval(t);
            traj.push(t, vec![p, v], vec![a], ZmpPoint::new(f64::NAN, f64::NAN), f64::NAN);
        }
        traj
    }
}

/// Minimum-time profile covering `distance` from rest to rest with
/// accelerations in `bounds` and `|v| ≤ v_max`.
pub fn bang_bang_base(distance: f64, bounds: AccelBounds, v_max: f64) -> Result<BangBang, TrajoptError> {
    if distance == 0.0 {
        return Ok(BangBang {
            distance,
            first: 0.0,
            last: 0.0,
            peak: 0.0,
            t_first: 0.0,
            t_coast: 0.0,
            duration: 0.0,
        });
    }
    let (first, last) = if distance > 0.0 {
        (bounds.upper, bounds.lower)
    } else {
        (bounds.lower, bounds.upper)
    };
    if !(first * distance > 0.0) || !(last * distance < 0.0) || !(v_max > 0.0) {
        return Err(TrajoptError::EmptyInterval {
            lower: bounds.lower,
            upper: bounds.upper,
        });
    }
    let d = distance.abs();
    let (a1, a2) = (first.abs(), last.abs());
    let peak = (2.0 * d * a1 * a2 / (a1 + a2)).sqrt().min(v_max);
    let t_first = peak / a1;
    let t_last = peak / a2;
    let t_coast = ((d - 0.5 * peak * (t_first + t_last)) / peak).max(0.0);
    Ok(BangBang {
        distance,
        first,
        last,
        peak: peak * distance.signum(),
        t_first,
        t_coast,
        duration: t_first + t_coast + t_last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rect() -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(-1.615, -2.5),
            Vector2::new(1.615, -2.5),
            Vector2::new(1.615, 2.5),
            Vector2::new(-1.615, 2.5),
        ]
    }

    fn agg() -> MassAggregates {
        MassAggregates {
            m: 20000.0,
            mx: 0.0,
            my: 0.0,
            mz: 40000.0,
        }
    }

    #[test]
    fn centred_locus_is_symmetric() {
        let b = base_accel_bounds(&[ZmpPoint::new(0.0, 0.0)], &rect(), &agg(), 9.81, 0.0).unwrap();
        let expect = 2.5 * 20000.0 * 9.81 / 40000.0;
        assert_abs_diff_eq!(b.upper, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(b.lower, -expect, epsilon = 1e-12);
    }

    #[test]
    fn touching_the_rear_edge_forbids_forward_acceleration() {
        let b = base_accel_bounds(&[ZmpPoint::new(0.0, -2.5), ZmpPoint::new(0.0, 1.0)], &rect(), &agg(), 9.81, 0.0).unwrap();
        assert_eq!(b.upper, 0.0);
        assert_abs_diff_eq!(b.lower, -1.5 * 20000.0 * 9.81 / 40000.0, epsilon = 1e-12);
        let both = [ZmpPoint::new(0.0, -2.5), ZmpPoint::new(0.0, 2.5)];
        assert!(matches!(
            base_accel_bounds(&both, &rect(), &agg(), 9.81, 0.0),
            Err(TrajoptError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn symmetric_triangle() {
        let bb = bang_bang_base(2.0, AccelBounds { lower: -1.0, upper: 1.0 }, 10.0).unwrap();
        assert_abs_diff_eq!(bb.duration, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(bang_bang_base(0.0, AccelBounds { lower: -1.0, upper: 1.0 }, 1.0).unwrap().duration, 0.0);
    }

    #[test]
    fn backing_up_uses_the_lower_bound_first() {
        let bb = bang_bang_base(-3.0, AccelBounds { lower: -0.5, upper: 2.0 }, 10.0).unwrap();
        assert_eq!(bb.first, -0.5);
        assert_eq!(bb.last, 2.0);
        assert!(bb.eval(0.1).1 < 0.0);
        assert_abs_diff_eq!(bb.eval(bb.duration).0, -3.0, epsilon = 1e-12);
        assert!(matches!(
            bang_bang_base(-3.0, AccelBounds { lower: 0.0, upper: 2.0 }, 10.0),
            Err(TrajoptError::EmptyInterval { .. })
        ));
    }

    proptest! {
        #[test]
        fn saturated_time_formula(d in 0.5f64..50.0, a1 in 0.1f64..3.0, a2 in 0.1f64..3.0, v in 0.1f64..3.0, back in any::<bool>()) {
            let dist = if back { -d } else { d };
            let bounds = if back { AccelBounds { lower: -a1, upper: a2 } } else { AccelBounds { lower: -a2, upper: a1 } };
            let bb = bang_bang_base(dist, bounds, v).unwrap();
            // forward integration of the commanded acceleration
            let steps = 100_000;
            let h = bb.duration / steps as f64;
            let (mut y, mut vel, mut vmax) = (0.0f64, 0.0f64, 0.0f64);
            for k in 0..steps {
                let a = bb.eval((k as f64 + 0.5) * h).2;
                y += vel * h + 0.5 * a * h * h;
                vel += a * h;
                vmax = vmax.max(vel.abs());
            }
            // a step straddling a switch is off by at most a·h in speed
            let slack = 2.0 * a1.max(a2) * h;
            prop_assert!((y - dist).abs() <= slack * bb.duration + 1e-9);
            prop_assert!(vel.abs() <= slack);
            prop_assert!(vmax <= v + slack);
            let peak = (2.0 * d * a1 * a2 / (a1 + a2)).sqrt();
            if peak >= v {
                let formula = d / v + v * (1.0 / a1 + 1.0 / a2) / 2.0;
                prop_assert!((bb.duration - formula).abs() < 1e-9 * formula);
            } else {
                prop_assert!((bb.duration - peak * (1.0 / a1 + 1.0 / a2)).abs() < 1e-9 * bb.duration);
            }
        }
    }
}
