//! Friction budget of a two-track base on a slope.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stability::{MassAggregates, ZmpPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TractionError {
    #[error("holding force {holding:.1} N exceeds the friction limit {limit:.1} N")]
    SlidingStatically { holding: f64, limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TractionState {
    pub f_n: f64,
    pub f_f0: f64,
    pub mu: f64,
    /// ZMP distance to the left (−x) track line.
    pub l: f64,
    /// ZMP distance to the right (+x) track line.
    pub r: f64,
}

/// Track lines are the extreme x coordinates of the support polygon.
pub fn track_lines(poly: &[Vector2<f64>]) -> (f64, f64) {
    poly.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.x), hi.max(v.x)))
}

pub fn traction_state(
    agg: &MassAggregates,
    gravity: &Vector3<f64>,
    zmp: ZmpPoint,
    tracks: (f64, f64),
    mu: f64,
) -> Result<TractionState, TractionError> {
    let f_n = agg.m * gravity.z;
    let f_f0 = agg.m * gravity.x.hypot(gravity.y);
    if f_f0 > mu * f_n {
        return Err(TractionError::SlidingStatically {
            holding: f_f0,
            limit: mu * f_n,
        });
    }
    let gauge = tracks.1 - tracks.0;
    let l = (zmp.x - tracks.0).clamp(0.0, gauge);
    Ok(TractionState {
        f_n,
        f_f0,
        mu,
        l,
        r: gauge - l,
    })
}

/// Conservative per-track traction left after holding the base static.
pub fn available_traction(ts: &TractionState) -> (f64, f64) {
    let spare = ts.mu * ts.f_n - ts.f_f0;
    let gauge = ts.l + ts.r;
    (spare * ts.r / gauge, spare * ts.l / gauge)
}

pub fn traction_score(ts: &TractionState) -> f64 {
    let (left, right) = available_traction(ts);
    left.min(right)
}

/// Allowed lateral ZMP offset from the centre line: half the polygon width
/// on flat ground, shrinking linearly to a tenth of it at 45°.
pub fn deviation_limit(slope: f64, width: f64) -> f64 {
    let s = slope.abs().min(std::f64::consts::FRAC_PI_4) / std::f64::consts::FRAC_PI_4;
    width * (0.5 - 0.4 * s)
}
