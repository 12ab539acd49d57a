//! Time-optimal trajectories for the reduced arm and the mobile base.

mod base;
mod baseline;
mod manipulation;
mod segment;
mod smoothing;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlp::AlmStatus;
use crate::robot::RobotError;
use crate::stability::{StabilityError, ZmpPoint};
use crate::terrain::TerrainError;

pub use base::{base_accel_bounds, bang_bang_base, AccelBounds, BangBang};
pub use baseline::{phase_plane_baseline, Bcb};
pub use manipulation::{
    combined_resimulation, reduced_zmp, solve_manipulation_ocp, ManipulationOptions, ManipulationProblem, ManipulationResult,
};
pub use segment::{
    mobile_zmp, quasi_static_segment, resimulate_segment, solve_segment_ocp, ArmPoints, Pose, SegmentOptions,
    SegmentProblem, SegmentResult,
};
pub use smoothing::{receding_horizon_smooth, Segment, SegmentKind, SmoothingOptions, SmoothingReport};

#[derive(Debug, Error)]
pub enum TrajoptError {
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver stalled ({status:?}, violation {violation:.2e})")]
    SolverStall { status: AlmStatus, violation: f64 },
    #[error("empty acceleration interval [{lower}, {upper}]")]
    EmptyInterval { lower: f64, upper: f64 },
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryStatus {
    Optimal,
    Feasible,
    Failed,
}

/// Sampled trajectory with the ZMP and its polygon margin at every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub zmp: Vec<ZmpPoint>,
    pub margin: Vec<f64>,
    pub status: TrajectoryStatus,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Column layout shared by relocation trajectories.
pub const MOBILE_STATES: [&str; 9] = ["x", "y", "v", "heading", "heading_rate", "q1", "q1_dot", "d", "d_dot"];
pub const MOBILE_INPUTS: [&str; 4] = ["u_a", "u_psi", "u_q1", "u_d"];

impl Trajectory {
    pub fn empty(states: &[&str], inputs: &[&str], status: TrajectoryStatus) -> Self {
        Self {
            state_names: names(states),
            input_names: names(inputs),
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            zmp: Vec::new(),
            margin: Vec::new(),
            status,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>, u: Vec<f64>, zmp: ZmpPoint, margin: f64) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.zmp.push(zmp);
        self.margin.push(margin);
    }

    /// Appends `other` shifted to start where `self` ends. A leading sample
    /// of `other` that coincides with the current last sample is dropped.
    pub fn append(&mut self, other: &Trajectory) {
        let offset = self.times.last().copied().unwrap_or(0.0) - other.times.first().copied().unwrap_or(0.0);
        let skip = usize::from(!self.is_empty() && !other.is_empty());
        for k in skip..other.len() {
            self.push(
                other.times[k] + offset,
                other.states[k].clone(),
                other.inputs[k].clone(),
                other.zmp[k],
                other.margin[k],
            );
        }
        if other.status == TrajectoryStatus::Failed
            || (other.status == TrajectoryStatus::Feasible && self.status == TrajectoryStatus::Optimal)
        {
            self.status = other.status;
        }
    }

    /// Columns `t, states…, inputs…, x_zmp, y_zmp, margin`.
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.state_names.iter().cloned());
        header.extend(self.input_names.iter().cloned());
        header.extend(["x_zmp", "y_zmp", "margin"].map(String::from));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![self.times[k].to_string()];
            rec.extend(self.states[k].iter().map(f64::to_string));
            rec.extend(self.inputs[k].iter().map(f64::to_string));
            rec.push(self.zmp[k].x.to_string());
            rec.push(self.zmp[k].y.to_string());
            rec.push(self.margin[k].to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Fine-step replay of a trajectory with the ZMP recomputed from the
/// integrated states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resimulation {
    pub times: Vec<f64>,
    pub zmp: Vec<ZmpPoint>,
    pub margin: Vec<f64>,
    /// Largest ratio of a mapped joint acceleration to its limit.
    pub accel_ratio: f64,
    /// Largest ratio of a joint or base rate to its limit.
    pub rate_ratio: f64,
}

impl Resimulation {
    pub fn min_margin(&self) -> f64 {
        self.margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn within_limits(&self, tol: f64) -> bool {
        self.accel_ratio <= 1.0 + tol && self.rate_ratio <= 1.0 + tol
    }

    pub fn extend(&mut self, other: &Resimulation, offset: f64) {
        let skip = usize::from(!self.times.is_empty() && !other.times.is_empty());
        for k in skip..other.times.len() {
            self.times.push(other.times[k] + offset);
            self.zmp.push(other.zmp[k]);
            self.margin.push(other.margin[k]);
        }
        self.accel_ratio = self.accel_ratio.max(other.accel_ratio);
        self.rate_ratio = self.rate_ratio.max(other.rate_ratio);
    }
}

/// Classical Runge-Kutta step for a time-varying system on plain arrays.
pub(crate) fn rk4<const N: usize, F>(f: F, t: f64, x: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut o = *a;
        for i in 0..N {
            o[i] += s * b[i];
        }
        o
    };
    let k1 = f(t, x);
    let k2 = f(t + h / 2.0, &add(x, &k1, h / 2.0));
    let k3 = f(t + h / 2.0, &add(x, &k2, h / 2.0));
    let k4 = f(t + h, &add(x, &k3, h));
    let mut o = *x;
    for i in 0..N {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Linear interpolation of node inputs at `t` inside interval `k`.
pub(crate) fn lerp_input(times: &[f64], inputs: &[Vec<f64>], k: usize, t: f64) -> Vec<f64> {
    let h = times[k + 1] - times[k];
    let s = if h > 0.0 { ((t - times[k]) / h).clamp(0.0, 1.0) } else { 0.0 };
    inputs[k].iter().zip(&inputs[k + 1]).map(|(a, b)| a + s * (b - a)).collect()
}

/// Piecewise-linear resampling of node data onto new times.
pub(crate) fn resample(times: &[f64], rows: &[Vec<f64>], at: &[f64]) -> Vec<Vec<f64>> {
    at.iter()
        .map(|&t| {
            if times.len() == 1 || t <= times[0] {
                return rows[0].clone();
            }
            let k = match times.iter().position(|&s| s >= t) {
                Some(k) => k.max(1) - 1,
                None => return rows[rows.len() - 1].clone(),
            };
            lerp_input(times, rows, k, t)
        })
        .collect()
}
