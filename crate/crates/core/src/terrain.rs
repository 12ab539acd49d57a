//! Known terrain surfaces and the base attitude they induce.
//!
//! The base frame keeps its z axis on the terrain normal. Its y axis is the
//! heading direction: the terrain tangent whose horizontal projection points
//! along `(-sin ψ̄, cos ψ̄)`. The x axis completes a right-handed frame, so on
//! flat ground with `ψ̄ = 0` the base frame coincides with the inertial frame.

use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("query ({x:.3}, {y:.3}) lies outside the terrain bounds")]
    OutOfBounds { x: f64, y: f64 },
    #[error("terrain normal is degenerate at ({x:.3}, {y:.3})")]
    DegenerateNormal { x: f64, y: f64 },
    #[error("invalid height grid: {0}")]
    InvalidGrid(String),
}

/// Axis-aligned planning region in the inertial x-y plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds2 {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Bounds2 {
    pub fn new(min_x: f64, max_x: f64, min_y: f64, max_y: f64) -> Self {
        Self {
            min_x,
            max_x,
            min_y,
            max_y,
        }
    }

    pub fn square(half: f64) -> Self {
        Self::new(-half, half, -half, half)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Closed-form height functions.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticSurface {
    Flat { height: f64 },
    /// `h = h0 + sx·x + sy·y`
    Plane { slope_x: f64, slope_y: f64, offset: f64 },
    /// `h = A·cos(√(x²+y²)/s)`
    SinusoidalMountain { amplitude: f64, period_scale: f64 },
}

impl AnalyticSurface {
    fn height(&self, x: f64, y: f64) -> f64 {
        match *self {
            AnalyticSurface::Flat { height } => height,
            AnalyticSurface::Plane {
                slope_x,
                slope_y,
                offset,
            } => offset + slope_x * x + slope_y * y,
            AnalyticSurface::SinusoidalMountain {
                amplitude,
                period_scale,
            } => amplitude * ((x * x + y * y).sqrt() / period_scale).cos(),
        }
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            AnalyticSurface::Flat { .. } => (0.0, 0.0),
            AnalyticSurface::Plane {
                slope_x, slope_y, ..
            } => (slope_x, slope_y),
            AnalyticSurface::SinusoidalMountain {
                amplitude,
                period_scale,
            } => {
                let r = (x * x + y * y).sqrt();
                if r < 1e-12 {
                    return (0.0, 0.0);
                }
                let k = -amplitude / period_scale * (r / period_scale).sin() / r;
                (k * x, k * y)
            }
        }
    }
}

/// Regular height grid, bilinear between samples.
///
/// Row `j`, column `i` holds the height at `origin + (i·cell, j·cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    heights: Vec<f64>,
    cols: usize,
    rows: usize,
    cell_size: f64,
    origin: Vector2<f64>,
}

impl HeightGrid {
    pub fn new(
        heights: Vec<f64>,
        cols: usize,
        rows: usize,
        cell_size: f64,
        origin: Vector2<f64>,
    ) -> Result<Self, TerrainError> {
        if cols < 2 || rows < 2 {
            return Err(TerrainError::InvalidGrid(
                "need at least 2x2 samples".into(),
            ));
        }
        if heights.len() != cols * rows {
            return Err(TerrainError::InvalidGrid(format!(
                "expected {} samples, got {}",
                cols * rows,
                heights.len()
            )));
        }
        if !(cell_size > 0.0) {
            return Err(TerrainError::InvalidGrid("cell size must be positive".into()));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(TerrainError::InvalidGrid("non-finite height sample".into()));
        }
        Ok(Self {
            heights,
            cols,
            rows,
            cell_size,
            origin,
        })
    }

    /// Samples a height function onto a grid covering `bounds`.
    pub fn sample<F: Fn(f64, f64) -> f64>(bounds: Bounds2, cell_size: f64, f: F) -> Self {
        let cols = ((bounds.max_x - bounds.min_x) / cell_size).round() as usize + 1;
        let rows = ((bounds.max_y - bounds.min_y) / cell_size).round() as usize + 1;
        let mut heights = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                heights.push(f(
                    bounds.min_x + i as f64 * cell_size,
                    bounds.min_y + j as f64 * cell_size,
                ));
            }
        }
        Self {
            heights,
            cols,
            rows,
            cell_size,
            origin: Vector2::new(bounds.min_x, bounds.min_y),
        }
    }

    /// Reads a header-less CSV of heights (one grid row per line).
    pub fn from_csv(path: &Path, cell_size: f64, origin: Vector2<f64>) -> Result<Self, TerrainError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| TerrainError::InvalidGrid(e.to_string()))?;
        let mut heights = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| TerrainError::InvalidGrid(e.to_string()))?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TerrainError::InvalidGrid(format!("row {}: {e}", rows + 1)))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(TerrainError::InvalidGrid(format!(
                        "row {} has {} columns, expected {c}",
                        rows + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            heights.extend(row);
            rows += 1;
        }
        Self::new(heights, cols.unwrap_or(0), rows, cell_size, origin)
    }

    pub fn bounds(&self) -> Bounds2 {
        Bounds2::new(
            self.origin.x,
            self.origin.x + (self.cols - 1) as f64 * self.cell_size,
            self.origin.y,
            self.origin.y + (self.rows - 1) as f64 * self.cell_size,
        )
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.cols + i]
    }

    fn interpolate(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin.x) / self.cell_size).clamp(0.0, (self.cols - 1) as f64);
        let fy = ((y - self.origin.y) / self.cell_size).clamp(0.0, (self.rows - 1) as f64);
        let i = (fx.floor() as usize).min(self.cols - 2);
        let j = (fy.floor() as usize).min(self.rows - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let h00 = self.at(i, j);
        let h10 = self.at(i + 1, j);
        let h01 = self.at(i, j + 1);
        let h11 = self.at(i + 1, j + 1);
        (1.0 - ty) * ((1.0 - tx) * h00 + tx * h10) + ty * ((1.0 - tx) * h01 + tx * h11)
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let b = self.bounds();
        let c = self.cell_size;
        let diff = |lo: f64, hi: f64, min: f64, max: f64, eval: &dyn Fn(f64) -> f64| {
            let a = (lo).max(min);
            let z = (hi).min(max);
            (eval(z) - eval(a)) / (z - a)
        };
        let gx = diff(x - c, x + c, b.min_x, b.max_x, &|s| self.interpolate(s, y));
        let gy = diff(y - c, y + c, b.min_y, b.max_y, &|s| self.interpolate(x, s));
        (gx, gy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerrainKind {
    Analytic(AnalyticSurface),
    Grid(HeightGrid),
}

/// Height field `z = h(x, y)` over a declared planning region.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainModel {
    pub kind: TerrainKind,
    pub bounds: Bounds2,
    pub gravity: f64,
}

impl TerrainModel {
    pub fn flat(bounds: Bounds2) -> Self {
        Self::analytic(AnalyticSurface::Flat { height: 0.0 }, bounds)
    }

    /// Plane rising along inertial x with the given slope angle.
    pub fn inclined_x(angle: f64, bounds: Bounds2) -> Self {
        Self::analytic(
            AnalyticSurface::Plane {
                slope_x: angle.tan(),
                slope_y: 0.0,
                offset: 0.0,
            },
            bounds,
        )
    }

    pub fn sinusoidal_mountain(amplitude: f64, period_scale: f64, bounds: Bounds2) -> Self {
        Self::analytic(
            AnalyticSurface::SinusoidalMountain {
                amplitude,
                period_scale,
            },
            bounds,
        )
    }

    pub fn analytic(surface: AnalyticSurface, bounds: Bounds2) -> Self {
        Self {
            kind: TerrainKind::Analytic(surface),
            bounds,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn grid(grid: HeightGrid) -> Self {
        let bounds = grid.bounds();
        Self {
            kind: TerrainKind::Grid(grid),
            bounds,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn with_gravity(mut self, g: f64) -> Self {
        self.gravity = g;
        self
    }

    fn check(&self, x: f64, y: f64) -> Result<(), TerrainError> {
        if x.is_finite() && y.is_finite() && self.bounds.contains(x, y) {
            Ok(())
        } else {
            Err(TerrainError::OutOfBounds { x, y })
        }
    }

    pub fn height(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        self.check(x, y)?;
        Ok(match &self.kind {
            TerrainKind::Analytic(s) => s.height(x, y),
            TerrainKind::Grid(g) => g.interpolate(x, y),
        })
    }

    /// Terrain slopes `(∂h/∂x, ∂h/∂y)`.
    pub fn gradient(&self, x: f64, y: f64) -> Result<(f64, f64), TerrainError> {
        self.check(x, y)?;
        Ok(match &self.kind {
            TerrainKind::Analytic(s) => s.gradient(x, y),
            TerrainKind::Grid(g) => g.gradient(x, y),
        })
    }

    /// Inclination of the terrain normal from vertical, in radians.
    pub fn slope_angle(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        let (gx, gy) = self.gradient(x, y)?;
        Ok((gx * gx + gy * gy).sqrt().atan())
    }

    pub fn base_attitude(&self, x: f64, y: f64, heading: f64) -> Result<BaseAttitude, TerrainError> {
        let (gx, gy) = self.gradient(x, y)?;
        let z = self.height(x, y)?;
        let hx = Vector3::new(1.0, 0.0, gx);
        let hy = Vector3::new(0.0, 1.0, gy);
        let normal = hx.cross(&hy);
        let norm = normal.norm();
        if !(norm >= 1e-12) || !norm.is_finite() {
            return Err(TerrainError::DegenerateNormal { x, y });
        }
        let r3 = normal / norm;
        let (s, c) = heading.sin_cos();
        let r2 = (hx * (-s) + hy * c).normalize();
        let r1 = r2.cross(&r3).normalize();
        Ok(BaseAttitude {
            rotation: Matrix3::from_columns(&[r1, r2, r3]),
            heading,
            position: Vector3::new(x, y, z),
        })
    }
}

/// Orientation and position of the base frame `F0` in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseAttitude {
    /// Columns are the base axes expressed in the inertial frame.
    pub rotation: Matrix3<f64>,
    pub heading: f64,
    pub position: Vector3<f64>,
}

impl BaseAttitude {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            heading: 0.0,
            position: Vector3::zeros(),
        }
    }

    /// Fixed attitude from a pitch and a roll angle at zero heading.
    ///
    /// Positive `pitch` lowers the front of the base (gravity gains a −y
    /// component in `F0`, the quasi-static ZMP moves forward). Positive `roll`
    /// lowers the +x side (gravity gains a −x component, the ZMP moves
    /// toward +x).
    pub fn from_pitch_roll(pitch: f64, roll: f64) -> Self {
        let rotation = rot_x(-pitch) * rot_y(roll);
        Self {
            rotation,
            heading: 0.0,
            position: Vector3::zeros(),
        }
    }

    pub fn r1(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn r2(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn r3(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Vertical components of the base axes: `(r13, r23, r33)`.
    pub fn vertical_components(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Base attitude rotated about its own z axis by `angle`.
    pub fn yawed(&self, angle: f64) -> Self {
        Self {
            rotation: self.rotation * rot_z(angle),
            heading: self.heading + angle,
            position: self.position,
        }
    }

    /// z-x-y Euler angles `(yaw, pitch, roll)` with `R = Rz(yaw)·Rx(pitch)·Ry(roll)`.
    ///
    /// The yaw equals the heading `ψ̄` for terrain-following attitudes.
    pub fn euler_zxy(&self) -> Vector3<f64> {
        euler_zxy(&self.rotation)
    }
}

/// Gravity expressed in the base frame, `Rᵀ·(0, 0, g)`.
///
/// This is the upward support direction scaled by `g`; on slopes its
/// horizontal part points toward the uphill side of the base.
pub fn gravity_in_base(att: &BaseAttitude, g: f64) -> Vector3<f64> {
    att.rotation.transpose() * Vector3::new(0.0, 0.0, g)
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_zxy(r: &Matrix3<f64>) -> Vector3<f64> {
    let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
    let pitch = r[(2, 1)].clamp(-1.0, 1.0).asin();
    let roll = (-r[(2, 0)]).atan2(r[(2, 2)]);
    Vector3::new(yaw, pitch, roll)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
