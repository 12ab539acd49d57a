//! Versioned scenario files.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use terrazmp::planner::PlannerParams;
use terrazmp::robot::{BaseLimits, Payload, RobotModel};
use terrazmp::terrain::{BaseAttitude, Bounds2, HeightGrid, TerrainModel};
use terrazmp::trajopt::{ManipulationOptions, SegmentOptions, SmoothingOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Problem with a scenario file, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "field `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Manipulate,
    Relocate,
    MonteCarlo,
    BaselineCompare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticName {
    Flat,
    InclinedX,
    SinusoidalMountain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerrainSpec {
    Analytic {
        name: AnalyticName,
        #[serde(default)]
        amplitude: f64,
        #[serde(default = "one")]
        period_scale: f64,
        #[serde(default)]
        slope_deg: f64,
        bounds: Bounds2,
    },
    Grid {
        path: PathBuf,
        cell_size: f64,
        origin: [f64; 2],
    },
}

fn one() -> f64 {
    1.0
}

/// Fixed base attitude of a manipulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeSpec {
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

impl AttitudeSpec {
    pub fn attitude(&self) -> BaseAttitude {
        BaseAttitude::from_pitch_roll(self.pitch_deg.to_radians(), self.roll_deg.to_radians())
    }
}

/// Reduced arm configuration: cabin yaw and horizontal reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub q1: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmMotion {
    pub start: ArmConfig,
    pub goal: ArmConfig,
}

/// Straight base motion along the base y axis during the arm motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseMotion {
    pub distance: f64,
    pub accel: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelocationSpec {
    pub start: [f64; 2],
    #[serde(default)]
    pub heading: f64,
    pub goal: [f64; 2],
    pub arm: ArmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub rolls_deg: Vec<f64>,
    pub samples: usize,
    /// Cabin yaw endpoints are drawn uniformly from this interval.
    pub yaw_range: [f64; 2],
    pub d: f64,
}

/// Overrides applied to the robot file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOverrides {
    #[serde(default)]
    pub joint_rate: Option<f64>,
    #[serde(default)]
    pub joint_accel: Option<f64>,
    #[serde(default)]
    pub base: Option<BaseLimits>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub manipulation: ManipulationOptions,
    pub segment: SegmentOptions,
    pub smoothing: SmoothingOptions,
    pub smooth: Option<bool>,
    pub planner: PlannerParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub mode: Mode,
    /// Robot description, relative to the scenario file.
    pub robot: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitOverrides>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terrain: Option<TerrainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attitude: Option<AttitudeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmMotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_motion: Option<BaseMotion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relocation: Option<RelocationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSpec,
}

fn missing(field: &str, mode: Mode) -> ConfigError {
    ConfigError::new(field, format!("required by mode {}", serde_json::to_string(&mode).unwrap_or_default()))
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be positive, got {v}")))
    }
}

fn finite(field: &str, vals: &[f64]) -> Result<(), ConfigError> {
    match vals.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(ConfigError::new(field, format!("must be finite, got {v}"))),
        None => Ok(()),
    }
}

impl Scenario {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = serde_json::from_str(s).map_err(|e| {
            let text = e.to_string();
            let field = text
                .split('`')
                .nth(1)
                .filter(|_| text.starts_with("missing field") || text.starts_with("unknown field"))
                .unwrap_or("")
                .to_string();
            ConfigError::new(field, text)
        })?;
        sc.check()?;
        Ok(sc)
    }

    /// Schema checks that need no file access.
    pub fn check(&self) -> Result<(), ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version),
            ));
        }
        if self.robot.as_os_str().is_empty() {
            return Err(ConfigError::new("robot", "empty path"));
        }
        if let Some(l) = &self.limits {
            if let Some(v) = l.joint_rate {
                positive("limits.joint_rate", v)?;
            }
            if let Some(v) = l.joint_accel {
                positive("limits.joint_accel", v)?;
            }
        }
        match &self.terrain {
            Some(TerrainSpec::Analytic { bounds, period_scale, .. }) => {
                if !(bounds.min_x < bounds.max_x && bounds.min_y < bounds.max_y) {
                    return Err(ConfigError::new("terrain.bounds", "empty region"));
                }
                positive("terrain.period_scale", *period_scale)?;
            }
            Some(TerrainSpec::Grid { cell_size, .. }) => positive("terrain.cell_size", *cell_size)?,
            None => {}
        }
        match self.mode {
            Mode::Manipulate | Mode::BaselineCompare => {
                self.attitude.ok_or_else(|| missing("attitude", self.mode))?;
                let arm = self.arm.ok_or_else(|| missing("arm", self.mode))?;
                finite("arm", &[arm.start.q1, arm.start.d, arm.goal.q1, arm.goal.d])?;
                if let Some(b) = &self.base_motion {
                    finite("base_motion.distance", &[b.distance])?;
                    positive("base_motion.accel", b.accel)?;
                    positive("base_motion.v_max", b.v_max)?;
                }
            }
            Mode::Relocate => {
                if self.terrain.is_none() {
                    return Err(missing("terrain", self.mode));
                }
                let r = self.relocation.ok_or_else(|| missing("relocation", self.mode))?;
                finite("relocation", &[r.start[0], r.start[1], r.heading, r.goal[0], r.goal[1], r.arm.q1, r.arm.d])?;
            }
            Mode::MonteCarlo => {
                self.attitude.ok_or_else(|| missing("attitude", self.mode))?;
                let mc = self.monte_carlo.as_ref().ok_or_else(|| missing("monte_carlo", self.mode))?;
                if mc.rolls_deg.is_empty() {
                    return Err(ConfigError::new("monte_carlo.rolls_deg", "no attitudes"));
                }
                finite("monte_carlo.rolls_deg", &mc.rolls_deg)?;
                if mc.samples == 0 {
                    return Err(ConfigError::new("monte_carlo.samples", "must be at least 1"));
                }
                if !(mc.yaw_range[0] < mc.yaw_range[1]) {
                    return Err(ConfigError::new("monte_carlo.yaw_range", "lower end must be below the upper end"));
                }
                positive("monte_carlo.d", mc.d)?;
            }
        }
        Ok(())
    }
}

/// A scenario with its files read and its models built.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub scenario: Scenario,
    pub dir: PathBuf,
    pub robot: RobotModel,
    pub terrain: Option<TerrainModel>,
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

impl Loaded {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
        let scenario = Scenario::from_json_str(&text)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(scenario, dir)
    }

    /// Builds the models; relative paths are taken from `dir`.
    pub fn new(scenario: Scenario, dir: PathBuf) -> Result<Self, ConfigError> {
        scenario.check()?;
        let robot_path = resolve(&dir, &scenario.robot);
        if !robot_path.is_file() {
            return Err(ConfigError::new("robot", format!("no such file {}", robot_path.display())));
        }
        let mut robot = RobotModel::from_file(&robot_path).map_err(|e| ConfigError::new("robot", e.to_string()))?;
        if scenario.payload.is_some() {
            robot = robot.with_payload(scenario.payload);
        }
        if let Some(l) = &scenario.limits {
            for j in &mut robot.joint_limits {
                if let Some(v) = l.joint_rate {
                    j.rate = v;
                }
                if let Some(v) = l.joint_accel {
                    j.accel = v;
                }
            }
            if let Some(b) = l.base {
                robot.base_limits = b;
            }
            robot.validate().map_err(|e| ConfigError::new("limits", e.to_string()))?;
        }
        if matches!(scenario.mode, Mode::Manipulate | Mode::BaselineCompare | Mode::MonteCarlo) && robot.reduced.is_none() {
            return Err(ConfigError::new("robot", "robot file has no reduced-arm mapping"));
        }
        let terrain = match &scenario.terrain {
            None => None,
            Some(TerrainSpec::Analytic {
                name,
                amplitude,
                period_scale,
                slope_deg,
                bounds,
            }) => Some(match name {
                AnalyticName::Flat => TerrainModel::flat(*bounds),
                AnalyticName::InclinedX => TerrainModel::inclined_x(slope_deg.to_radians(), *bounds),
                AnalyticName::SinusoidalMountain => TerrainModel::sinusoidal_mountain(*amplitude, *period_scale, *bounds),
            }),
            Some(TerrainSpec::Grid { path, cell_size, origin }) => {
                let p = resolve(&dir, path);
                if !p.is_file() {
                    return Err(ConfigError::new("terrain.path", format!("no such file {}", p.display())));
                }
                let g = HeightGrid::from_csv(&p, *cell_size, Vector2::new(origin[0], origin[1]))
                    .map_err(|e| ConfigError::new("terrain.path", e.to_string()))?;
                Some(TerrainModel::grid(g))
            }
        };
        if let (Some(t), Some(r)) = (&terrain, &scenario.relocation) {
            for (field, p) in [("relocation.start", r.start), ("relocation.goal", r.goal)] {
                if !t.bounds.contains(p[0], p[1]) {
                    return Err(ConfigError::new(field, "outside the terrain bounds"));
                }
            }
        }
        Ok(Self {
            scenario,
            dir,
            robot,
            terrain,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.scenario.output {
            Some(p) => resolve(&self.dir, p),
            None => self.dir.join("out").join(&self.scenario.name),
        }
    }
}

