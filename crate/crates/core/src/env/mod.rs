//! Desk-scale continuous-control environments with configurable dynamics shifts.

mod controllers;
mod sim;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use controllers::{reference_policy, Controller, RefPolicyKind, ReferencePolicy};
pub use sim::{env_step, initial_state, reward_fn, Episode, StepOutcome};

/// Presets for multiplicative gravity/friction shifts.
pub const SCALE_LEVELS: [f64; 4] = [0.1, 0.5, 2.0, 5.0];
pub const KINEMATIC_MEDIUM: f64 = 0.6;
pub const KINEMATIC_HARD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    PointMass2d,
    Pendulum,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PointMass2d => "pointmass2d",
            EnvId::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass2d" | "pointmass" => Ok(EnvId::PointMass2d),
            "pendulum" => Ok(EnvId::Pendulum),
            other => Err(Error::InvalidConfig(format!("unknown env id `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftKind {
    Gravity,
    Friction,
    Kinematic,
}

impl ShiftKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::Gravity => "gravity",
            ShiftKind::Friction => "friction",
            ShiftKind::Kinematic => "kinematic",
        }
    }
}

/// A dynamics shift. `level` multiplies gravity or friction, or is the
/// admissible fraction of the action range for kinematic shifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftConfig {
    pub kind: ShiftKind,
    pub level: f64,
}

impl ShiftConfig {
    pub fn new(kind: ShiftKind, level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shift level must be positive, got {level}"
            )));
        }
        if kind == ShiftKind::Kinematic && level > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "kinematic shift level is a range fraction in (0, 1], got {level}"
            )));
        }
        Ok(Self { kind, level })
    }

    /// Text form used in dataset headers and CLI flags, e.g. `gravity:0.5`.
    pub fn level_text(&self) -> String {
        format!("{}", self.level)
    }
}

impl fmt::Display for ShiftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.level)
    }
}

impl FromStr for ShiftConfig {
    type Err = Error;

    /// Accepts `gravity:0.5`, `friction:5.0`, `kinematic:medium`,
    /// `kinematic:hard` or `kinematic:0.6`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, level) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidConfig(format!("shift `{s}` is not kind:level")))?;
        let kind = match kind {
            "gravity" => ShiftKind::Gravity,
            "friction" => ShiftKind::Friction,
            "kinematic" => ShiftKind::Kinematic,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown shift kind `{other}`"
                )))
            }
        };
        let level = match (kind, level) {
            (ShiftKind::Kinematic, "medium") => KINEMATIC_MEDIUM,
            (ShiftKind::Kinematic, "hard") => KINEMATIC_HARD,
            (_, text) => text
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad shift level `{text}`")))?,
        };
        ShiftConfig::new(kind, level)
    }
}

/// Parses an optional shift where `none` means the unshifted source env.
pub fn parse_shift(s: &str) -> Result<Option<ShiftConfig>> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Immutable description of one environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Integration step in seconds.
    pub dt: f64,
    pub horizon: usize,
    /// Pointmass: magnitude of the (0, -g) acceleration. Pendulum: g.
    pub gravity: f64,
    /// Linear velocity damping (pointmass) or angular damping (pendulum).
    pub friction: f64,
    /// Force (pointmass) or torque (pendulum) per unit action.
    pub action_scale: f64,
    /// Admissible action magnitude per dimension; actions clamp to ±limit.
    pub action_limit: f64,
    pub pole_length: f64,
    pub pole_mass: f64,
    pub max_angular_velocity: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Half-width of the square pointmass arena.
    pub arena: f64,
    pub shift: Option<ShiftConfig>,
}

impl EnvSpec {
    pub fn pointmass2d() -> Self {
        Self {
            env_id: EnvId::PointMass2d,
            state_dim: 4,
            action_dim: 2,
            dt: 0.1,
            horizon: 200,
            gravity: 0.18,
            friction: 0.5,
            action_scale: 1.0,
            action_limit: 1.0,
            pole_length: 0.0,
            pole_mass: 0.0,
            max_angular_velocity: 0.0,
            goal: [1.0, 1.0],
            goal_radius: 0.1,
            arena: 2.0,
            shift: None,
        }
    }

    pub fn pendulum() -> Self {
        Self {
            env_id: EnvId::Pendulum,
            state_dim: 3,
            action_dim: 1,
            dt: 0.05,
            horizon: 200,
            gravity: 9.81,
            friction: 0.1,
            action_scale: 2.0,
            action_limit: 1.0,
            pole_length: 1.0,
            pole_mass: 1.0,
            max_angular_velocity: 8.0,
            goal: [0.0, 0.0],
            goal_radius: 0.0,
            arena: 0.0,
            shift: None,
        }
    }

    pub fn base(env_id: EnvId) -> Self {
        match env_id {
            EnvId::PointMass2d => Self::pointmass2d(),
            EnvId::Pendulum => Self::pendulum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.env_id {
            EnvId::PointMass2d => (4, 2),
            EnvId::Pendulum => (3, 1),
        };
        if (self.state_dim, self.action_dim) != expected {
            return Err(Error::InvalidConfig(format!(
                "{} needs state/action dims {:?}",
                self.env_id, expected
            )));
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(
                "horizon >= 1 and dt > 0 required".into(),
            ));
        }
        if !(self.action_limit > 0.0 && self.action_limit <= 1.0) {
            return Err(Error::InvalidConfig(
                "action limit must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn shift_kind_text(&self) -> &'static str {
        self.shift.map_or("none", |s| s.kind.as_str())
    }

    pub fn shift_level_text(&self) -> String {
        self.shift
            .map_or_else(|| "1".to_string(), |s| s.level_text())
    }
}

/// Copy of `base` with the shift applied; `base` itself is untouched.
pub fn make_shifted_spec(base: &EnvSpec, shift: ShiftConfig) -> Result<EnvSpec> {
    let shift = ShiftConfig::new(shift.kind, shift.level)?;
    let mut spec = base.clone();
    match shift.kind {
        ShiftKind::Gravity => spec.gravity *= shift.level,
        ShiftKind::Friction => spec.friction *= shift.level,
        ShiftKind::Kinematic => spec.action_limit *= shift.level,
    }
    spec.shift = Some(shift);
    Ok(spec)
}
