use std::fmt;
use std::str::FromStr;

use crate::env::sim::{clamp_action, pendulum_angle};
use crate::env::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::math::Rng;

/// Anything that maps a state to an action in the `[-1, 1]` box.
pub trait Controller {
    fn act(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefPolicyKind {
    Random,
    Medium { noise_scale: f64 },
    Expert,
}

/// Noise for the medium behavior policy, tuned so it earns roughly half the
/// expert return on the source envs.
pub const MEDIUM_NOISE_SCALE: f64 = 1.0;

impl RefPolicyKind {
    pub fn medium() -> Self {
        RefPolicyKind::Medium {
            noise_scale: MEDIUM_NOISE_SCALE,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            RefPolicyKind::Random => "random",
            RefPolicyKind::Medium { .. } => "medium",
            RefPolicyKind::Expert => "expert",
        }
    }
}

impl fmt::Display for RefPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefPolicyKind::Medium { noise_scale } if *noise_scale != MEDIUM_NOISE_SCALE => {
                write!(f, "medium:{noise_scale}")
            }
            other => f.write_str(other.tag()),
        }
    }
}

impl FromStr for RefPolicyKind {
    type Err = Error;

    /// `random`, `expert`, `medium` or `medium:<noise_scale>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => match s {
                "random" => Ok(RefPolicyKind::Random),
                "medium" => Ok(RefPolicyKind::medium()),
                "expert" => Ok(RefPolicyKind::Expert),
                other => Err(Error::InvalidConfig(format!("unknown behavior `{other}`"))),
            },
            Some(("medium", scale)) => {
                let noise_scale: f64 = scale
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad noise scale `{scale}`")))?;
                if !(noise_scale >= 0.0) {
                    return Err(Error::InvalidConfig("noise scale must be >= 0".into()));
                }
                Ok(RefPolicyKind::Medium { noise_scale })
            }
            _ => Err(Error::InvalidConfig(format!("unknown behavior `{s}`"))),
        }
    }
}

// Pointmass PD gains.
const PM_KP: f64 = 2.0;
const PM_KD: f64 = 2.0;
// Pendulum: PD inside the capture cone, energy pumping outside.
const PEND_CAPTURE_COS: f64 = 0.9;
const PEND_KP: f64 = 8.0;
const PEND_KD: f64 = 3.0;
const PEND_KE: f64 = 1.0;

fn expert_action(spec: &EnvSpec, s: &[f64]) -> Vec<f64> {
    let lim = spec.action_limit;
    match spec.env_id {
        EnvId::PointMass2d => {
            let g = [0.0, -spec.gravity];
            let raw: Vec<f64> = (0..2)
                .map(|i| {
                    let force = PM_KP * (spec.goal[i] - s[i]) - PM_KD * s[i + 2] - g[i];
                    force / spec.action_scale
                })
                .collect();
            clamp_action(&raw, lim)
        }
        EnvId::Pendulum => {
            let theta = pendulum_angle(s);
            let omega = s[2];
            let inertia = spec.pole_mass * spec.pole_length * spec.pole_length;
            let torque = if theta.cos() > PEND_CAPTURE_COS {
                inertia
                    * (-(spec.gravity / spec.pole_length) * theta.sin()
                        - PEND_KP * theta
                        - PEND_KD * omega)
            } else {
                // Energy relative to resting upright, per unit inertia.
                let energy =
                    0.5 * omega * omega + (spec.gravity / spec.pole_length) * (theta.cos() - 1.0);
                let direction = if omega == 0.0 { 1.0 } else { omega.signum() };
                -PEND_KE * energy * direction * spec.action_scale
            };
            clamp_action(&[torque / spec.action_scale], lim)
        }
    }
}

/// Action of a reference behavior policy on `spec` at state `s`.
pub fn reference_policy(kind: RefPolicyKind, spec: &EnvSpec, s: &[f64], rng: &mut Rng) -> Vec<f64> {
    match kind {
        RefPolicyKind::Random => (0..spec.action_dim)
            .map(|_| rng.uniform_range(-1.0, 1.0))
            .collect(),
        RefPolicyKind::Expert => expert_action(spec, s),
        RefPolicyKind::Medium { noise_scale } => {
            let mut a = expert_action(spec, s);
            if noise_scale > 0.0 {
                for v in &mut a {
                    *v += noise_scale * rng.normal();
                }
            }
            clamp_action(&a, 1.0)
        }
    }
}

/// A reference policy bound to the env spec whose physics it controls.
#[derive(Debug, Clone)]
pub struct ReferencePolicy {
    pub kind: RefPolicyKind,
    pub spec: EnvSpec,
}

impl Controller for ReferencePolicy {
    fn act(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(reference_policy(self.kind, &self.spec, state, rng))
    }
}
