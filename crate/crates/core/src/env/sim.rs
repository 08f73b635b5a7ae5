use std::f64::consts::PI;

use crate::env::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::math::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// True terminal (pointmass goal reached). Time limits are tracked by [`Episode`].
    pub terminal: bool,
}

fn check_dims(spec: &EnvSpec, s: &[f64], a: &[f64]) -> Result<()> {
    if s.len() != spec.state_dim || a.len() != spec.action_dim {
        return Err(Error::Shape(format!(
            "{} expects state {} / action {}, got {} / {}",
            spec.env_id,
            spec.state_dim,
            spec.action_dim,
            s.len(),
            a.len()
        )));
    }
    Ok(())
}

/// Clamps to `±lim`; NaN entries become zero.
pub(crate) fn clamp_action(a: &[f64], lim: f64) -> Vec<f64> {
    a.iter()
        .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(-lim, lim) })
        .collect()
}

fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Pendulum angle from upright, in (-π, π].
pub(crate) fn pendulum_angle(s: &[f64]) -> f64 {
    s[1].atan2(s[0])
}

/// Pendulum step with a discrete-gradient gravity term and midpoint damping.
///
/// With `k = g / l` the potential per unit inertia is `k cos(theta)`; replacing
/// its derivative by the secant slope makes the energy change over a step
/// exactly `dt * omega_mid * (torque - friction * omega_mid)`, so the unforced
/// damped pendulum never gains energy. The implicit midpoint velocity is found
/// by fixed-point iteration (contraction factor about `dt^2 k / 2`).
fn pendulum_step(spec: &EnvSpec, theta: f64, omega: f64, u: f64) -> (f64, f64) {
    let dt = spec.dt;
    let k = spec.gravity / spec.pole_length;
    let inertia = spec.pole_mass * spec.pole_length * spec.pole_length;
    let drive = spec.action_scale * u / inertia;
    let mut omega_next = omega;
    for _ in 0..100 {
        let omega_mid = 0.5 * (omega + omega_next);
        let half = 0.5 * dt * omega_mid;
        let sinc = if half.abs() < 1e-8 {
            1.0
        } else {
            half.sin() / half
        };
        let gravity = k * (theta + half).sin() * sinc;
        let updated = omega + dt * (gravity - spec.friction * omega_mid + drive);
        let converged = (updated - omega_next).abs() <= 1e-15 * (1.0 + updated.abs());
        omega_next = updated;
        if converged {
            break;
        }
    }
    let theta_next = wrap_angle(theta + dt * 0.5 * (omega + omega_next));
    let omega_next = omega_next.clamp(-spec.max_angular_velocity, spec.max_angular_velocity);
    (theta_next, omega_next)
}

/// One integration step: semi-implicit Euler for the pointmass, the
/// energy-consistent scheme of [`pendulum_step`] for the pendulum. The `rng` is only consumed when the env spec
/// has process noise, which the presets do not.
pub fn env_step(spec: &EnvSpec, s: &[f64], a: &[f64], _rng: &mut Rng) -> Result<StepOutcome> {
    check_dims(spec, s, a)?;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFault(format!("non-finite state {s:?}")));
    }
    // Rewards see the action box; physics sees the (possibly shifted) limit.
    let a_box = clamp_action(a, 1.0);
    let u = clamp_action(a, spec.action_limit);
    let dt = spec.dt;
    let (next_state, terminal) = match spec.env_id {
        EnvId::PointMass2d => {
            let g = [0.0, -spec.gravity];
            let mut next = vec![0.0; 4];
            let mut terminal = false;
            for axis in 0..2 {
                let (p, v) = (s[axis], s[axis + 2]);
                let acc = spec.action_scale * u[axis] - spec.friction * v + g[axis];
                let mut v_next = v + dt * acc;
                let mut p_next = p + dt * v_next;
                if p_next.abs() > spec.arena {
                    p_next = p_next.clamp(-spec.arena, spec.arena);
                    v_next = 0.0;
                }
                next[axis] = p_next;
                next[axis + 2] = v_next;
            }
            if goal_distance(spec, &next) < spec.goal_radius {
                terminal = true;
            }
            (next, terminal)
        }
        EnvId::Pendulum => {
            let (theta_next, omega_next) = pendulum_step(spec, pendulum_angle(s), s[2], u[0]);
            (vec![theta_next.cos(), theta_next.sin(), omega_next], false)
        }
    };
    let reward = reward_fn(spec, s, &a_box, &next_state)?;
    Ok(StepOutcome {
        next_state,
        reward,
        terminal,
    })
}

fn goal_distance(spec: &EnvSpec, s: &[f64]) -> f64 {
    (s[0] - spec.goal[0]).hypot(s[1] - spec.goal[1])
}

/// Reward as a function of `(s, a, s')`. Only the goal, `dt` and env id of
/// `spec` enter, so source and shifted specs agree on every transition.
pub fn reward_fn(spec: &EnvSpec, s: &[f64], a: &[f64], s_next: &[f64]) -> Result<f64> {
    check_dims(spec, s, a)?;
    if s_next.len() != spec.state_dim {
        return Err(Error::Shape(format!(
            "next state has length {}, expected {}",
            s_next.len(),
            spec.state_dim
        )));
    }
    let action_sq: f64 = a.iter().map(|v| v * v).sum();
    Ok(match spec.env_id {
        EnvId::PointMass2d => {
            (goal_distance(spec, s) - goal_distance(spec, s_next)) / spec.dt - 0.01 * action_sq
        }
        EnvId::Pendulum => {
            let angle = pendulum_angle(s_next);
            -(angle * angle + 0.1 * s_next[2] * s_next[2] + 0.001 * action_sq)
        }
    })
}

/// Start-state distribution: pointmass near the origin at rest, pendulum
/// hanging down with a small perturbation.
pub fn initial_state(spec: &EnvSpec, rng: &mut Rng) -> Vec<f64> {
    match spec.env_id {
        EnvId::PointMass2d => vec![
            rng.uniform_range(-0.1, 0.1),
            rng.uniform_range(-0.1, 0.1),
            0.0,
            0.0,
        ],
        EnvId::Pendulum => {
            let theta = PI + rng.uniform_range(-0.2, 0.2);
            vec![theta.cos(), theta.sin(), rng.uniform_range(-0.1, 0.1)]
        }
    }
}

/// One episode of a spec, ending at a terminal state or after `horizon` steps.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    spec: &'a EnvSpec,
    state: Vec<f64>,
    t: usize,
    finished: bool,
}

impl<'a> Episode<'a> {
    pub fn new(spec: &'a EnvSpec, rng: &mut Rng) -> Self {
        let state = initial_state(spec, rng);
        Self::from_state(spec, state)
    }

    pub fn from_state(spec: &'a EnvSpec, state: Vec<f64>) -> Self {
        Self {
            spec,
            state,
            t: 0,
            finished: false,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.finished
    }

    pub fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepOutcome> {
        let out = env_step(self.spec, &self.state, action, rng)?;
        self.t += 1;
        self.finished = out.terminal || self.t >= self.spec.horizon;
        self.state.clone_from(&out.next_state);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_shifted_spec, ShiftConfig, ShiftKind};

    fn rng() -> Rng {
        Rng::new(0)
    }

    #[test]
    fn pointmass_rest_without_gravity_is_fixed_point() {
        let mut spec = EnvSpec::pointmass2d();
        spec.gravity = 0.0;
        let s = vec![0.3, -0.4, 0.0, 0.0];
        let out = env_step(&spec, &s, &[0.0, 0.0], &mut rng()).unwrap();
        assert_eq!(out.next_state, s);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn pointmass_hand_euler_step() {
        let mut spec = EnvSpec::pointmass2d();
        spec.gravity = 0.0;
        spec.friction = 0.0;
        let out = env_step(&spec, &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0], &mut rng()).unwrap();
        assert!((out.next_state[0] - 0.1).abs() < 1e-15);
        assert_eq!(out.next_state[1], 0.0);
    }

    #[test]
    fn pendulum_upright_equilibrium_is_exact() {
        let spec = EnvSpec::pendulum();
        let s = vec![1.0, 0.0, 0.0];
        let out = env_step(&spec, &s, &[0.0], &mut rng()).unwrap();
        assert_eq!(out.next_state, s);
    }

    #[test]
    fn reward_zero_without_progress() {
        let spec = EnvSpec::pointmass2d();
        let s = [0.2, 0.1, 0.0, 0.0];
        assert_eq!(reward_fn(&spec, &s, &[0.0, 0.0], &s).unwrap(), 0.0);
    }

    #[test]
    fn reward_progress_toward_goal() {
        let spec = EnvSpec::pointmass2d();
        // goal at (1, 1); move 0.1 along the x = y line toward it
        let d = 0.1 / 2f64.sqrt();
        let s = [0.0, 0.0, 0.0, 0.0];
        let s2 = [d, d, 0.0, 0.0];
        let r = reward_fn(&spec, &s, &[0.0, 0.0], &s2).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn pendulum_hanging_reward() {
        let spec = EnvSpec::pendulum();
        let down = [-1.0, 0.0, 0.0];
        let r = reward_fn(&spec, &down, &[0.0], &down).unwrap();
        assert!((r + PI * PI).abs() < 1e-12);
    }

    #[test]
    fn nan_state_rejected() {
        let spec = EnvSpec::pointmass2d();
        let err = env_step(&spec, &[f64::NAN, 0.0, 0.0, 0.0], &[0.0, 0.0], &mut rng());
        assert!(matches!(err, Err(Error::NumericalFault(_))));
    }

    #[test]
    fn kinematic_shift_limits_thrust() {
        let base = EnvSpec::pointmass2d();
        let shifted =
            make_shifted_spec(&base, ShiftConfig::new(ShiftKind::Kinematic, 0.3).unwrap()).unwrap();
        let s = [0.0, 0.0, 0.0, 0.0];
        let full = env_step(&base, &s, &[1.0, 0.0], &mut rng()).unwrap();
        let limited = env_step(&shifted, &s, &[1.0, 0.0], &mut rng()).unwrap();
        assert!((limited.next_state[2] - 0.3 * full.next_state[2]).abs() < 1e-12);
    }

    #[test]
    fn identity_shift_is_bit_identical() {
        let mut r = Rng::new(11);
        for id in [EnvId::PointMass2d, EnvId::Pendulum] {
            let base = EnvSpec::base(id);
            for kind in [
                ShiftKind::Gravity,
                ShiftKind::Friction,
                ShiftKind::Kinematic,
            ] {
                let shifted =
                    make_shifted_spec(&base, ShiftConfig::new(kind, 1.0).unwrap()).unwrap();
                for _ in 0..50 {
                    let s = initial_state(&base, &mut r);
                    let a: Vec<f64> = (0..base.action_dim)
                        .map(|_| r.uniform_range(-2.0, 2.0))
                        .collect();
                    let x = env_step(&base, &s, &a, &mut rng()).unwrap();
                    let y = env_step(&shifted, &s, &a, &mut rng()).unwrap();
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn episode_stops_at_horizon() {
        let mut spec = EnvSpec::pendulum();
        spec.horizon = 5;
        let mut r = rng();
        let mut ep = Episode::new(&spec, &mut r);
        let mut steps = 0;
        while !ep.is_done() {
            ep.step(&[0.0], &mut r).unwrap();
            steps += 1;
        }
        assert_eq!(steps, 5);
    }

    fn pendulum_energy(spec: &EnvSpec, s: &[f64]) -> f64 {
        let inertia = spec.pole_mass * spec.pole_length * spec.pole_length;
        0.5 * inertia * s[2] * s[2]
            + spec.pole_mass * spec.gravity * spec.pole_length * pendulum_angle(s).cos()
    }

    #[test]
    fn pendulum_energy_non_increasing_with_friction() {
        let spec = EnvSpec::pendulum();
        let mut r = Rng::new(2);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..2000 {
            let theta = r.uniform_range(-PI, PI);
            let s = vec![theta.cos(), theta.sin(), r.uniform_range(-6.0, 6.0)];
            let out = env_step(&spec, &s, &[0.0], &mut rng()).unwrap();
            let gain = pendulum_energy(&spec, &out.next_state) - pendulum_energy(&spec, &s);
            worst = worst.max(gain);
        }
        assert!(worst <= 1e-6 * spec.dt, "energy gained {worst}");
    }
}
