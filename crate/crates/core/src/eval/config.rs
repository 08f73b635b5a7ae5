use std::fs;
use std::path::Path;

use crate::dara::DaraConfig;
use crate::data::{DESK_SOURCE_TRANSITIONS, DESK_TARGET_TRANSITIONS};
use crate::dynamics::{DynMode, DynTrainConfig, DEFAULT_PENALTY, ENSEMBLE_SIZE};
use crate::env::{make_shifted_spec, parse_shift, EnvId, EnvSpec, RefPolicyKind, ShiftConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::ANCHOR_EPISODES;
use crate::policy::{
    PolicyTrainConfig, WeightMode, DEFAULT_ALPHA, DEFAULT_BC_WEIGHT, DEFAULT_GAMMA, DEFAULT_TAU,
};

/// Everything needed to replay one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub shift: Option<ShiftConfig>,
    pub seeds: Vec<u64>,
    pub src_size: usize,
    pub trg_size: usize,
    pub behavior: RefPolicyKind,
    pub dynamics: DynTrainConfig,
    pub dyn_hidden: usize,
    pub ensemble_size: usize,
    pub beta: f64,
    pub dara: DaraConfig,
    pub disable_dara: bool,
    pub policy: PolicyTrainConfig,
    pub policy_hidden: usize,
    pub alpha: f64,
    pub bc_weight: f64,
    pub gamma: f64,
    pub tau: f64,
    pub weight_mode: WeightMode,
    pub eval_episodes: usize,
    /// Intermediate evaluation stride in policy steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub mse_horizon: usize,
    pub mse_starts: usize,
    pub mse_open_loop: bool,
    /// Also train the other dynamics modes and report their rollout MSE.
    pub compare_dynamics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvId::PointMass2d,
            shift: Some(ShiftConfig {
                kind: crate::env::ShiftKind::Gravity,
                level: 5.0,
            }),
            seeds: vec![0],
            src_size: DESK_SOURCE_TRANSITIONS,
            trg_size: DESK_TARGET_TRANSITIONS,
            behavior: RefPolicyKind::medium(),
            dynamics: DynTrainConfig::default(),
            dyn_hidden: 256,
            ensemble_size: ENSEMBLE_SIZE,
            beta: DEFAULT_PENALTY,
            dara: DaraConfig::default(),
            disable_dara: false,
            policy: PolicyTrainConfig::default(),
            policy_hidden: 256,
            alpha: DEFAULT_ALPHA,
            bc_weight: DEFAULT_BC_WEIGHT,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            weight_mode: WeightMode::TargetQ,
            eval_episodes: ANCHOR_EPISODES,
            eval_every: 0,
            mse_horizon: 50,
            mse_starts: 10,
            mse_open_loop: false,
            compare_dynamics: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad boolean {v:?} for {key}"))),
    }
}

impl ExperimentConfig {
    /// Named starting points: `default` (full-size networks and step counts),
    /// `desk` (reduced widths and steps for a single core) and `smoke`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::default();
        match name {
            "default" => {}
            "desk" => {
                c.dyn_hidden = 64;
                c.dynamics.steps = 3000;
                c.ensemble_size = 5;
                c.dara.hidden = vec![64, 64];
                c.dara.steps = 1000;
                c.policy_hidden = 64;
                c.policy.steps = 10_000;
                c.policy.log_every = 1000;
            }
            "smoke" => {
                c.src_size = 4000;
                c.trg_size = 200;
                c.dyn_hidden = 32;
                c.dynamics.steps = 1000;
                c.dynamics.log_every = 250;
                c.ensemble_size = 3;
                c.dara.hidden = vec![32, 32];
                c.dara.steps = 200;
                c.dara.log_every = 50;
                c.policy_hidden = 32;
                c.policy.steps = 2000;
                c.policy.log_every = 500;
                c.policy.rollout_every = 5;
                c.eval_episodes = 5;
                c.mse_starts = 3;
                c.mse_horizon = 20;
            }
            other => return Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => *self = Self::preset(v)?,
            "env" => self.env = v.parse()?,
            "shift" => self.shift = parse_shift(v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<Vec<u64>>>()?
            }
            "src_size" => self.src_size = parse(key, v)?,
            "trg_size" => self.trg_size = parse(key, v)?,
            "behavior" => self.behavior = v.parse()?,
            "dyn_mode" => self.dynamics.mode = v.parse()?,
            "dyn_steps" => self.dynamics.steps = parse(key, v)?,
            "dyn_target_every" => self.dynamics.target_every = parse(key, v)?,
            "lambda_rep" => self.dynamics.lambda_rep = parse(key, v)?,
            "no_cycle_loss" => self.dynamics.use_cycle_loss = !parse_bool(key, v)?,
            "dyn_batch" => self.dynamics.batch_size = parse(key, v)?,
            "dyn_lr" => self.dynamics.lr = parse(key, v)?,
            "dyn_log_every" => self.dynamics.log_every = parse(key, v)?,
            "dyn_hidden" => self.dyn_hidden = parse(key, v)?,
            "ensemble_size" => self.ensemble_size = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "dara_steps" => self.dara.steps = parse(key, v)?,
            "dara_batch" => self.dara.batch_size = parse(key, v)?,
            "dara_eta" => self.dara.eta = parse(key, v)?,
            "dara_lr" => self.dara.lr = parse(key, v)?,
            "dara_hidden" => self.dara.hidden = vec![parse(key, v)?; 2],
            "dara_log_every" => self.dara.log_every = parse(key, v)?,
            "disable_dara" => self.disable_dara = parse_bool(key, v)?,
            "policy_steps" => self.policy.steps = parse(key, v)?,
            "rollout_length" => self.policy.rollout_length = parse(key, v)?,
            "rollout_batch" => self.policy.rollout_batch = parse(key, v)?,
            "rollout_every" => self.policy.rollout_every = parse(key, v)?,
            "disable_rollouts" => self.policy.rollouts = !parse_bool(key, v)?,
            "src_batch" => self.policy.src_batch = parse(key, v)?,
            "trg_batch" => self.policy.trg_batch = parse(key, v)?,
            "fake_batch" => self.policy.fake_batch = parse(key, v)?,
            "policy_lr" => self.policy.lr = parse(key, v)?,
            "policy_log_every" => self.policy.log_every = parse(key, v)?,
            "policy_hidden" => self.policy_hidden = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "bc_weight" => self.bc_weight = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "weight_mode" => self.weight_mode = v.parse()?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "mse_horizon" => self.mse_horizon = parse(key, v)?,
            "mse_starts" => self.mse_starts = parse(key, v)?,
            "mse_open_loop" => self.mse_open_loop = parse_bool(key, v)?,
            "compare_dynamics" => self.compare_dynamics = parse_bool(key, v)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order. `preset` is not
    /// listed since it only seeds the other values.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let shift = self.shift.map_or("none".to_string(), |s| s.to_string());
        let seeds = self
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let d = &self.dynamics;
        let p = &self.policy;
        vec![
            ("env", self.env.as_str().to_string()),
            ("shift", shift),
            ("seeds", seeds),
            ("src_size", self.src_size.to_string()),
            ("trg_size", self.trg_size.to_string()),
            ("behavior", self.behavior.to_string()),
            ("dyn_mode", d.mode.to_string()),
            ("dyn_steps", d.steps.to_string()),
            ("dyn_target_every", d.target_every.to_string()),
            ("lambda_rep", d.lambda_rep.to_string()),
            ("no_cycle_loss", (!d.use_cycle_loss).to_string()),
            ("dyn_batch", d.batch_size.to_string()),
            ("dyn_lr", d.lr.to_string()),
            ("dyn_log_every", d.log_every.to_string()),
            ("dyn_hidden", self.dyn_hidden.to_string()),
            ("ensemble_size", self.ensemble_size.to_string()),
            ("beta", self.beta.to_string()),
            ("dara_steps", self.dara.steps.to_string()),
            ("dara_batch", self.dara.batch_size.to_string()),
            ("dara_eta", self.dara.eta.to_string()),
            ("dara_lr", self.dara.lr.to_string()),
            (
                "dara_hidden",
                self.dara.hidden.first().copied().unwrap_or(0).to_string(),
            ),
            ("dara_log_every", self.dara.log_every.to_string()),
            ("disable_dara", self.disable_dara.to_string()),
            ("policy_steps", p.steps.to_string()),
            ("rollout_length", p.rollout_length.to_string()),
            ("rollout_batch", p.rollout_batch.to_string()),
            ("rollout_every", p.rollout_every.to_string()),
            ("disable_rollouts", (!p.rollouts).to_string()),
            ("src_batch", p.src_batch.to_string()),
            ("trg_batch", p.trg_batch.to_string()),
            ("fake_batch", p.fake_batch.to_string()),
            ("policy_lr", p.lr.to_string()),
            ("policy_log_every", p.log_every.to_string()),
            ("policy_hidden", self.policy_hidden.to_string()),
            ("alpha", self.alpha.to_string()),
            ("bc_weight", self.bc_weight.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("weight_mode", self.weight_mode.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("mse_horizon", self.mse_horizon.to_string()),
            ("mse_starts", self.mse_starts.to_string()),
            ("mse_open_loop", self.mse_open_loop.to_string()),
            ("compare_dynamics", self.compare_dynamics.to_string()),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#` comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.src_size == 0 || self.trg_size == 0 {
            return Err(Error::InvalidConfig("dataset sizes must be >= 1".into()));
        }
        if self.ensemble_size == 0 || self.dyn_hidden == 0 || self.policy_hidden == 0 {
            return Err(Error::InvalidConfig("network sizes must be >= 1".into()));
        }
        if !(self.beta >= 0.0) || !(self.alpha >= 0.0) || !(self.bc_weight >= 0.0) {
            return Err(Error::InvalidConfig(
                "beta, alpha and bc_weight must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(
                "gamma must be in [0, 1] and tau in (0, 1]".into(),
            ));
        }
        if self.eval_episodes == 0 || self.mse_horizon == 0 || self.mse_starts == 0 {
            return Err(Error::InvalidConfig(
                "evaluation episodes and MSE horizon/starts must be >= 1".into(),
            ));
        }
        self.dynamics.validate()?;
        self.dara.validate()?;
        self.policy.validate()?;
        Ok(())
    }

    pub fn source_spec(&self) -> EnvSpec {
        EnvSpec::base(self.env)
    }

    pub fn target_spec(&self) -> Result<EnvSpec> {
        match self.shift {
            Some(s) => make_shifted_spec(&self.source_spec(), s),
            None => Ok(self.source_spec()),
        }
    }

    pub fn with_mode(&self, mode: DynMode) -> Self {
        let mut c = self.clone();
        c.dynamics.mode = mode;
        c
    }
}
