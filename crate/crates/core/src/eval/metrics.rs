use std::fs;
use std::path::Path;

use crate::data::Domain;
use crate::dynamics::DynamicsEnsemble;
use crate::env::{
    env_step, initial_state, Controller, EnvSpec, Episode, RefPolicyKind, ReferencePolicy,
};
use crate::error::{Error, Result};
use crate::math::{Rng, Tensor};

pub const ANCHOR_EPISODES: usize = 20;
pub const ANCHOR_SEED: u64 = 0x5eed_a2c4;

/// Returns of the random and expert reference policies on one (env, shift).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreAnchors {
    pub key: String,
    pub random_score: f64,
    pub expert_score: f64,
}

impl ScoreAnchors {
    pub fn new(key: impl Into<String>, random_score: f64, expert_score: f64) -> Result<Self> {
        let a = Self {
            key: key.into(),
            random_score,
            expert_score,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.expert_score > self.random_score) {
            return Err(Error::InvalidConfig(format!(
                "degenerate anchors for {}: expert {} <= random {}",
                self.key, self.expert_score, self.random_score
            )));
        }
        Ok(())
    }

    pub fn key_for(spec: &EnvSpec) -> String {
        format!(
            "{}/{}:{}",
            spec.env_id.as_str(),
            spec.shift_kind_text(),
            spec.shift_level_text()
        )
    }

    /// Mean returns of the reference policies on `spec` over `episodes` seeded episodes.
    pub fn compute(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<Self> {
        let run = |kind| {
            let ctrl = ReferencePolicy {
                kind,
                spec: spec.clone(),
            };
            evaluate_policy(&ctrl, spec, episodes, seed).map(|(m, _)| m)
        };
        Self::new(
            Self::key_for(spec),
            run(RefPolicyKind::Random)?,
            run(RefPolicyKind::Expert)?,
        )
    }

    pub fn to_text(&self) -> String {
        // Debug formatting of f64 round-trips exactly.
        format!(
            "key={}\nrandom_score={:?}\nexpert_score={:?}\n",
            self.key, self.random_score, self.expert_score
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut key = None;
        let mut random = None;
        let mut expert = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("anchors", format!("bad line {line:?}")))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| Error::format("anchors", format!("bad number {v:?}")))
            };
            match k {
                "key" => key = Some(v.to_string()),
                "random_score" => random = Some(num()?),
                "expert_score" => expert = Some(num()?),
                other => return Err(Error::format("anchors", format!("unknown key {other:?}"))),
            }
        }
        match (key, random, expert) {
            (Some(k), Some(r), Some(e)) => Self::new(k, r, e),
            _ => Err(Error::format("anchors", "missing field")),
        }
    }

    /// Loads the cached anchors at `path` when they match `spec`, otherwise
    /// computes and writes them.
    pub fn cached(spec: &EnvSpec, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            let a = Self::from_text(&fs::read_to_string(path)?)?;
            if a.key == Self::key_for(spec) {
                return Ok(a);
            }
        }
        let a = Self::compute(spec, ANCHOR_EPISODES, ANCHOR_SEED)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, a.to_text())?;
        Ok(a)
    }
}

/// `100 * (raw - random) / (expert - random)`.
pub fn normalized_score(raw: f64, anchors: &ScoreAnchors) -> Result<f64> {
    anchors.validate()?;
    Ok(100.0 * (raw - anchors.random_score) / (anchors.expert_score - anchors.random_score))
}

/// Mean and population std of undiscounted returns over `n_episodes`.
/// Episode `i` draws its start state (and any controller randomness) from
/// its own stream of `seed`, so results do not depend on the controller.
pub fn evaluate_policy(
    ctrl: &dyn Controller,
    spec: &EnvSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_episodes == 0 {
        return Err(Error::InvalidConfig("n_episodes must be >= 1".into()));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let mut rng = Rng::with_stream(seed, i as u64);
        let mut ep = Episode::new(spec, &mut rng);
        let mut total = 0.0;
        while !ep.is_done() {
            let a = ctrl.act(ep.state(), &mut rng)?;
            total += ep.step(&a, &mut rng)?.reward;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// A one-step next-state predictor on raw states.
pub trait NextStateModel {
    fn predict(
        &self,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        rng: &mut Rng,
    ) -> Result<Tensor<f32>>;
}

impl NextStateModel for DynamicsEnsemble {
    /// Target-domain mean path of a uniformly drawn member per row.
    fn predict(
        &self,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        rng: &mut Rng,
    ) -> Result<Tensor<f32>> {
        let mut out = Tensor::zeros(states.rows(), states.cols());
        for i in 0..states.rows() {
            let m = &self.members[rng.index(self.len())];
            let p = m.predict_batch(
                Domain::Trg,
                &Tensor::row(states.row_slice(i).to_vec()),
                &Tensor::row(actions.row_slice(i).to_vec()),
                None,
            )?;
            out.row_slice_mut(i).copy_from_slice(p.next_states.data());
        }
        Ok(out)
    }
}

/// The true simulator viewed as a model.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub spec: EnvSpec,
}

impl NextStateModel for OracleModel {
    fn predict(
        &self,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        rng: &mut Rng,
    ) -> Result<Tensor<f32>> {
        let mut out = Tensor::zeros(states.rows(), states.cols());
        for i in 0..states.rows() {
            let s: Vec<f64> = states.row_slice(i).iter().map(|&v| v as f64).collect();
            let a: Vec<f64> = actions.row_slice(i).iter().map(|&v| v as f64).collect();
            let next = env_step(&self.spec, &s, &a, rng)?.next_state;
            for (o, v) in out.row_slice_mut(i).iter_mut().zip(next) {
                *o = v as f32;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseOptions {
    pub horizon: usize,
    /// Feed model predictions back instead of resetting to the true state.
    pub open_loop: bool,
}

/// Mean over visited steps of `||ŝ' - s'||²` with actions from `ctrl` on the
/// true trajectory, starting from `starts`.
pub fn rollout_mse_from(
    model: &dyn NextStateModel,
    ctrl: &dyn Controller,
    spec: &EnvSpec,
    starts: &[Vec<f64>],
    opts: MseOptions,
    rng: &mut Rng,
) -> Result<f64> {
    if opts.horizon == 0 || starts.is_empty() {
        return Err(Error::InvalidConfig(
            "rollout MSE needs horizon >= 1 and a start state".into(),
        ));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for start in starts {
        let mut ep = Episode::from_state(spec, start.clone());
        let mut model_state: Vec<f32> = start.iter().map(|&v| v as f32).collect();
        for _ in 0..opts.horizon {
            if ep.is_done() {
                break;
            }
            let a = ctrl.act(ep.state(), rng)?;
            let input = if opts.open_loop {
                model_state.clone()
            } else {
                ep.state().iter().map(|&v| v as f32).collect()
            };
            let a32: Vec<f32> = a.iter().map(|&v| v as f32).collect();
            let pred = model.predict(&Tensor::row(input), &Tensor::row(a32), rng)?;
            let truth = ep.step(&a, rng)?.next_state;
            total += pred
                .data()
                .iter()
                .zip(&truth)
                .map(|(&p, &t)| (p as f64 - t).powi(2))
                .sum::<f64>();
            count += 1;
            model_state = pred.into_vec();
        }
    }
    Ok(total / count as f64)
}

/// [`rollout_mse_from`] with `n_starts` initial states of the target env drawn from `seed`.
pub fn rollout_mse(
    model: &dyn NextStateModel,
    ctrl: &dyn Controller,
    spec: &EnvSpec,
    n_starts: usize,
    opts: MseOptions,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let starts: Vec<Vec<f64>> = (0..n_starts)
        .map(|_| initial_state(spec, &mut rng))
        .collect();
    rollout_mse_from(model, ctrl, spec, &starts, opts, &mut rng)
}
