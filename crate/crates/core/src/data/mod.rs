//! Offline transition datasets: collection, persistence, normalization and sampling.

pub(crate) mod format;
mod sample;

use std::fmt;
use std::str::FromStr;

use crate::env::{reference_policy, EnvSpec, Episode, RefPolicyKind};
use crate::error::{Error, Result};
use crate::math::Rng;

pub use format::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use sample::{sample_batch, Batch, ReplayBuffer, ReplayView};

/// Source/target size ratio of the offline datasets.
pub const SOURCE_TARGET_RATIO: usize = 200;
/// Desk-scale dataset sizes.
pub const DESK_SOURCE_TRANSITIONS: usize = 40_000;
pub const DESK_TARGET_TRANSITIONS: usize = DESK_SOURCE_TRANSITIONS / SOURCE_TARGET_RATIO;
/// Capacity of the model-rollout buffer.
pub const FAKE_BUFFER_CAPACITY: usize = 100_000;

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Src,
    Trg,
    Fake,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Src => "src",
            Domain::Trg => "trg",
            Domain::Fake => "fake",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src" => Ok(Domain::Src),
            "trg" => Ok(Domain::Trg),
            "fake" => Ok(Domain::Fake),
            other => Err(Error::UnknownDomain(other.to_string())),
        }
    }
}

/// Owned copy of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
    pub domain: Domain,
}

/// Per-dimension state statistics; every network consumes normalized states.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics of row-major `states`, std floored at [`STD_FLOOR`].
    pub fn fit(states: &[f32], dim: usize) -> Self {
        let n = states.len().checked_div(dim).unwrap_or(0);
        if n == 0 {
            return Self::identity(dim);
        }
        let mut mean = vec![0.0f64; dim];
        for row in states.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; dim];
        for row in states.chunks_exact(dim) {
            for ((acc, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|v| (v / n as f64).sqrt().max(STD_FLOOR) as f32)
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_in_place(&self, row: &mut [f32]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize_in_place(&self, row: &mut [f32]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    /// Normalizes every row of a row-major buffer.
    pub fn normalize_rows(&self, data: &mut [f32]) {
        data.chunks_exact_mut(self.dim())
            .for_each(|r| self.normalize_in_place(r));
    }

    pub fn denormalize_rows(&self, data: &mut [f32]) {
        data.chunks_exact_mut(self.dim())
            .for_each(|r| self.denormalize_in_place(r));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub env_id: String,
    pub shift_kind: String,
    pub shift_level: String,
    pub behavior: String,
}

/// Flat, row-major storage of transitions from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub meta: DatasetMeta,
    pub domain: Domain,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_states: Vec<f32>,
    dones: Vec<bool>,
    pub normalizer: Normalizer,
}

impl TransitionDataset {
    pub fn new(meta: DatasetMeta, domain: Domain, state_dim: usize, action_dim: usize) -> Self {
        Self {
            meta,
            domain,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            normalizer: Normalizer::identity(state_dim),
        }
    }

    /// Domain implied by the shift recorded in the header.
    pub fn domain_for_shift(shift_kind: &str) -> Domain {
        if shift_kind == "none" {
            Domain::Src
        } else {
            Domain::Trg
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn push(&mut self, s: &[f32], a: &[f32], r: f32, s_next: &[f32], done: bool) -> Result<()> {
        if s.len() != self.state_dim || s_next.len() != self.state_dim || a.len() != self.action_dim
        {
            return Err(Error::Shape(format!(
                "transition dims {}/{}/{} do not match dataset {}/{}",
                s.len(),
                a.len(),
                s_next.len(),
                self.state_dim,
                self.action_dim
            )));
        }
        if !r.is_finite() {
            return Err(Error::NumericalFault(format!("non-finite reward {r}")));
        }
        self.states.extend_from_slice(s);
        self.actions.extend_from_slice(a);
        self.rewards.push(r);
        self.next_states.extend_from_slice(s_next);
        self.dones.push(done);
        Ok(())
    }

    pub(crate) fn overwrite(
        &mut self,
        i: usize,
        s: &[f32],
        a: &[f32],
        r: f32,
        s_next: &[f32],
        done: bool,
    ) {
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(s);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(a);
        self.rewards[i] = r;
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(s_next);
        self.dones[i] = done;
    }

    pub fn state(&self, i: usize) -> &[f32] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f32] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn reward(&self, i: usize) -> f32 {
        self.rewards[i]
    }

    pub fn next_state(&self, i: usize) -> &[f32] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn done(&self, i: usize) -> bool {
        self.dones[i]
    }

    pub fn rewards(&self) -> &[f32] {
        &self.rewards
    }

    pub fn states(&self) -> &[f32] {
        &self.states
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            s: self.state(i).to_vec(),
            a: self.action(i).to_vec(),
            r: self.reward(i),
            s_next: self.next_state(i).to_vec(),
            done: self.done(i),
            domain: self.domain,
        }
    }

    /// Copy with every reward replaced by `f(i, r)`; all other fields are untouched.
    pub fn map_rewards(&self, mut f: impl FnMut(usize, f32) -> f32) -> Result<Self> {
        let mut out = self.clone();
        for (i, r) in out.rewards.iter_mut().enumerate() {
            let v = f(i, *r);
            if !v.is_finite() {
                return Err(Error::NumericalFault(format!("reward {i} became {v}")));
            }
            *r = v;
        }
        Ok(out)
    }

    pub fn refit_normalizer(&mut self) {
        self.normalizer = Normalizer::fit(&self.states, self.state_dim);
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Rolls out `behavior` on `spec` until exactly `n_transitions` are recorded.
pub fn collect_dataset(
    spec: &EnvSpec,
    behavior: RefPolicyKind,
    n_transitions: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    spec.validate()?;
    if n_transitions == 0 {
        return Err(Error::InvalidConfig("n_transitions must be >= 1".into()));
    }
    let meta = DatasetMeta {
        env_id: spec.env_id.as_str().to_string(),
        shift_kind: spec.shift_kind_text().to_string(),
        shift_level: spec.shift_level_text(),
        behavior: behavior.to_string(),
    };
    let domain = TransitionDataset::domain_for_shift(&meta.shift_kind);
    let mut ds = TransitionDataset::new(meta, domain, spec.state_dim, spec.action_dim);
    let mut rng = Rng::new(seed);
    while ds.len() < n_transitions {
        let mut ep = Episode::new(spec, &mut rng);
        while !ep.is_done() && ds.len() < n_transitions {
            let s = ep.state().to_vec();
            let a = reference_policy(behavior, spec, &s, &mut rng);
            let out = ep.step(&a, &mut rng)?;
            ds.push(
                &to_f32(&s),
                &to_f32(&a),
                out.reward as f32,
                &to_f32(&out.next_state),
                out.terminal,
            )?;
        }
    }
    ds.refit_normalizer();
    Ok(ds)
}
