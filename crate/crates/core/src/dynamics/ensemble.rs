use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::{Domain, Normalizer};
use crate::dynamics::member::{DynamicsArch, DynamicsMember, MEMBER_MAGIC};
use crate::error::{Error, Result};
use crate::math::{Rng, Tensor};

pub const ENSEMBLE_SIZE: usize = 7;
/// Reward-penalty scale applied to the ensemble disagreement.
pub const DEFAULT_PENALTY: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEnsemble {
    pub members: Vec<DynamicsMember>,
    pub beta: f64,
}

/// Largest per-dimension population std across member predictions.
/// `preds[m]` is member `m`'s prediction for one input.
pub fn max_std(preds: &[&[f32]]) -> f64 {
    let Some(first) = preds.first() else {
        return 0.0;
    };
    let n = preds.len() as f64;
    (0..first.len())
        .map(|j| {
            let mean = preds.iter().map(|p| p[j] as f64).sum::<f64>() / n;
            let var = preds
                .iter()
                .map(|p| (p[j] as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            var.sqrt()
        })
        .fold(0.0, f64::max)
}

impl DynamicsEnsemble {
    /// `n_members` members with independent initializations drawn from forked streams.
    pub fn new(
        arch: DynamicsArch,
        normalizer: Normalizer,
        n_members: usize,
        beta: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_members == 0 {
            return Err(Error::InvalidConfig(
                "ensemble needs at least one member".into(),
            ));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "penalty beta must be >= 0, got {beta}"
            )));
        }
        let members = (0..n_members)
            .map(|_| DynamicsMember::new(arch.clone(), normalizer.clone(), &mut rng.fork()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, beta })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn arch(&self) -> &DynamicsArch {
        &self.members[0].arch
    }

    /// Mean-path next states of every member for a batch of raw inputs.
    pub fn member_predictions(
        &self,
        domain: Domain,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
    ) -> Result<Vec<Tensor<f32>>> {
        self.members
            .iter()
            .map(|m| {
                m.predict_batch(domain, states, actions, None)
                    .map(|p| p.next_states)
            })
            .collect()
    }

    /// Disagreement u(s, a) for every row.
    pub fn uncertainty_batch(
        &self,
        domain: Domain,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
    ) -> Result<Vec<f64>> {
        let preds = self.member_predictions(domain, states, actions)?;
        Ok(uncertainty_from_predictions(&preds))
    }

    pub fn uncertainty(&self, domain: Domain, s: &[f32], a: &[f32]) -> Result<f64> {
        let u =
            self.uncertainty_batch(domain, &Tensor::row(s.to_vec()), &Tensor::row(a.to_vec()))?;
        Ok(u[0])
    }

    /// Member-averaged reward minus `beta * u`, for every row.
    pub fn penalized_reward_batch(
        &self,
        domain: Domain,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        next_states: &Tensor<f32>,
    ) -> Result<Vec<f64>> {
        let u = self.uncertainty_batch(domain, states, actions)?;
        let mut mean = vec![0.0f64; states.rows()];
        for m in &self.members {
            for (acc, r) in mean
                .iter_mut()
                .zip(m.predict_reward(states, actions, next_states)?)
            {
                *acc += r as f64;
            }
        }
        let n = self.len() as f64;
        Ok(mean
            .iter()
            .zip(&u)
            .map(|(r, u)| penalize(r / n, *u, self.beta))
            .collect())
    }

    pub fn penalized_reward(
        &self,
        domain: Domain,
        s: &[f32],
        a: &[f32],
        s_hat: &[f32],
    ) -> Result<f64> {
        let r = self.penalized_reward_batch(
            domain,
            &Tensor::row(s.to_vec()),
            &Tensor::row(a.to_vec()),
            &Tensor::row(s_hat.to_vec()),
        )?;
        Ok(r[0])
    }

    /// One model step for every row: a uniformly drawn member supplies the
    /// next state (mean path) and the reward is the penalized ensemble mean.
    pub fn rollout_step(
        &self,
        domain: Domain,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        rng: &mut Rng,
    ) -> Result<(Tensor<f32>, Vec<f64>)> {
        let preds = self.member_predictions(domain, states, actions)?;
        let u = uncertainty_from_predictions(&preds);
        let mut next = Tensor::zeros(states.rows(), states.cols());
        for i in 0..states.rows() {
            let m = rng.index(self.len());
            next.row_slice_mut(i).copy_from_slice(preds[m].row_slice(i));
        }
        let mut mean = vec![0.0f64; states.rows()];
        for m in &self.members {
            for (acc, r) in mean
                .iter_mut()
                .zip(m.predict_reward(states, actions, &next)?)
            {
                *acc += r as f64;
            }
        }
        let n = self.len() as f64;
        let rewards = mean
            .iter()
            .zip(&u)
            .map(|(r, u)| penalize(r / n, *u, self.beta))
            .collect();
        Ok((next, rewards))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut scalars = vec![self.len() as f64, self.beta];
        let mut vectors = Vec::new();
        let mut nets = Vec::new();
        for m in &self.members {
            let c = m.to_checkpoint();
            scalars.extend(c.scalars);
            vectors.extend(c.vectors);
            nets.extend(c.nets);
        }
        Checkpoint {
            magic: *MEMBER_MAGIC,
            scalars,
            vectors,
            nets,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let n = *ckpt
            .scalars
            .first()
            .ok_or_else(|| Error::format("arch", "missing member count"))? as usize;
        if n == 0 {
            return Err(Error::format("arch", "empty ensemble"));
        }
        ckpt.expect_shape(2 + 4 * n, 2 * n, 5 * n)?;
        let beta = ckpt.scalars[1];
        let mut vectors = ckpt.vectors.into_iter();
        let mut nets = ckpt.nets.into_iter();
        let mut members = Vec::with_capacity(n);
        for i in 0..n {
            let part = Checkpoint {
                magic: *MEMBER_MAGIC,
                scalars: ckpt.scalars[2 + 4 * i..6 + 4 * i].to_vec(),
                vectors: vectors.by_ref().take(2).collect(),
                nets: nets.by_ref().take(5).collect(),
            };
            members.push(DynamicsMember::from_checkpoint(part)?);
        }
        if members.iter().any(|m| m.arch != members[0].arch) {
            return Err(Error::format("arch", "members disagree on architecture"));
        }
        Ok(Self { members, beta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, MEMBER_MAGIC)?)
    }
}

/// Per-row max-std over a list of per-member prediction matrices.
pub fn uncertainty_from_predictions(preds: &[Tensor<f32>]) -> Vec<f64> {
    let rows = preds.first().map_or(0, |p| p.rows());
    (0..rows)
        .map(|i| {
            let per_member: Vec<&[f32]> = preds.iter().map(|p| p.row_slice(i)).collect();
            max_std(&per_member)
        })
        .collect()
}

pub fn penalize(mean_reward: f64, u: f64, beta: f64) -> f64 {
    mean_reward - beta * u
}
