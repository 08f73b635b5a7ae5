use crate::data::{
    sample_batch, Batch, Domain, ReplayBuffer, TransitionDataset, FAKE_BUFFER_CAPACITY,
};
use crate::dynamics::DynamicsEnsemble;
use crate::error::{Error, Result};
use crate::math::{AdamState, Rng, Tensor, DEFAULT_LEARNING_RATE};
use crate::policy::agent::{PolicyAgent, POLICY_NOISE};

pub const ROLLOUT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrainConfig {
    pub steps: usize,
    pub rollout_length: usize,
    /// Start states per rollout round, half from each real dataset.
    pub rollout_batch: usize,
    /// A rollout round runs every `rollout_every` steps.
    pub rollout_every: usize,
    pub rollouts: bool,
    pub src_batch: usize,
    pub trg_batch: usize,
    pub fake_batch: usize,
    pub buffer_capacity: usize,
    pub lr: f64,
    pub log_every: usize,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            rollout_length: 1,
            rollout_batch: 64,
            rollout_every: 1,
            rollouts: true,
            src_batch: 128,
            trg_batch: 128,
            fake_batch: 128,
            buffer_capacity: FAKE_BUFFER_CAPACITY,
            lr: DEFAULT_LEARNING_RATE,
            log_every: 1000,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollout_length == 0 {
            return Err(Error::InvalidConfig("rollout length must be >= 1".into()));
        }
        if self.rollout_every == 0 || self.log_every == 0 || !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(
                "rollout stride, log stride and learning rate must be positive".into(),
            ));
        }
        if self.src_batch + self.trg_batch == 0 {
            return Err(Error::InvalidConfig(
                "no real data in the policy batch".into(),
            ));
        }
        Ok(())
    }

    fn uses_rollouts(&self) -> bool {
        self.rollouts && self.fake_batch > 0
    }
}

/// One scalar emitted during policy training.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMetric {
    pub step: usize,
    pub name: String,
    pub value: f64,
}

/// Rolls the ensemble forward `length` steps from `starts` under the actor
/// plus Gaussian exploration noise. Every transition is tagged fake with done=false.
pub fn rollout_fake(
    agent: &PolicyAgent,
    ensemble: &DynamicsEnsemble,
    starts: &Tensor<f32>,
    length: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Batch> {
    if ensemble.is_empty() {
        return Err(Error::InvalidConfig(
            "rollouts need a nonempty ensemble".into(),
        ));
    }
    if length == 0 {
        return Err(Error::InvalidConfig("rollout length must be >= 1".into()));
    }
    let (sd, ad) = (agent.state_dim(), agent.action_dim());
    let mut parts = Vec::with_capacity(length);
    let mut s = starts.clone();
    for _ in 0..length {
        let mut a = agent.act_batch(&s)?;
        for v in a.data_mut() {
            *v = (*v as f64 + noise * rng.normal()).clamp(-1.0, 1.0) as f32;
        }
        let (next, rewards) = ensemble.rollout_step(Domain::Trg, &s, &a, rng)?;
        if !next.is_finite() || rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NumericalFault("model rollout diverged".into()));
        }
        let n = s.rows();
        parts.push(Batch {
            states: s,
            actions: a,
            rewards: rewards.iter().map(|&r| r as f32).collect(),
            next_states: next.clone(),
            dones: vec![false; n],
            domains: vec![Domain::Fake; n],
        });
        s = next;
    }
    if parts.is_empty() {
        return Ok(Batch::empty(sd, ad));
    }
    Batch::concat(&parts)
}

struct Optimizers {
    actor: AdamState,
    critic1: AdamState,
    critic2: AdamState,
}

/// Offline actor-critic training on augmented source, target and model data.
/// `on_eval(step, agent)` is invoked every `log_every` steps and after the
/// last one; its metrics are appended to the history.
pub fn train_mobody(
    agent: &mut PolicyAgent,
    ensemble: Option<&DynamicsEnsemble>,
    src_aug: &TransitionDataset,
    trg: &TransitionDataset,
    cfg: &PolicyTrainConfig,
    rng: &mut Rng,
    on_eval: &mut dyn FnMut(usize, &PolicyAgent) -> Result<Vec<(String, f64)>>,
) -> Result<Vec<PolicyMetric>> {
    cfg.validate()?;
    let use_rollouts = cfg.uses_rollouts();
    if use_rollouts && ensemble.is_none() {
        return Err(Error::InvalidConfig(
            "rollouts enabled without a dynamics ensemble".into(),
        ));
    }
    for (ds, n) in [(src_aug, cfg.src_batch), (trg, cfg.trg_batch)] {
        if n > 0 && ds.is_empty() {
            return Err(Error::EmptyDataset(format!("{} dataset", ds.domain)));
        }
    }
    let mut history = Vec::new();
    if cfg.steps == 0 {
        return Ok(history);
    }
    let mut opt = Optimizers {
        actor: AdamState::new(&agent.actor.params(), cfg.lr),
        critic1: AdamState::new(&agent.critic1.params(), cfg.lr),
        critic2: AdamState::new(&agent.critic2.params(), cfg.lr),
    };
    let mut buffer = ReplayBuffer::new(agent.state_dim(), agent.action_dim(), cfg.buffer_capacity);
    let ad = agent.action_dim();
    let half = cfg.rollout_batch / 2;
    let start_parts: Vec<(&TransitionDataset, usize)> = if trg.is_empty() {
        vec![(src_aug, cfg.rollout_batch)]
    } else if src_aug.is_empty() {
        vec![(trg, cfg.rollout_batch)]
    } else {
        vec![(src_aug, half), (trg, cfg.rollout_batch - half)]
    };

    for step in 0..cfg.steps {
        if let (true, Some(ens)) = (use_rollouts, ensemble) {
            if step % cfg.rollout_every == 0 && cfg.rollout_batch > 0 {
                let starts = sample_batch(&start_parts, rng)?.states;
                let fake =
                    rollout_fake(agent, ens, &starts, cfg.rollout_length, ROLLOUT_NOISE, rng)
                        .map_err(|e| e.in_stage("rollout"))?;
                buffer.push_batch(&fake)?;
            }
        }
        let real = sample_batch(&[(src_aug, cfg.src_batch), (trg, cfg.trg_batch)], rng)?;
        let enhanced = if use_rollouts && !buffer.is_empty() {
            let fake = sample_batch(&[(buffer.as_dataset(), cfg.fake_batch)], rng)?;
            Batch::concat(&[real.clone(), fake])?
        } else {
            real.clone()
        };

        let noise = Tensor::from_vec(
            enhanced.len(),
            ad,
            (0..enhanced.len() * ad)
                .map(|_| (POLICY_NOISE * rng.normal()) as f32)
                .collect(),
        )?;
        let critic = agent.critic_td_loss(&enhanced, &noise)?;
        opt.critic1
            .step(agent.critic1.params_mut(), &critic.grads1)?;
        opt.critic2
            .step(agent.critic2.params_mut(), &critic.grads2)?;

        let actor = agent.actor_loss(&enhanced, &real)?;
        opt.actor.step(agent.actor.params_mut(), &actor.grads)?;
        agent.soft_update();

        if !critic.value.is_finite() || !actor.value.is_finite() {
            return Err(Error::NumericalFault(format!(
                "policy losses diverged at step {step}"
            )));
        }
        let last = step + 1 == cfg.steps;
        if step % cfg.log_every == 0 || last {
            let mut push = |name: &str, value: f64| {
                history.push(PolicyMetric {
                    step,
                    name: name.to_string(),
                    value,
                })
            };
            push("critic_loss", critic.value);
            push("actor_loss", actor.value);
            push("q_mean", critic.q_mean);
            push("bc_term", actor.bc_term);
            push("fake_buffer", buffer.len() as f64);
            if use_rollouts && !buffer.is_empty() {
                let f = buffer.as_dataset();
                let mean_r = f.rewards().iter().map(|&r| r as f64).sum::<f64>() / f.len() as f64;
                push("fake_reward_mean", mean_r);
            }
            for (name, value) in on_eval(step, agent)? {
                history.push(PolicyMetric { step, name, value });
            }
        }
    }
    Ok(history)
}
