use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::data::{Batch, Domain, Normalizer};
use crate::env::Controller;
use crate::error::{Error, Result};
use crate::math::{Mlp, Real, Rng, Tape, Tensor};

pub const AGENT_MAGIC: &[u8; 4] = b"MBDP";
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_TAU: f64 = 5e-3;
/// Numerator of λ = α / mean|Q| on the Q term.
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Multiplier on the behavior-cloning term.
pub const DEFAULT_BC_WEIGHT: f64 = 0.1;
pub const POLICY_NOISE: f64 = 0.2;
pub const NOISE_CLIP: f64 = 0.5;
/// Exponent clamp inside the behavior-cloning weights.
pub const WEIGHT_CLAMP: f64 = 10.0;
/// Guards the mean-|Q| normalizers against division by zero.
pub const Q_SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMode {
    /// Behavior cloning weighted by the exponentiated normalized critic value.
    TargetQ,
    /// Unweighted behavior cloning.
    Vanilla,
    /// No behavior-cloning term.
    None,
}

impl WeightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightMode::TargetQ => "target_q",
            WeightMode::Vanilla => "vanilla",
            WeightMode::None => "none",
        }
    }

    fn code(self) -> f64 {
        match self {
            WeightMode::TargetQ => 0.0,
            WeightMode::Vanilla => 1.0,
            WeightMode::None => 2.0,
        }
    }

    fn from_code(c: f64) -> Result<Self> {
        match c as i64 {
            0 => Ok(WeightMode::TargetQ),
            1 => Ok(WeightMode::Vanilla),
            2 => Ok(WeightMode::None),
            _ => Err(Error::format("weight_mode", format!("unknown code {c}"))),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target_q" => Ok(WeightMode::TargetQ),
            "vanilla" => Ok(WeightMode::Vanilla),
            "none" => Ok(WeightMode::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown weight mode {other:?}"
            ))),
        }
    }
}

/// Deterministic tanh actor with twin critics and target copies of all three.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAgent<R = f32> {
    pub actor: Mlp<R>,
    pub critic1: Mlp<R>,
    pub critic2: Mlp<R>,
    pub actor_target: Mlp<R>,
    pub critic1_target: Mlp<R>,
    pub critic2_target: Mlp<R>,
    pub normalizer: Normalizer,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub bc_weight: f64,
    pub weight_mode: WeightMode,
}

/// `alpha / max(mean |q|, floor)`.
pub fn q_lambda(alpha: f64, q: &[f64]) -> f64 {
    alpha / mean_abs(q).max(Q_SCALE_FLOOR)
}

fn mean_abs(q: &[f64]) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    q.iter().map(|v| v.abs()).sum::<f64>() / q.len() as f64
}

/// Per-row behavior-cloning weights from critic values at the actor's actions.
pub fn bc_weights(q: &[f64], mode: WeightMode) -> Vec<f64> {
    match mode {
        WeightMode::TargetQ => {
            let scale = mean_abs(q).max(Q_SCALE_FLOOR);
            q.iter()
                .map(|v| (v / scale).clamp(-WEIGHT_CLAMP, WEIGHT_CLAMP).exp())
                .collect()
        }
        WeightMode::Vanilla => vec![1.0; q.len()],
        WeightMode::None => vec![0.0; q.len()],
    }
}

/// Diagnostics of one actor-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss<R> {
    pub value: f64,
    pub q_term: f64,
    pub bc_term: f64,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub grads: Vec<Tensor<R>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss<R> {
    pub value: f64,
    pub q_mean: f64,
    pub grads1: Vec<Tensor<R>>,
    pub grads2: Vec<Tensor<R>>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn column<R: Real>(v: &[f32]) -> Tensor<R> {
    Tensor::column(v.iter().map(|&x| R::from_f64_lossy(x as f64)).collect())
}

impl<R: Real> PolicyAgent<R> {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        normalizer: Normalizer,
        rng: &mut Rng,
    ) -> Result<Self> {
        if normalizer.dim() != state_dim {
            return Err(Error::Shape(format!(
                "normalizer has {} dims, state has {state_dim}",
                normalizer.dim()
            )));
        }
        let actor = Mlp::new(&widths(state_dim, hidden, action_dim), rng)?;
        let critic1 = Mlp::new(&widths(state_dim + action_dim, hidden, 1), rng)?;
        let critic2 = Mlp::new(&widths(state_dim + action_dim, hidden, 1), rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            normalizer,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            alpha: DEFAULT_ALPHA,
            bc_weight: DEFAULT_BC_WEIGHT,
            weight_mode: WeightMode::TargetQ,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn cast<S: Real>(&self) -> PolicyAgent<S> {
        PolicyAgent {
            actor: self.actor.cast(),
            critic1: self.critic1.cast(),
            critic2: self.critic2.cast(),
            actor_target: self.actor_target.cast(),
            critic1_target: self.critic1_target.cast(),
            critic2_target: self.critic2_target.cast(),
            normalizer: self.normalizer.clone(),
            gamma: self.gamma,
            tau: self.tau,
            alpha: self.alpha,
            bc_weight: self.bc_weight,
            weight_mode: self.weight_mode,
        }
    }

    pub(crate) fn normalize(&self, raw: &Tensor<f32>) -> Tensor<R> {
        let mut t = raw.clone();
        self.normalizer.normalize_rows(t.data_mut());
        t.cast()
    }

    fn act_norm(actor: &Mlp<R>, s_norm: &Tensor<R>) -> Result<Tensor<R>> {
        Ok(actor.forward_batch(s_norm)?.map(|v| v.tanh()))
    }

    /// Deterministic actions for raw states.
    pub fn act_batch(&self, states: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(Self::act_norm(&self.actor, &self.normalize(states))?.cast())
    }

    fn q_values(critic: &Mlp<R>, s_norm: &Tensor<R>, a: &Tensor<R>) -> Result<Vec<f64>> {
        Ok(critic
            .forward_batch(&Tensor::concat_cols(&[s_norm, a]))?
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect())
    }

    /// q1 on raw states and actions.
    pub fn q1(&self, states: &Tensor<f32>, actions: &Tensor<f32>) -> Result<Vec<f64>> {
        Self::q_values(&self.critic1, &self.normalize(states), &actions.cast())
    }

    /// Bootstrapped targets `r + γ (1 - done) min(q1', q2')(s', a')`, with
    /// `a' = clip(actor'(s') + clip(noise, ±c), ±1)`. `noise` is n x action_dim.
    pub fn td_targets(&self, batch: &Batch, noise: &Tensor<R>) -> Result<Vec<f64>> {
        let s2 = self.normalize(&batch.next_states);
        let a_pi = Self::act_norm(&self.actor_target, &s2)?;
        if noise.shape() != a_pi.shape() {
            return Err(Error::Shape(format!(
                "smoothing noise {:?}, actions {:?}",
                noise.shape(),
                a_pi.shape()
            )));
        }
        let c = R::from_f64_lossy(NOISE_CLIP);
        let one = R::one();
        let a2 = a_pi.zip_map(noise, |a, n| (a + n.max(-c).min(c)).max(-one).min(one));
        let q1 = Self::q_values(&self.critic1_target, &s2, &a2)?;
        let q2 = Self::q_values(&self.critic2_target, &s2, &a2)?;
        Ok((0..batch.len())
            .map(|i| {
                let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] as f64 + self.gamma * cont * q1[i].min(q2[i])
            })
            .collect())
    }

    /// `mean[(y - q1)^2 + (y - q2)^2]` and gradients for both critics.
    pub fn critic_td_loss(&self, batch: &Batch, noise: &Tensor<R>) -> Result<CriticLoss<R>> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("critic batch".into()));
        }
        let y: Vec<f32> = self
            .td_targets(batch, noise)?
            .iter()
            .map(|&v| v as f32)
            .collect();
        let s = self.normalize(&batch.states);
        let mut tape = Tape::new();
        let c1 = self.critic1.bind(&mut tape, true);
        let c2 = self.critic2.bind(&mut tape, true);
        let sa = tape.constant(Tensor::concat_cols(&[&s, &batch.actions.cast()]));
        let yv = tape.constant(column(&y));
        let q1 = c1.forward(&mut tape, sa)?;
        let q2 = c2.forward(&mut tape, sa)?;
        let e1 = tape.sub(yv, q1)?;
        let e1 = tape.square(e1);
        let e2 = tape.sub(yv, q2)?;
        let e2 = tape.square(e2);
        let both = tape.add(e1, e2)?;
        let loss = tape.mean(both);
        let q_mean = tape.value(q1).mean().as_f64();
        let value = tape.value(loss).item().as_f64();
        let g = tape.backward(loss)?;
        Ok(CriticLoss {
            value,
            q_mean,
            grads1: c1.grads(&g),
            grads2: c2.grads(&g),
        })
    }

    /// `-λ mean q1(s, π(s))` over `enhanced` plus `bc_weight` times the
    /// weighted behavior-cloning term over `bc`. λ's denominator and the weights are constants.
    pub fn actor_loss(&self, enhanced: &Batch, bc: &Batch) -> Result<ActorLoss<R>> {
        if enhanced.is_empty() {
            return Err(Error::EmptyDataset("actor batch".into()));
        }
        if self.weight_mode != WeightMode::None {
            if bc.is_empty() {
                return Err(Error::EmptyDataset("behavior-cloning batch".into()));
            }
            if bc.count(Domain::Fake) > 0 {
                return Err(Error::InvalidConfig(
                    "behavior-cloning batch contains model rollouts".into(),
                ));
            }
        }
        let s = self.normalize(&enhanced.states);
        let q_data = Self::q_values(&self.critic1, &s, &enhanced.actions.cast())?;
        let lambda = q_lambda(self.alpha, &q_data);

        let mut tape = Tape::new();
        let actor = self.actor.bind(&mut tape, true);
        let critic = self.critic1.bind(&mut tape, false);
        let sv = tape.constant(s);
        let pre = actor.forward(&mut tape, sv)?;
        let pi = tape.tanh(pre);
        let spi = tape.concat_cols(&[sv, pi])?;
        let q = critic.forward(&mut tape, spi)?;
        let q_mean = tape.mean(q);
        let q_term_value = -lambda * tape.value(q_mean).item().as_f64();
        let mut loss = tape.scale(q_mean, -lambda);

        let mut weights = Vec::new();
        let mut bc_term = 0.0;
        if self.weight_mode != WeightMode::None {
            let sb = self.normalize(&bc.states);
            let pi_b = Self::act_norm(&self.actor, &sb)?;
            let q_pi = Self::q_values(&self.critic1, &sb, &pi_b)?;
            weights = bc_weights(&q_pi, self.weight_mode);
            let sbv = tape.constant(sb);
            let a = tape.constant(bc.actions.cast());
            let w = tape.constant(Tensor::column(
                weights.iter().map(|&w| R::from_f64_lossy(w)).collect(),
            ));
            let pre_b = actor.forward(&mut tape, sbv)?;
            let pi_bv = tape.tanh(pre_b);
            let diff = tape.sub(pi_bv, a)?;
            let sq = tape.square(diff);
            let per_row = tape.sum_cols(sq);
            let weighted = tape.mul(per_row, w)?;
            let mean = tape.mean(weighted);
            let term = tape.scale(mean, self.bc_weight);
            bc_term = tape.value(term).item().as_f64();
            loss = tape.add(loss, term)?;
        }
        let value = tape.value(loss).item().as_f64();
        let g = tape.backward(loss)?;
        Ok(ActorLoss {
            value,
            q_term: q_term_value,
            bc_term,
            lambda,
            weights,
            grads: actor.grads(&g),
        })
    }

    /// θ⁻ ← (1 − τ) θ⁻ + τ θ for actor and both critics.
    pub fn soft_update(&mut self) {
        let tau = R::from_f64_lossy(self.tau);
        self.actor_target.soft_update_from(&self.actor, tau);
        self.critic1_target.soft_update_from(&self.critic1, tau);
        self.critic2_target.soft_update_from(&self.critic2, tau);
    }
}

impl PolicyAgent<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            magic: *AGENT_MAGIC,
            scalars: vec![
                self.gamma,
                self.tau,
                self.alpha,
                self.bc_weight,
                self.weight_mode.code(),
            ],
            vectors: vec![self.normalizer.mean.clone(), self.normalizer.std.clone()],
            nets: vec![
                self.actor.clone(),
                self.critic1.clone(),
                self.critic2.clone(),
                self.actor_target.clone(),
                self.critic1_target.clone(),
                self.critic2_target.clone(),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_shape(5, 2, 6)?;
        let mut v = ckpt.vectors.into_iter();
        let normalizer = Normalizer {
            mean: v.next().unwrap(),
            std: v.next().unwrap(),
        };
        let n: Vec<Mlp> = ckpt.nets;
        let sd = normalizer.dim();
        let ad = n[0].output_dim();
        let ok = n[0].input_dim() == sd
            && n[3].widths() == n[0].widths()
            && [&n[1], &n[2], &n[4], &n[5]]
                .iter()
                .all(|c| c.input_dim() == sd + ad && c.output_dim() == 1);
        if !ok {
            return Err(Error::format(
                "arch",
                "actor/critic shapes are inconsistent",
            ));
        }
        let mut nets = n.into_iter();
        Ok(Self {
            actor: nets.next().unwrap(),
            critic1: nets.next().unwrap(),
            critic2: nets.next().unwrap(),
            actor_target: nets.next().unwrap(),
            critic1_target: nets.next().unwrap(),
            critic2_target: nets.next().unwrap(),
            normalizer,
            gamma: ckpt.scalars[0],
            tau: ckpt.scalars[1],
            alpha: ckpt.scalars[2],
            bc_weight: ckpt.scalars[3],
            weight_mode: WeightMode::from_code(ckpt.scalars[4])?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, AGENT_MAGIC)?)
    }
}

impl Controller for PolicyAgent<f32> {
    fn act(&self, state: &[f64], _rng: &mut Rng) -> Result<Vec<f64>> {
        let s = Tensor::row(state.iter().map(|&v| v as f32).collect());
        Ok(self
            .act_batch(&s)?
            .data()
            .iter()
            .map(|&v| v as f64)
            .collect())
    }
}
