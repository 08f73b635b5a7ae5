//! Loss graph of a dynamics member.

use crate::data::{Batch, Domain};
use crate::dynamics::member::{DynamicsMember, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};
use crate::math::{BoundMlp, Mlp, Real, Tape, Tensor, Var};

/// A batch in network units: states normalized, rewards as an n x 1 column.
#[derive(Debug, Clone)]
pub struct LossBatch<R> {
    pub states: Tensor<R>,
    pub actions: Tensor<R>,
    pub rewards: Tensor<R>,
    pub next_states: Tensor<R>,
}

impl<R: Real> LossBatch<R> {
    pub fn from_batch(member: &DynamicsMember<R>, batch: &Batch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("dynamics loss batch".into()));
        }
        Ok(Self {
            states: member.normalize(&batch.states),
            actions: batch.actions.cast(),
            rewards: Tensor::column(
                batch
                    .rewards
                    .iter()
                    .map(|&r| R::from_f64_lossy(r as f64))
                    .collect(),
            ),
            next_states: member.normalize(&batch.next_states),
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// Which terms enter the optimized total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// Encoder-consistency and cycle terms (the full model). Baselines train
    /// transition and reward only.
    pub representation: bool,
    pub use_cycle_loss: bool,
    pub lambda_rep: f64,
}

impl Objective {
    pub fn full(lambda_rep: f64) -> Self {
        Self {
            representation: true,
            use_cycle_loss: true,
            lambda_rep,
        }
    }

    /// Comparison models keep the encoder loss and drop the cycle term.
    pub fn baseline(lambda_rep: f64) -> Self {
        Self {
            representation: true,
            use_cycle_loss: false,
            lambda_rep,
        }
    }
}

/// Values of every term for one batch. Terms outside the objective are still
/// reported.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub transition: f64,
    pub encoder: f64,
    pub kl: f64,
    pub reconstruction: f64,
    pub reward: f64,
    pub total: f64,
}

impl LossValues {
    pub fn cycle(&self) -> f64 {
        self.kl + self.reconstruction
    }
}

/// Bound networks of one member. Only the active domain's action encoder is bound.
struct Bound {
    encoder: BoundMlp,
    action_encoder: BoundMlp,
    transition: BoundMlp,
    reward: BoundMlp,
}

/// Gradients per network, in [`Mlp::params`] order. `None` for networks
/// that took no part in the graph.
#[derive(Debug, Clone)]
pub struct MemberGrads<R> {
    pub state_encoder: Vec<Tensor<R>>,
    pub action_encoder: Vec<Tensor<R>>,
    pub transition: Vec<Tensor<R>>,
    pub reward_head: Vec<Tensor<R>>,
}

fn sq_norm_rows<R: Real>(tape: &mut Tape<R>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.square(d);
    Ok(tape.sum_cols(sq))
}

/// Builds every loss term on `tape`. `eps` is the reparameterization noise for z_s.
fn build<R: Real>(
    tape: &mut Tape<R>,
    member: &DynamicsMember<R>,
    psi: &Mlp<R>,
    batch: &LossBatch<R>,
    eps: &Tensor<R>,
    objective: Objective,
) -> Result<(Bound, [Var; 6])> {
    let d = member.arch.latent_dim;
    if eps.shape() != (batch.len(), d) {
        return Err(Error::Shape(format!(
            "latent noise {:?}, expected {:?}",
            eps.shape(),
            (batch.len(), d)
        )));
    }
    let bound = Bound {
        encoder: member.state_encoder.bind(tape, true),
        action_encoder: psi.bind(tape, true),
        transition: member.transition.bind(tape, true),
        reward: member.reward_head.bind(tape, true),
    };
    let s = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let r = tape.constant(batch.rewards.clone());
    let s2 = tape.constant(batch.next_states.clone());
    let e = tape.constant(eps.clone());

    let enc = bound.encoder.forward(tape, s)?;
    let mu = tape.slice_cols(enc, 0, d)?;
    let raw_log_std = tape.slice_cols(enc, d, 2 * d)?;
    let log_std = tape.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = tape.exp(log_std);
    let noise = tape.mul(std, e)?;
    let z = tape.add(mu, noise)?;

    let za = tape.concat_cols(&[z, a])?;
    let delta = bound.action_encoder.forward(tape, za)?;
    let z_sa = tape.add(z, delta)?;
    let pred = bound.transition.forward(tape, z_sa)?;
    let per_row = sq_norm_rows(tape, s2, pred)?;
    let transition = tape.mean(per_row);

    let enc_next = bound.encoder.forward(tape, s2)?;
    let mu_next = tape.slice_cols(enc_next, 0, d)?;
    let target = tape.stop_gradient(mu_next);
    let per_row = sq_norm_rows(tape, target, z_sa)?;
    let encoder = tape.mean(per_row);

    // KL(q(z|s) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - 2 log sigma - 1)
    let mu_sq = tape.square(mu);
    let var = tape.square(std);
    let two_log = tape.scale(log_std, 2.0);
    let t = tape.add(mu_sq, var)?;
    let t = tape.sub(t, two_log)?;
    let per_row = tape.sum_cols(t);
    let mean_sum = tape.mean(per_row);
    let dz = tape.constant(Tensor::scalar(R::from_f64_lossy(d as f64)));
    let kl = tape.sub(mean_sum, dz)?;
    let kl = tape.scale(kl, 0.5);

    let recon = bound.transition.forward(tape, z)?;
    let per_row = sq_norm_rows(tape, s, recon)?;
    let dist = tape.sqrt(per_row);
    let reconstruction = tape.mean(dist);

    let true_in = tape.concat_cols(&[s, a, s2])?;
    let r_true = bound.reward.forward(tape, true_in)?;
    let pred_detached = tape.stop_gradient(pred);
    let model_in = tape.concat_cols(&[s, a, pred_detached])?;
    let r_model = bound.reward.forward(tape, model_in)?;
    let err_true = tape.sub(r, r_true)?;
    let err_true = tape.square(err_true);
    let err_model = tape.sub(r, r_model)?;
    let err_model = tape.square(err_model);
    let both = tape.add(err_true, err_model)?;
    let reward = tape.mean(both);
    let reward = tape.scale(reward, 0.5);

    let mut total = tape.add(transition, reward)?;
    if objective.representation {
        let mut rep = encoder;
        if objective.use_cycle_loss {
            rep = tape.add(rep, kl)?;
            rep = tape.add(rep, reconstruction)?;
        }
        let rep = tape.scale(rep, objective.lambda_rep);
        total = tape.add(total, rep)?;
    }
    Ok((
        bound,
        [transition, encoder, kl, reconstruction, reward, total],
    ))
}

/// Loss values and gradients of the objective for one single-domain batch.
pub fn member_loss<R: Real>(
    member: &DynamicsMember<R>,
    domain: Domain,
    batch: &LossBatch<R>,
    eps: &Tensor<R>,
    objective: Objective,
) -> Result<(LossValues, MemberGrads<R>)> {
    let psi = member.action_encoder(domain)?;
    let mut tape = Tape::new();
    let (bound, vars) = build(&mut tape, member, psi, batch, eps, objective)?;
    let v = |i: usize| tape.value(vars[i]).item().as_f64();
    let values = LossValues {
        transition: v(0),
        encoder: v(1),
        kl: v(2),
        reconstruction: v(3),
        reward: v(4),
        total: v(5),
    };
    let g = tape.backward(vars[5])?;
    let grads = MemberGrads {
        state_encoder: bound.encoder.grads(&g),
        action_encoder: bound.action_encoder.grads(&g),
        transition: bound.transition.grads(&g),
        reward_head: bound.reward.grads(&g),
    };
    Ok((values, grads))
}

/// Loss values only.
pub fn member_loss_values<R: Real>(
    member: &DynamicsMember<R>,
    domain: Domain,
    batch: &LossBatch<R>,
    eps: &Tensor<R>,
    objective: Objective,
) -> Result<LossValues> {
    member_loss(member, domain, batch, eps, objective).map(|(v, _)| v)
}

/// Closed-form KL of a diagonal Gaussian to N(0, I), averaged over rows.
pub fn gaussian_kl(mu: &Tensor<f64>, sigma: &Tensor<f64>) -> f64 {
    let n = mu.rows().max(1) as f64;
    let total: f64 = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| m * m + s * s - (s * s).ln() - 1.0)
        .sum();
    0.5 * total / n
}
