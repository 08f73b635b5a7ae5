//! Independent f64 reference implementations of every training loss, plus a
//! central finite-difference driver. Nothing here goes through the tape.
#![allow(dead_code)]

use mobody::data::{Batch, Domain, Normalizer};
use mobody::dynamics::{
    member_loss, DynamicsArch, DynamicsMember, LossBatch, MemberGrads, Objective,
};
use mobody::math::{Mlp, Rng, Tensor};
use mobody::policy::{PolicyAgent, WeightMode, NOISE_CLIP, Q_SCALE_FLOOR, WEIGHT_CLAMP};

pub const FD_EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
/// Denominator floor so that exactly-zero gradients (dead ReLUs) compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const BATCH: usize = 8;
pub const PICKS: usize = 20;

pub type Rows = Vec<Vec<f64>>;

pub fn rows<R: mobody::math::Real>(t: &Tensor<R>) -> Rows {
    (0..t.rows())
        .map(|r| t.row_slice(r).iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// ReLU hidden layers, linear output, written as plain loops.
pub fn mlp(net: &Mlp<f64>, x: &[Vec<f64>]) -> Rows {
    let last = net.weights().len() - 1;
    x.iter()
        .map(|row| {
            let mut h = row.clone();
            for (l, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
                h = (0..w.rows())
                    .map(|o| {
                        let v =
                            b.data()[o] + (0..w.cols()).map(|i| w.get(o, i) * h[i]).sum::<f64>();
                        if l < last {
                            v.max(0.0)
                        } else {
                            v
                        }
                    })
                    .collect();
            }
            h
        })
        .collect()
}

pub fn cat(parts: &[&Rows]) -> Rows {
    (0..parts[0].len())
        .map(|i| parts.iter().flat_map(|p| p[i].iter().copied()).collect())
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

/// One scalar parameter: network index, tensor index in `Mlp::params` order, flat entry.
#[derive(Debug, Clone, Copy)]
pub struct Pick {
    pub net: usize,
    pub tensor: usize,
    pub index: usize,
}

/// `count` parameters drawn uniformly over every scalar of the listed networks.
pub fn pick_params(nets: &[(usize, &Mlp<f64>)], count: usize, rng: &mut Rng) -> Vec<Pick> {
    let slots: Vec<(usize, usize, usize)> = nets
        .iter()
        .flat_map(|&(n, net)| {
            net.params()
                .into_iter()
                .enumerate()
                .map(move |(t, p)| (n, t, p.len()))
        })
        .collect();
    let total: usize = slots.iter().map(|s| s.2).sum();
    (0..count)
        .map(|_| {
            let mut k = rng.index(total);
            for &(net, tensor, len) in &slots {
                if k < len {
                    return Pick {
                        net,
                        tensor,
                        index: k,
                    };
                }
                k -= len;
            }
            unreachable!()
        })
        .collect()
}

pub fn central_diff<M: Clone>(
    model: &M,
    pick: Pick,
    net_mut: fn(&mut M, usize) -> &mut Mlp<f64>,
    f: impl Fn(&M) -> f64,
) -> f64 {
    let shifted = |h: f64| {
        let mut m = model.clone();
        net_mut(&mut m, pick.net).params_mut()[pick.tensor].data_mut()[pick.index] += h;
        f(&m)
    };
    (shifted(FD_EPS) - shifted(-FD_EPS)) / (2.0 * FD_EPS)
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub loss: &'static str,
    pub max_rel: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.checked > 0 && self.max_rel <= REL_TOL
    }
}

pub fn compare(
    loss: &'static str,
    picks: &[Pick],
    analytic: impl Fn(Pick) -> f64,
    fd: impl Fn(Pick) -> f64,
) -> GradReport {
    let max_rel = picks
        .iter()
        .map(|&p| rel_err(analytic(p), fd(p)))
        .fold(0.0, f64::max);
    GradReport {
        loss,
        max_rel,
        checked: picks.len(),
    }
}

// ---- dynamics ----

pub fn member_net(m: &mut DynamicsMember<f64>, i: usize) -> &mut Mlp<f64> {
    m.nets_mut().into_iter().nth(i).unwrap()
}

pub const NET_ENCODER: usize = 0;
pub const NET_PSI_SRC: usize = 1;
pub const NET_PSI_TRG: usize = 2;
pub const NET_TRANSITION: usize = 3;
pub const NET_REWARD: usize = 4;

pub fn psi_net(domain: Domain) -> usize {
    if domain == Domain::Trg {
        NET_PSI_TRG
    } else {
        NET_PSI_SRC
    }
}

pub fn random_rows(n: usize, c: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_vec(n, c, (0..n * c).map(|_| rng.normal()).collect()).unwrap()
}

pub struct DynCase {
    pub member: DynamicsMember<f64>,
    pub domain: Domain,
    pub batch: LossBatch<f64>,
    pub eps: Tensor<f64>,
}

pub fn dyn_case(seed: u64, domain: Domain) -> DynCase {
    let arch = DynamicsArch {
        state_dim: 3,
        action_dim: 2,
        latent_dim: 4,
        encoder_hidden: vec![10],
        action_encoder_hidden: vec![6],
        transition_hidden: vec![10],
        reward_hidden: vec![8],
    };
    let mut rng = Rng::new(seed);
    let member = DynamicsMember::new(arch, Normalizer::identity(3), &mut rng).unwrap();
    let batch = LossBatch {
        states: random_rows(BATCH, 3, &mut rng),
        actions: random_rows(BATCH, 2, &mut rng),
        rewards: random_rows(BATCH, 1, &mut rng),
        next_states: random_rows(BATCH, 3, &mut rng),
    };
    let eps = random_rows(BATCH, 4, &mut rng);
    DynCase {
        member,
        domain,
        batch,
        eps,
    }
}

struct DynForward {
    mu: Rows,
    log_std: Rows,
    z: Rows,
    z_sa: Rows,
    pred: Rows,
}

fn encode(m: &DynamicsMember<f64>, s: &Rows) -> (Rows, Rows) {
    let d = m.arch.latent_dim;
    let out = mlp(&m.state_encoder, s);
    let mu = out.iter().map(|r| r[..d].to_vec()).collect();
    let log_std = out
        .iter()
        .map(|r| r[d..].iter().map(|v| v.clamp(-20.0, 2.0)).collect())
        .collect();
    (mu, log_std)
}

fn dyn_forward(c: &DynCase, m: &DynamicsMember<f64>) -> DynForward {
    let s = rows(&c.batch.states);
    let (mu, log_std) = encode(m, &s);
    let eps = rows(&c.eps);
    let z: Rows = (0..s.len())
        .map(|i| {
            (0..mu[i].len())
                .map(|j| mu[i][j] + log_std[i][j].exp() * eps[i][j])
                .collect()
        })
        .collect();
    let psi = if c.domain == Domain::Trg {
        &m.action_encoder_trg
    } else {
        &m.action_encoder_src
    };
    let delta = mlp(psi, &cat(&[&z, &rows(&c.batch.actions)]));
    let z_sa: Rows = z
        .iter()
        .zip(&delta)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let pred = mlp(&m.transition, &z_sa);
    DynForward {
        mu,
        log_std,
        z,
        z_sa,
        pred,
    }
}

/// Values behind stop-gradients, taken once at the base parameters.
pub struct DynFrozen {
    next_mu: Rows,
    pred: Rows,
}

pub fn dyn_frozen(c: &DynCase) -> DynFrozen {
    DynFrozen {
        next_mu: encode(&c.member, &rows(&c.batch.next_states)).0,
        pred: dyn_forward(c, &c.member).pred,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DynTerms {
    pub transition: f64,
    pub encoder: f64,
    pub kl: f64,
    pub reconstruction: f64,
    pub reward: f64,
}

/// Every loss term of `m` on the case's batch. With `frozen`, the encoder
/// target and the model-next-state reward input are held fixed; without it
/// they move with the parameters.
pub fn dyn_terms(c: &DynCase, m: &DynamicsMember<f64>, frozen: Option<&DynFrozen>) -> DynTerms {
    let f = dyn_forward(c, m);
    let s = rows(&c.batch.states);
    let a = rows(&c.batch.actions);
    let s2 = rows(&c.batch.next_states);
    let r = rows(&c.batch.rewards);
    let n = s.len();
    let live_next_mu;
    let next_mu = match frozen {
        Some(fz) => &fz.next_mu,
        None => {
            live_next_mu = encode(m, &s2).0;
            &live_next_mu
        }
    };
    let model_next = frozen.map_or(&f.pred, |fz| &fz.pred);
    let recon = mlp(&m.transition, &f.z);
    let r_true = mlp(&m.reward_head, &cat(&[&s, &a, &s2]));
    let r_model = mlp(&m.reward_head, &cat(&[&s, &a, model_next]));
    DynTerms {
        transition: mean((0..n).map(|i| sq_dist(&s2[i], &f.pred[i]))),
        encoder: mean((0..n).map(|i| sq_dist(&next_mu[i], &f.z_sa[i]))),
        kl: 0.5
            * mean((0..n).map(|i| {
                f.mu[i]
                    .iter()
                    .zip(&f.log_std[i])
                    .map(|(m, ls)| m * m + (2.0 * ls).exp() - 2.0 * ls - 1.0)
                    .sum()
            })),
        reconstruction: mean((0..n).map(|i| sq_dist(&s[i], &recon[i]).sqrt())),
        reward: 0.5 * mean((0..n).map(|i| (r[i][0] - r_true[i][0]).powi(2)))
            + 0.5 * mean((0..n).map(|i| (r[i][0] - r_model[i][0]).powi(2))),
    }
}

const PLAIN: Objective = Objective {
    representation: false,
    use_cycle_loss: false,
    lambda_rep: 1.0,
};
const WITH_ENCODER: Objective = Objective {
    representation: true,
    use_cycle_loss: false,
    lambda_rep: 1.0,
};
const FULL: Objective = Objective {
    representation: true,
    use_cycle_loss: true,
    lambda_rep: 1.0,
};

fn grads_of(c: &DynCase, obj: Objective) -> MemberGrads<f64> {
    member_loss(&c.member, c.domain, &c.batch, &c.eps, obj)
        .unwrap()
        .1
}

fn grad_entry(g: &MemberGrads<f64>, p: Pick) -> f64 {
    let net = match p.net {
        NET_ENCODER => &g.state_encoder,
        NET_PSI_SRC | NET_PSI_TRG => &g.action_encoder,
        NET_TRANSITION => &g.transition,
        _ => &g.reward_head,
    };
    net[p.tensor].data()[p.index]
}

/// Analytic gradient of each term, isolated by differencing objectives: the
/// reward head only sees the reward loss, the plain objective is transition
/// plus reward, and each representation flag adds exactly one term.
pub struct TermGrads {
    plain: MemberGrads<f64>,
    encoder: MemberGrads<f64>,
    full: MemberGrads<f64>,
}

impl TermGrads {
    pub fn new(c: &DynCase) -> Self {
        Self {
            plain: grads_of(c, PLAIN),
            encoder: grads_of(c, WITH_ENCODER),
            full: grads_of(c, FULL),
        }
    }

    pub fn transition(&self, p: Pick) -> f64 {
        grad_entry(&self.plain, p)
    }

    pub fn reward(&self, p: Pick) -> f64 {
        grad_entry(&self.plain, p)
    }

    pub fn encoder(&self, p: Pick) -> f64 {
        grad_entry(&self.encoder, p) - grad_entry(&self.plain, p)
    }

    pub fn cycle(&self, p: Pick) -> f64 {
        grad_entry(&self.full, p) - grad_entry(&self.encoder, p)
    }

    pub fn total(&self, p: Pick) -> f64 {
        grad_entry(&self.full, p)
    }
}

fn dyn_picks(c: &DynCase, nets: &[usize], seed: u64) -> Vec<Pick> {
    let all = c.member.nets();
    let chosen: Vec<(usize, &Mlp<f64>)> = nets.iter().map(|&i| (i, all[i])).collect();
    pick_params(&chosen, PICKS, &mut Rng::with_stream(seed, 99))
}

fn dyn_fd(
    c: &DynCase,
    p: Pick,
    term: impl Fn(&DynTerms) -> f64,
    frozen: Option<&DynFrozen>,
) -> f64 {
    central_diff(&c.member, p, member_net, |m| term(&dyn_terms(c, m, frozen)))
}

pub fn transition_check(seed: u64, domain: Domain) -> GradReport {
    let c = dyn_case(seed, domain);
    let g = TermGrads::new(&c);
    let picks = dyn_picks(&c, &[NET_ENCODER, psi_net(domain), NET_TRANSITION], seed);
    compare(
        "transition",
        &picks,
        |p| g.transition(p),
        |p| dyn_fd(&c, p, |t| t.transition, None),
    )
}

pub fn encoder_check(seed: u64, domain: Domain) -> GradReport {
    let c = dyn_case(seed, domain);
    let g = TermGrads::new(&c);
    let fz = dyn_frozen(&c);
    let picks = dyn_picks(&c, &[NET_ENCODER, psi_net(domain)], seed);
    compare(
        "encoder",
        &picks,
        |p| g.encoder(p),
        |p| dyn_fd(&c, p, |t| t.encoder, Some(&fz)),
    )
}

pub fn cycle_check(seed: u64) -> GradReport {
    let c = dyn_case(seed, Domain::Src);
    let g = TermGrads::new(&c);
    let picks = dyn_picks(&c, &[NET_ENCODER, NET_TRANSITION], seed);
    compare(
        "cycle",
        &picks,
        |p| g.cycle(p),
        |p| dyn_fd(&c, p, |t| t.kl + t.reconstruction, None),
    )
}

pub fn reward_check(seed: u64, domain: Domain) -> GradReport {
    let c = dyn_case(seed, domain);
    let g = TermGrads::new(&c);
    let fz = dyn_frozen(&c);
    let picks = dyn_picks(&c, &[NET_REWARD], seed);
    compare(
        "reward",
        &picks,
        |p| g.reward(p),
        |p| dyn_fd(&c, p, |t| t.reward, Some(&fz)),
    )
}

/// Whole objective with every stop-gradient honoured, over all active networks.
pub fn total_check(seed: u64, domain: Domain) -> GradReport {
    let c = dyn_case(seed, domain);
    let g = TermGrads::new(&c);
    let fz = dyn_frozen(&c);
    let nets = [NET_ENCODER, psi_net(domain), NET_TRANSITION, NET_REWARD];
    let picks = dyn_picks(&c, &nets, seed);
    compare(
        "total",
        &picks,
        |p| g.total(p),
        |p| {
            dyn_fd(
                &c,
                p,
                |t| t.transition + t.reward + t.encoder + t.kl + t.reconstruction,
                Some(&fz),
            )
        },
    )
}

/// The encoder term's state-encoder gradient against finite differences with
/// the next-state branch frozen, and the largest disagreement with the
/// unfrozen finite difference (large when the stop-gradient matters).
pub fn stop_gradient_check(seed: u64) -> (GradReport, f64) {
    let c = dyn_case(seed, Domain::Trg);
    let g = TermGrads::new(&c);
    let fz = dyn_frozen(&c);
    let picks = dyn_picks(&c, &[NET_ENCODER], seed);
    let frozen = compare(
        "encoder (phi_E)",
        &picks,
        |p| g.encoder(p),
        |p| dyn_fd(&c, p, |t| t.encoder, Some(&fz)),
    );
    let live = compare(
        "encoder (phi_E, live)",
        &picks,
        |p| g.encoder(p),
        |p| dyn_fd(&c, p, |t| t.encoder, None),
    );
    (frozen, live.max_rel)
}

// ---- policy ----

pub fn agent_net(a: &mut PolicyAgent<f64>, i: usize) -> &mut Mlp<f64> {
    match i {
        0 => &mut a.actor,
        1 => &mut a.critic1,
        2 => &mut a.critic2,
        _ => panic!("no trainable net {i}"),
    }
}

pub fn random_batch(n: usize, sd: usize, ad: usize, rng: &mut Rng) -> Batch {
    let mut t = |c: usize, lo: f64, hi: f64| {
        Tensor::from_vec(
            n,
            c,
            (0..n * c)
                .map(|_| rng.uniform_range(lo, hi) as f32)
                .collect(),
        )
        .unwrap()
    };
    let states = t(sd, -2.0, 2.0);
    let actions = t(ad, -1.0, 1.0);
    let next_states = t(sd, -2.0, 2.0);
    let rewards = (0..n).map(|_| rng.normal() as f32).collect();
    let dones = (0..n).map(|i| i % 5 == 4).collect();
    Batch {
        states,
        actions,
        rewards,
        next_states,
        dones,
        domains: vec![Domain::Src; n],
    }
}

pub struct PolicyCase {
    pub agent: PolicyAgent<f64>,
    pub batch: Batch,
    pub bc: Batch,
    pub noise: Tensor<f64>,
}

pub fn policy_case(seed: u64, mode: WeightMode) -> PolicyCase {
    let (sd, ad) = (3, 2);
    let mut rng = Rng::new(seed);
    let normalizer = Normalizer {
        mean: (0..sd)
            .map(|_| rng.uniform_range(-0.5, 0.5) as f32)
            .collect(),
        std: (0..sd)
            .map(|_| rng.uniform_range(0.5, 2.0) as f32)
            .collect(),
    };
    let mut agent = PolicyAgent::<f64>::new(sd, ad, &[10, 10], normalizer, &mut rng).unwrap();
    // independent targets so the bootstrapped branch is not a copy of the online nets
    agent.actor_target = Mlp::new(agent.actor.widths(), &mut rng).unwrap();
    agent.critic1_target = Mlp::new(agent.critic1.widths(), &mut rng).unwrap();
    agent.critic2_target = Mlp::new(agent.critic2.widths(), &mut rng).unwrap();
    agent.weight_mode = mode;
    agent.alpha = 2.5;
    agent.bc_weight = 0.7;
    let batch = random_batch(BATCH, sd, ad, &mut rng);
    let bc = random_batch(BATCH, sd, ad, &mut rng);
    let noise = Tensor::from_vec(
        BATCH,
        ad,
        (0..BATCH * ad).map(|_| 0.4 * rng.normal()).collect(),
    )
    .unwrap();
    PolicyCase {
        agent,
        batch,
        bc,
        noise,
    }
}

fn norm_states(agent: &PolicyAgent<f64>, t: &Tensor<f32>) -> Rows {
    let mut t = t.clone();
    agent.normalizer.normalize_rows(t.data_mut());
    rows(&t)
}

fn tanh_rows(x: Rows) -> Rows {
    x.into_iter()
        .map(|r| r.into_iter().map(f64::tanh).collect())
        .collect()
}

/// `mean[(y - q1)^2 + (y - q2)^2]` with targets from the target networks.
pub fn critic_value(agent: &PolicyAgent<f64>, b: &Batch, noise: &Tensor<f64>) -> f64 {
    let s = norm_states(agent, &b.states);
    let s2 = norm_states(agent, &b.next_states);
    let a = rows(&b.actions);
    let pi2 = tanh_rows(mlp(&agent.actor_target, &s2));
    let noise = rows(noise);
    let a2: Rows = pi2
        .iter()
        .zip(&noise)
        .map(|(p, e)| {
            p.iter()
                .zip(e)
                .map(|(p, e)| (p + e.clamp(-NOISE_CLIP, NOISE_CLIP)).clamp(-1.0, 1.0))
                .collect()
        })
        .collect();
    let sa2 = cat(&[&s2, &a2]);
    let q1t = mlp(&agent.critic1_target, &sa2);
    let q2t = mlp(&agent.critic2_target, &sa2);
    let sa = cat(&[&s, &a]);
    let q1 = mlp(&agent.critic1, &sa);
    let q2 = mlp(&agent.critic2, &sa);
    mean((0..s.len()).map(|i| {
        let cont = if b.dones[i] { 0.0 } else { 1.0 };
        let y = b.rewards[i] as f64 + agent.gamma * cont * q1t[i][0].min(q2t[i][0]);
        (y - q1[i][0]).powi(2) + (y - q2[i][0]).powi(2)
    }))
}

/// λ and per-row BC weights, computed from scratch at the agent's current parameters.
pub fn actor_constants(agent: &PolicyAgent<f64>, batch: &Batch, bc: &Batch) -> (f64, Vec<f64>) {
    let s = norm_states(agent, &batch.states);
    let q = mlp(&agent.critic1, &cat(&[&s, &rows(&batch.actions)]));
    let mean_abs = |q: &Rows| mean(q.iter().map(|r| r[0].abs())).max(Q_SCALE_FLOOR);
    let lambda = agent.alpha / mean_abs(&q);
    let sb = norm_states(agent, &bc.states);
    let q_pi = mlp(
        &agent.critic1,
        &cat(&[&sb, &tanh_rows(mlp(&agent.actor, &sb))]),
    );
    let scale = mean_abs(&q_pi);
    let weights = match agent.weight_mode {
        WeightMode::TargetQ => q_pi
            .iter()
            .map(|r| (r[0] / scale).clamp(-WEIGHT_CLAMP, WEIGHT_CLAMP).exp())
            .collect(),
        WeightMode::Vanilla => vec![1.0; bc.len()],
        WeightMode::None => vec![0.0; bc.len()],
    };
    (lambda, weights)
}

/// Actor loss with λ and the weights held at the given values.
pub fn actor_value(
    agent: &PolicyAgent<f64>,
    batch: &Batch,
    bc: &Batch,
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let s = norm_states(agent, &batch.states);
    let pi = tanh_rows(mlp(&agent.actor, &s));
    let q = mlp(&agent.critic1, &cat(&[&s, &pi]));
    let mut v = -lambda * mean(q.iter().map(|r| r[0]));
    if agent.weight_mode != WeightMode::None {
        let sb = norm_states(agent, &bc.states);
        let pb = tanh_rows(mlp(&agent.actor, &sb));
        let a = rows(&bc.actions);
        v += agent.bc_weight * mean((0..sb.len()).map(|i| weights[i] * sq_dist(&pb[i], &a[i])));
    }
    v
}

pub fn critic_check(seed: u64) -> GradReport {
    let c = policy_case(seed, WeightMode::TargetQ);
    let loss = c.agent.critic_td_loss(&c.batch, &c.noise).unwrap();
    let picks = pick_params(
        &[(1, &c.agent.critic1), (2, &c.agent.critic2)],
        PICKS,
        &mut Rng::with_stream(seed, 98),
    );
    compare(
        "critic",
        &picks,
        |p| {
            let g = if p.net == 1 {
                &loss.grads1
            } else {
                &loss.grads2
            };
            g[p.tensor].data()[p.index]
        },
        |p| {
            central_diff(&c.agent, p, agent_net, |a| {
                critic_value(a, &c.batch, &c.noise)
            })
        },
    )
}

pub fn actor_check(seed: u64, mode: WeightMode) -> GradReport {
    let c = policy_case(seed, mode);
    let loss = c.agent.actor_loss(&c.batch, &c.bc).unwrap();
    let (lambda, weights) = actor_constants(&c.agent, &c.batch, &c.bc);
    let picks = pick_params(
        &[(0, &c.agent.actor)],
        PICKS,
        &mut Rng::with_stream(seed, 97),
    );
    compare(
        "actor",
        &picks,
        |p| loss.grads[p.tensor].data()[p.index],
        |p| {
            central_diff(&c.agent, p, agent_net, |a| {
                actor_value(a, &c.batch, &c.bc, lambda, &weights)
            })
        },
    )
}
