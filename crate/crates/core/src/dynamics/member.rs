use crate::checkpoint::Checkpoint;
use crate::data::{Domain, Normalizer};
use crate::error::{Error, Result};
use crate::math::{Mlp, Real, Rng, Tensor};

pub const LATENT_DIM: usize = 16;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const MEMBER_MAGIC: &[u8; 4] = b"MBDW";

/// Hidden-layer widths of the four sub-networks of a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicsArch {
    pub state_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub action_encoder_hidden: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
}

impl DynamicsArch {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            latent_dim: LATENT_DIM,
            encoder_hidden: vec![256, 256],
            action_encoder_hidden: vec![32],
            transition_hidden: vec![256, 256],
            reward_hidden: vec![256, 256],
        }
    }

    /// Same layout with every hidden layer replaced by `width` (action encoder untouched).
    pub fn with_hidden(mut self, width: usize) -> Self {
        self.encoder_hidden = vec![width; 2];
        self.transition_hidden = vec![width; 2];
        self.reward_hidden = vec![width; 2];
        self
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend_from_slice(hidden);
        w.push(output);
        w
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        Self::widths(self.state_dim, &self.encoder_hidden, 2 * self.latent_dim)
    }

    pub fn action_encoder_widths(&self) -> Vec<usize> {
        Self::widths(
            self.latent_dim + self.action_dim,
            &self.action_encoder_hidden,
            self.latent_dim,
        )
    }

    pub fn transition_widths(&self) -> Vec<usize> {
        Self::widths(self.latent_dim, &self.transition_hidden, self.state_dim)
    }

    pub fn reward_widths(&self) -> Vec<usize> {
        Self::widths(2 * self.state_dim + self.action_dim, &self.reward_hidden, 1)
    }
}

/// One dynamics model: variational state encoder, per-domain action
/// encoders, shared latent transition decoder and a reward head on `(s, a, s')`.
///
/// Inputs and outputs of the public prediction methods are raw states; the
/// networks themselves work on states normalized by `normalizer`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsMember<R = f32> {
    pub arch: DynamicsArch,
    pub state_encoder: Mlp<R>,
    pub action_encoder_src: Mlp<R>,
    pub action_encoder_trg: Mlp<R>,
    pub transition: Mlp<R>,
    pub reward_head: Mlp<R>,
    pub normalizer: Normalizer,
    /// Baseline modes use one action encoder (`action_encoder_src`) for every domain.
    pub shared_action_encoder: bool,
}

/// Output of a batched prediction, in raw state units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next_states: Tensor<f32>,
    pub rewards: Vec<f32>,
}

impl<R: Real> DynamicsMember<R> {
    pub fn new(arch: DynamicsArch, normalizer: Normalizer, rng: &mut Rng) -> Result<Self> {
        if normalizer.dim() != arch.state_dim {
            return Err(Error::Shape(format!(
                "normalizer has {} dims, state has {}",
                normalizer.dim(),
                arch.state_dim
            )));
        }
        Ok(Self {
            state_encoder: Mlp::new(&arch.encoder_widths(), rng)?,
            action_encoder_src: Mlp::new(&arch.action_encoder_widths(), rng)?,
            action_encoder_trg: Mlp::new(&arch.action_encoder_widths(), rng)?,
            transition: Mlp::new(&arch.transition_widths(), rng)?,
            reward_head: Mlp::new(&arch.reward_widths(), rng)?,
            arch,
            normalizer,
            shared_action_encoder: false,
        })
    }

    /// The action encoder used for `domain`.
    pub fn action_encoder(&self, domain: Domain) -> Result<&Mlp<R>> {
        match domain {
            Domain::Src => Ok(&self.action_encoder_src),
            Domain::Trg if self.shared_action_encoder => Ok(&self.action_encoder_src),
            Domain::Trg => Ok(&self.action_encoder_trg),
            Domain::Fake => Err(Error::UnknownDomain(
                "dynamics are defined for src and trg only".into(),
            )),
        }
    }

    pub fn nets(&self) -> [&Mlp<R>; 5] {
        [
            &self.state_encoder,
            &self.action_encoder_src,
            &self.action_encoder_trg,
            &self.transition,
            &self.reward_head,
        ]
    }

    pub fn nets_mut(&mut self) -> [&mut Mlp<R>; 5] {
        [
            &mut self.state_encoder,
            &mut self.action_encoder_src,
            &mut self.action_encoder_trg,
            &mut self.transition,
            &mut self.reward_head,
        ]
    }

    /// All parameters in declaration order.
    pub fn params(&self) -> Vec<&Tensor<R>> {
        self.nets().into_iter().flat_map(|n| n.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<R>> {
        self.nets_mut()
            .into_iter()
            .flat_map(|n| n.params_mut())
            .collect()
    }

    pub fn cast<S: Real>(&self) -> DynamicsMember<S> {
        DynamicsMember {
            arch: self.arch.clone(),
            state_encoder: self.state_encoder.cast(),
            action_encoder_src: self.action_encoder_src.cast(),
            action_encoder_trg: self.action_encoder_trg.cast(),
            transition: self.transition.cast(),
            reward_head: self.reward_head.cast(),
            normalizer: self.normalizer.clone(),
            shared_action_encoder: self.shared_action_encoder,
        }
    }

    pub(crate) fn normalize(&self, raw: &Tensor<f32>) -> Tensor<R> {
        let mut t = raw.clone();
        self.normalizer.normalize_rows(t.data_mut());
        t.cast()
    }

    /// Mean and clamped log-std of the latent posterior for normalized states.
    pub fn encode(&self, states_norm: &Tensor<R>) -> Result<(Tensor<R>, Tensor<R>)> {
        let out = self.state_encoder.forward_batch(states_norm)?;
        let d = self.arch.latent_dim;
        let mu = out.slice_cols(0, d);
        let lo = R::from_f64_lossy(LOG_STD_MIN);
        let hi = R::from_f64_lossy(LOG_STD_MAX);
        let log_std = out.slice_cols(d, 2 * d).map(|v| v.max(lo).min(hi));
        Ok((mu, log_std))
    }

    /// Next-state prediction for a batch of raw states. `eps` (n x d_z)
    /// reparameterizes the latent; `None` uses the posterior mean.
    pub fn predict_batch(
        &self,
        domain: Domain,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        eps: Option<&Tensor<R>>,
    ) -> Result<Prediction> {
        let psi = self.action_encoder(domain)?;
        if states.cols() != self.arch.state_dim || actions.cols() != self.arch.action_dim {
            return Err(Error::Shape(format!(
                "predict: states {:?}, actions {:?}",
                states.shape(),
                actions.shape()
            )));
        }
        let s_norm = self.normalize(states);
        let (mu, log_std) = self.encode(&s_norm)?;
        let z = match eps {
            None => mu,
            Some(e) => {
                let std = log_std.map(|v| v.exp());
                let noise = std.zip_map(e, |s, n| s * n);
                mu.zip_map(&noise, |m, n| m + n)
            }
        };
        let a = actions.cast::<R>();
        let delta = psi.forward_batch(&Tensor::concat_cols(&[&z, &a]))?;
        let z_sa = z.zip_map(&delta, |x, d| x + d);
        let next_norm = self.transition.forward_batch(&z_sa)?;
        let r = self
            .reward_head
            .forward_batch(&Tensor::concat_cols(&[&s_norm, &a, &next_norm]))?;
        let mut next_states: Tensor<f32> = next_norm.cast();
        self.normalizer.denormalize_rows(next_states.data_mut());
        Ok(Prediction {
            next_states,
            rewards: r.data().iter().map(|v| v.as_f64() as f32).collect(),
        })
    }

    /// Reward head on raw `(s, a, s')` rows.
    pub fn predict_reward(
        &self,
        states: &Tensor<f32>,
        actions: &Tensor<f32>,
        next_states: &Tensor<f32>,
    ) -> Result<Vec<f32>> {
        let s = self.normalize(states);
        let s2 = self.normalize(next_states);
        let a = actions.cast::<R>();
        let r = self
            .reward_head
            .forward_batch(&Tensor::concat_cols(&[&s, &a, &s2]))?;
        Ok(r.data().iter().map(|v| v.as_f64() as f32).collect())
    }

    /// Single-transition prediction. With `sample` the latent is drawn from
    /// the posterior using `rng`; otherwise the posterior mean is used.
    pub fn predict_next(
        &self,
        domain: Domain,
        s: &[f32],
        a: &[f32],
        sample: bool,
        rng: &mut Rng,
    ) -> Result<(Vec<f32>, f32)> {
        let states = Tensor::from_vec(1, s.len(), s.to_vec())?;
        let actions = Tensor::from_vec(1, a.len(), a.to_vec())?;
        let eps = sample.then(|| latent_noise::<R>(1, self.arch.latent_dim, rng));
        let p = self.predict_batch(domain, &states, &actions, eps.as_ref())?;
        Ok((p.next_states.into_vec(), p.rewards[0]))
    }
}

/// Standard normal reparameterization noise, n x d.
pub fn latent_noise<R: Real>(n: usize, d: usize, rng: &mut Rng) -> Tensor<R> {
    let data = (0..n * d)
        .map(|_| R::from_f64_lossy(rng.normal()))
        .collect();
    Tensor::from_vec(n, d, data).unwrap()
}

impl DynamicsMember<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let a = &self.arch;
        Checkpoint {
            magic: *MEMBER_MAGIC,
            scalars: vec![
                a.state_dim as f64,
                a.action_dim as f64,
                a.latent_dim as f64,
                self.shared_action_encoder as u8 as f64,
            ],
            vectors: vec![self.normalizer.mean.clone(), self.normalizer.std.clone()],
            nets: self.nets().into_iter().cloned().collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_shape(4, 2, 5)?;
        let hidden = |net: &Mlp<f32>| net.widths()[1..net.widths().len() - 1].to_vec();
        let arch = DynamicsArch {
            state_dim: ckpt.scalars[0] as usize,
            action_dim: ckpt.scalars[1] as usize,
            latent_dim: ckpt.scalars[2] as usize,
            encoder_hidden: hidden(&ckpt.nets[0]),
            action_encoder_hidden: hidden(&ckpt.nets[1]),
            transition_hidden: hidden(&ckpt.nets[3]),
            reward_hidden: hidden(&ckpt.nets[4]),
        };
        let shapes_ok = ckpt.nets[0].widths() == arch.encoder_widths().as_slice()
            && ckpt.nets[1].widths() == arch.action_encoder_widths().as_slice()
            && ckpt.nets[2].widths() == arch.action_encoder_widths().as_slice()
            && ckpt.nets[3].widths() == arch.transition_widths().as_slice()
            && ckpt.nets[4].widths() == arch.reward_widths().as_slice();
        if !shapes_ok {
            return Err(Error::format("arch", "sub-network widths are inconsistent"));
        }
        let shared = ckpt.scalars[3] != 0.0;
        let mut vectors = ckpt.vectors.into_iter();
        let normalizer = Normalizer {
            mean: vectors.next().unwrap(),
            std: vectors.next().unwrap(),
        };
        let mut nets = ckpt.nets.into_iter();
        Ok(Self {
            arch,
            state_encoder: nets.next().unwrap(),
            action_encoder_src: nets.next().unwrap(),
            action_encoder_trg: nets.next().unwrap(),
            transition: nets.next().unwrap(),
            reward_head: nets.next().unwrap(),
            normalizer,
            shared_action_encoder: shared,
        })
    }
}
