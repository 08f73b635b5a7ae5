use std::fmt;
use std::str::FromStr;

use crate::data::{sample_batch, Batch, Domain, Normalizer, ReplayView, TransitionDataset};
use crate::dynamics::ensemble::DynamicsEnsemble;
use crate::dynamics::loss::{member_loss, LossBatch, LossValues, Objective};
use crate::dynamics::member::{latent_noise, DynamicsMember};
use crate::error::{Error, Result};
use crate::math::{AdamState, Rng, Tensor, DEFAULT_LEARNING_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DynMode {
    /// Separate source/target action encoders with the full representation objective.
    Mobody,
    TargetOnly,
    Combined,
    PretrainFinetune,
}

impl DynMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DynMode::Mobody => "mobody",
            DynMode::TargetOnly => "target_only",
            DynMode::Combined => "combined",
            DynMode::PretrainFinetune => "pretrain_finetune",
        }
    }

    pub fn all() -> [DynMode; 4] {
        [
            DynMode::Mobody,
            DynMode::TargetOnly,
            DynMode::Combined,
            DynMode::PretrainFinetune,
        ]
    }
}

impl fmt::Display for DynMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DynMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DynMode::all()
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown dynamics mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynTrainConfig {
    pub mode: DynMode,
    /// Gradient steps per member.
    pub steps: usize,
    /// Every `target_every`-th step (starting at 0) draws a target batch.
    pub target_every: usize,
    pub lambda_rep: f64,
    pub use_cycle_loss: bool,
    pub batch_size: usize,
    pub lr: f64,
    /// Loss history stride.
    pub log_every: usize,
}

impl Default for DynTrainConfig {
    fn default() -> Self {
        Self {
            mode: DynMode::Mobody,
            steps: 10_000,
            target_every: 2,
            lambda_rep: 1.0,
            use_cycle_loss: true,
            batch_size: 128,
            lr: DEFAULT_LEARNING_RATE,
            log_every: 100,
        }
    }
}

impl DynTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_every == 0 {
            return Err(Error::InvalidConfig(
                "target frequency K must be >= 1".into(),
            ));
        }
        if !(self.lambda_rep >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_rep must be >= 0, got {}",
                self.lambda_rep
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || self.log_every == 0 {
            return Err(Error::InvalidConfig(
                "batch size, learning rate and log stride must be positive".into(),
            ));
        }
        Ok(())
    }

    fn objective(&self) -> Objective {
        match self.mode {
            DynMode::Mobody => Objective {
                representation: true,
                use_cycle_loss: self.use_cycle_loss,
                lambda_rep: self.lambda_rep,
            },
            _ => Objective::baseline(self.lambda_rep),
        }
    }
}

/// Domain of the batch drawn at each of `steps` alternating-schedule steps.
pub fn target_schedule(steps: usize, k: usize) -> Vec<Domain> {
    (0..steps)
        .map(|i| {
            if i % k.max(1) == 0 {
                Domain::Trg
            } else {
                Domain::Src
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynLossRecord {
    pub member: usize,
    pub step: usize,
    pub domain: Domain,
    pub values: LossValues,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynHistory {
    pub records: Vec<DynLossRecord>,
}

impl DynHistory {
    pub fn last(&self, member: usize) -> Option<&DynLossRecord> {
        self.records.iter().rev().find(|r| r.member == member)
    }
}

/// Source-state statistics shared by every network; target data only
/// stands in when there is no source data.
pub fn fit_normalizer(src: &TransitionDataset, trg: &TransitionDataset) -> Normalizer {
    let ds = if src.is_empty() { trg } else { src };
    Normalizer::fit(ds.states(), ds.state_dim())
}

#[derive(Debug, Clone, Copy)]
enum Draw {
    Src,
    Trg,
    Union,
}

struct Optimizers {
    encoder: AdamState,
    psi_src: AdamState,
    psi_trg: AdamState,
    transition: AdamState,
    reward: AdamState,
}

impl Optimizers {
    fn new(m: &DynamicsMember, lr: f64) -> Self {
        Self {
            encoder: AdamState::new(&m.state_encoder.params(), lr),
            psi_src: AdamState::new(&m.action_encoder_src.params(), lr),
            psi_trg: AdamState::new(&m.action_encoder_trg.params(), lr),
            transition: AdamState::new(&m.transition.params(), lr),
            reward: AdamState::new(&m.reward_head.params(), lr),
        }
    }
}

fn step(
    member: &mut DynamicsMember,
    opt: &mut Optimizers,
    domain: Domain,
    batch: &Batch,
    objective: Objective,
    rng: &mut Rng,
) -> Result<LossValues> {
    let lb = LossBatch::from_batch(member, batch)?;
    let eps: Tensor<f32> = latent_noise(lb.len(), member.arch.latent_dim, rng);
    let (values, g) = member_loss(member, domain, &lb, &eps, objective)?;
    if !values.total.is_finite() {
        return Err(Error::NumericalFault(format!(
            "dynamics loss became {}",
            values.total
        )));
    }
    opt.encoder
        .step(member.state_encoder.params_mut(), &g.state_encoder)?;
    opt.transition
        .step(member.transition.params_mut(), &g.transition)?;
    opt.reward
        .step(member.reward_head.params_mut(), &g.reward_head)?;
    if domain == Domain::Trg && !member.shared_action_encoder {
        opt.psi_trg
            .step(member.action_encoder_trg.params_mut(), &g.action_encoder)?;
    } else {
        opt.psi_src
            .step(member.action_encoder_src.params_mut(), &g.action_encoder)?;
    }
    Ok(values)
}

/// Trains one member in place and returns its loss history.
pub fn train_member(
    member: &mut DynamicsMember,
    index: usize,
    src: &TransitionDataset,
    trg: &TransitionDataset,
    cfg: &DynTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<DynLossRecord>> {
    cfg.validate()?;
    if trg.is_empty() {
        return Err(Error::EmptyDataset("target dataset".into()));
    }
    if cfg.mode != DynMode::TargetOnly && src.is_empty() {
        return Err(Error::EmptyDataset("source dataset".into()));
    }
    for ds in [src, trg] {
        if ds.state_dim() != member.arch.state_dim || ds.action_dim() != member.arch.action_dim {
            return Err(Error::Shape(format!(
                "dataset dims {}/{} do not match model {}/{}",
                ds.state_dim(),
                ds.action_dim(),
                member.arch.state_dim,
                member.arch.action_dim
            )));
        }
    }
    let mut history = Vec::new();
    if cfg.steps == 0 {
        return Ok(history);
    }
    member.shared_action_encoder = cfg.mode != DynMode::Mobody;
    let objective = cfg.objective();
    let mut opt = Optimizers::new(member, cfg.lr);
    let n = cfg.batch_size;

    let plan: Vec<Draw> = match cfg.mode {
        DynMode::Mobody => target_schedule(cfg.steps, cfg.target_every)
            .into_iter()
            .map(|d| {
                if d == Domain::Trg {
                    Draw::Trg
                } else {
                    Draw::Src
                }
            })
            .collect(),
        DynMode::TargetOnly => vec![Draw::Trg; cfg.steps],
        DynMode::Combined => vec![Draw::Union; cfg.steps],
        DynMode::PretrainFinetune => {
            let mut p = vec![Draw::Src; cfg.steps];
            p.extend(std::iter::repeat(Draw::Trg).take(cfg.steps / 10));
            p
        }
    };
    let union = ReplayView::new(vec![(src, src.len() as f64), (trg, trg.len() as f64)])?;
    for (i, &which) in plan.iter().enumerate() {
        let (batch, domain) = match which {
            Draw::Src => (sample_batch(&[(src, n)], rng)?, Domain::Src),
            Draw::Trg => (sample_batch(&[(trg, n)], rng)?, Domain::Trg),
            // mixed batch; the single shared encoder makes the tag irrelevant
            Draw::Union => (union.sample(n, rng)?, Domain::Src),
        };
        let values = step(member, &mut opt, domain, &batch, objective, rng)
            .map_err(|e| e.in_stage("dynamics"))?;
        if i % cfg.log_every == 0 || i + 1 == plan.len() {
            history.push(DynLossRecord {
                member: index,
                step: i,
                domain,
                values,
            });
        }
    }
    Ok(history)
}

/// Trains every member independently, each with its own forked stream.
pub fn train_dynamics(
    ensemble: &mut DynamicsEnsemble,
    src: &TransitionDataset,
    trg: &TransitionDataset,
    cfg: &DynTrainConfig,
    rng: &mut Rng,
) -> Result<DynHistory> {
    let mut history = DynHistory::default();
    let mut streams: Vec<Rng> = (0..ensemble.members.len()).map(|_| rng.fork()).collect();
    for (i, (member, stream)) in ensemble.members.iter_mut().zip(&mut streams).enumerate() {
        history
            .records
            .extend(train_member(member, i, src, trg, cfg, stream)?);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;
    use crate::dynamics::member::DynamicsArch;

    #[test]
    fn schedule_k2() {
        let s = target_schedule(10, 2);
        let trg: Vec<usize> = (0..10).filter(|&i| s[i] == Domain::Trg).collect();
        assert_eq!(trg, vec![0, 2, 4, 6, 8]);
        assert!(target_schedule(5, 1).iter().all(|&d| d == Domain::Trg));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in DynMode::all() {
            assert_eq!(m.as_str().parse::<DynMode>().unwrap(), m);
        }
        assert!("mopo".parse::<DynMode>().is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = DynTrainConfig {
            target_every: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.target_every = 1;
        cfg.lambda_rep = -1.0;
        assert!(cfg.validate().is_err());
    }

    fn toy(domain: Domain, n: usize, seed: u64) -> TransitionDataset {
        let meta = DatasetMeta {
            env_id: "toy".into(),
            shift_kind: if domain == Domain::Src {
                "none"
            } else {
                "gravity"
            }
            .into(),
            shift_level: "1".into(),
            behavior: "random".into(),
        };
        let mut ds = TransitionDataset::new(meta, domain, 2, 1);
        let mut rng = Rng::new(seed);
        for _ in 0..n {
            let s = [
                rng.uniform_range(-1.0, 1.0) as f32,
                rng.uniform_range(-1.0, 1.0) as f32,
            ];
            let a = [rng.uniform_range(-1.0, 1.0) as f32];
            let s2 = [0.9 * s[0] + 0.1 * s[1], 0.8 * s[1] + 0.3 * a[0]];
            ds.push(&s, &a, s[0], &s2, false).unwrap();
        }
        ds
    }

    fn small_ensemble(
        members: usize,
        src: &TransitionDataset,
        trg: &TransitionDataset,
    ) -> DynamicsEnsemble {
        let arch = DynamicsArch::new(2, 1).with_hidden(16);
        DynamicsEnsemble::new(
            arch,
            fit_normalizer(src, trg),
            members,
            1.0,
            &mut Rng::new(0),
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_leave_ensemble_unchanged() {
        let (src, trg) = (toy(Domain::Src, 50, 1), toy(Domain::Trg, 10, 2));
        for mode in DynMode::all() {
            let mut ens = small_ensemble(2, &src, &trg);
            let before = ens.clone();
            let cfg = DynTrainConfig {
                mode,
                steps: 0,
                ..Default::default()
            };
            let h = train_dynamics(&mut ens, &src, &trg, &cfg, &mut Rng::new(3)).unwrap();
            assert!(h.records.is_empty());
            assert_eq!(ens, before);
        }
    }

    #[test]
    fn empty_target_rejected() {
        let src = toy(Domain::Src, 50, 1);
        let trg = toy(Domain::Trg, 0, 2);
        for mode in DynMode::all() {
            let mut ens = small_ensemble(1, &src, &src);
            let cfg = DynTrainConfig {
                mode,
                steps: 5,
                ..Default::default()
            };
            let err = train_dynamics(&mut ens, &src, &trg, &cfg, &mut Rng::new(0)).unwrap_err();
            assert!(matches!(err, Error::EmptyDataset(_)), "{err}");
        }
    }

    #[test]
    fn training_steps_only_active_action_encoder() {
        let (src, trg) = (toy(Domain::Src, 50, 1), toy(Domain::Trg, 10, 2));
        let mut ens = small_ensemble(1, &src, &trg);
        let before = ens.members[0].clone();
        // K larger than the step count: only step 0 touches the target encoder
        let cfg = DynTrainConfig {
            steps: 1,
            target_every: 5,
            ..Default::default()
        };
        train_dynamics(&mut ens, &src, &trg, &cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(ens.members[0].action_encoder_src, before.action_encoder_src);
        assert_ne!(ens.members[0].action_encoder_trg, before.action_encoder_trg);
    }

    #[test]
    fn baselines_share_one_encoder() {
        let (src, trg) = (toy(Domain::Src, 50, 1), toy(Domain::Trg, 10, 2));
        for mode in [
            DynMode::TargetOnly,
            DynMode::Combined,
            DynMode::PretrainFinetune,
        ] {
            let mut ens = small_ensemble(1, &src, &trg);
            let before = ens.members[0].clone();
            let cfg = DynTrainConfig {
                mode,
                steps: 20,
                ..Default::default()
            };
            let h = train_dynamics(&mut ens, &src, &trg, &cfg, &mut Rng::new(0)).unwrap();
            let m = &ens.members[0];
            assert!(m.shared_action_encoder);
            assert_eq!(m.action_encoder_trg, before.action_encoder_trg);
            assert_ne!(m.action_encoder_src, before.action_encoder_src);
            let expected_last = if mode == DynMode::PretrainFinetune {
                21
            } else {
                19
            };
            assert_eq!(h.last(0).unwrap().step, expected_last);
        }
    }
}
