//! Reward augmentation of source transitions from a pair of domain classifiers.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::{sample_batch, Batch, Normalizer, TransitionDataset};
use crate::error::{Error, Result};
use crate::math::{sigmoid, AdamState, Mlp, Real, Rng, Tape, Tensor, DEFAULT_LEARNING_RATE};

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"MBDC";
pub const DEFAULT_ETA: f64 = 0.1;
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DaraConfig {
    pub eta: f64,
    pub steps: usize,
    /// Rows drawn from each domain per step.
    pub batch_size: usize,
    pub prob_floor: f64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub log_every: usize,
}

impl Default for DaraConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            steps: 10_000,
            batch_size: 128,
            prob_floor: PROB_FLOOR,
            lr: DEFAULT_LEARNING_RATE,
            hidden: vec![256, 256],
            log_every: 100,
        }
    }
}

impl DaraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be >= 0, got {}",
                self.eta
            )));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "probability floor must lie in (0, 0.5), got {}",
                self.prob_floor
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || self.log_every == 0 {
            return Err(Error::InvalidConfig(
                "batch size, learning rate and log stride must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic classifiers for p(trg | s, a) and p(trg | s, a, s').
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierPair {
    pub sa_net: Mlp,
    pub sas_net: Mlp,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierRecord {
    pub step: usize,
    pub loss: f64,
    pub sa_accuracy: f64,
    pub sas_accuracy: f64,
}

/// Δr from target probabilities of the two classifiers, each floored before the log.
pub fn delta_r_from_probs(p_sas: f64, p_sa: f64, floor: f64) -> f64 {
    let ln = |p: f64| p.max(floor).ln();
    ln(p_sas) - ln(p_sa) + ln(1.0 - p_sa) - ln(1.0 - p_sas)
}

impl ClassifierPair {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        normalizer: Normalizer,
        rng: &mut Rng,
    ) -> Result<Self> {
        let widths = |input: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(1);
            w
        };
        Ok(Self {
            sa_net: Mlp::new(&widths(state_dim + action_dim), rng)?,
            sas_net: Mlp::new(&widths(2 * state_dim + action_dim), rng)?,
            normalizer,
        })
    }

    fn inputs(&self, batch: &Batch) -> (Tensor<f32>, Tensor<f32>) {
        let b = batch.normalized(&self.normalizer);
        let sa = Tensor::concat_cols(&[&b.states, &b.actions]);
        let sas = Tensor::concat_cols(&[&b.states, &b.actions, &b.next_states]);
        (sa, sas)
    }

    /// Target-domain probabilities `(p_sa, p_sas)` for every row.
    pub fn probabilities(&self, batch: &Batch) -> Result<(Vec<f64>, Vec<f64>)> {
        let (sa, sas) = self.inputs(batch);
        let p = |net: &Mlp, x: &Tensor<f32>| -> Result<Vec<f64>> {
            Ok(net
                .forward_batch(x)?
                .data()
                .iter()
                .map(|&l| sigmoid(l as f64))
                .collect())
        };
        Ok((p(&self.sa_net, &sa)?, p(&self.sas_net, &sas)?))
    }

    pub fn delta_r_batch(&self, batch: &Batch, floor: f64) -> Result<Vec<f64>> {
        let (p_sa, p_sas) = self.probabilities(batch)?;
        Ok(p_sa
            .iter()
            .zip(&p_sas)
            .map(|(&sa, &sas)| delta_r_from_probs(sas, sa, floor))
            .collect())
    }

    pub fn delta_r(&self, s: &[f32], a: &[f32], s_next: &[f32]) -> Result<f64> {
        let batch = Batch {
            states: Tensor::row(s.to_vec()),
            actions: Tensor::row(a.to_vec()),
            rewards: vec![0.0],
            next_states: Tensor::row(s_next.to_vec()),
            dones: vec![false],
            domains: vec![crate::data::Domain::Src],
        };
        Ok(self.delta_r_batch(&batch, PROB_FLOOR)?[0])
    }

    /// Balanced accuracy `(sa, sas)` at threshold 0.5 over both datasets.
    pub fn accuracy(&self, src: &TransitionDataset, trg: &TransitionDataset) -> Result<(f64, f64)> {
        let mut hits = [[0usize; 2]; 2];
        for (ds, label) in [(src, false), (trg, true)] {
            if ds.is_empty() {
                return Err(Error::EmptyDataset(format!("{} dataset", ds.domain)));
            }
            let idx: Vec<usize> = (0..ds.len()).collect();
            for chunk in idx.chunks(1024) {
                let (p_sa, p_sas) = self.probabilities(&Batch::gather(ds, chunk))?;
                for (k, ps) in [p_sa, p_sas].iter().enumerate() {
                    hits[k][label as usize] += ps.iter().filter(|&&p| (p > 0.5) == label).count();
                }
            }
        }
        let acc =
            |h: [usize; 2]| 0.5 * (h[0] as f64 / src.len() as f64 + h[1] as f64 / trg.len() as f64);
        Ok((acc(hits[0]), acc(hits[1])))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            magic: *CLASSIFIER_MAGIC,
            scalars: vec![],
            vectors: vec![self.normalizer.mean.clone(), self.normalizer.std.clone()],
            nets: vec![self.sa_net.clone(), self.sas_net.clone()],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.expect_shape(0, 2, 2)?;
        let mut v = ckpt.vectors.into_iter();
        let mut n = ckpt.nets.into_iter();
        let normalizer = Normalizer {
            mean: v.next().unwrap(),
            std: v.next().unwrap(),
        };
        let (sa_net, sas_net) = (n.next().unwrap(), n.next().unwrap());
        let sd = normalizer.dim();
        if sa_net.output_dim() != 1
            || sas_net.output_dim() != 1
            || sas_net.input_dim() != sa_net.input_dim() + sd
        {
            return Err(Error::format("arch", "classifier shapes are inconsistent"));
        }
        Ok(Self {
            sa_net,
            sas_net,
            normalizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path, CLASSIFIER_MAGIC)?)
    }
}

/// Mean binary cross-entropy of logits against labels, via
/// `softplus(l) - y * l`, plus gradients of both nets.
fn bce_step<R: Real>(
    net: &Mlp<R>,
    x: &Tensor<R>,
    labels: &Tensor<R>,
) -> Result<(f64, Vec<Tensor<R>>, usize)> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let y = tape.constant(labels.clone());
    let logits = bound.forward(&mut tape, xv)?;
    let sp = tape.softplus(logits);
    let yl = tape.mul(y, logits)?;
    let per_row = tape.sub(sp, yl)?;
    let loss = tape.mean(per_row);
    let correct = tape
        .value(logits)
        .data()
        .iter()
        .zip(labels.data())
        .filter(|(l, y)| (**l > R::zero()) == (**y > R::from_f64_lossy(0.5)))
        .count();
    let value = tape.value(loss).item().as_f64();
    let g = tape.backward(loss)?;
    Ok((value, bound.grads(&g), correct))
}

/// Trains both classifiers on balanced batches (target label 1, source label 0).
pub fn train_classifiers(
    pair: &mut ClassifierPair,
    src: &TransitionDataset,
    trg: &TransitionDataset,
    cfg: &DaraConfig,
    rng: &mut Rng,
) -> Result<Vec<ClassifierRecord>> {
    cfg.validate()?;
    for ds in [src, trg] {
        if ds.is_empty() {
            return Err(Error::EmptyDataset(format!("{} dataset", ds.domain)));
        }
    }
    let mut history = Vec::new();
    if cfg.steps == 0 {
        return Ok(history);
    }
    let n = cfg.batch_size;
    let labels = Tensor::from_vec(
        2 * n,
        1,
        (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect(),
    )?;
    let mut opt_sa = AdamState::new(&pair.sa_net.params(), cfg.lr);
    let mut opt_sas = AdamState::new(&pair.sas_net.params(), cfg.lr);
    for step in 0..cfg.steps {
        let batch = sample_batch(&[(src, n), (trg, n)], rng)?;
        let (sa, sas) = pair.inputs(&batch);
        let (l_sa, g_sa, c_sa) = bce_step(&pair.sa_net, &sa, &labels)?;
        let (l_sas, g_sas, c_sas) = bce_step(&pair.sas_net, &sas, &labels)?;
        opt_sa.step(pair.sa_net.params_mut(), &g_sa)?;
        opt_sas.step(pair.sas_net.params_mut(), &g_sas)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            history.push(ClassifierRecord {
                step,
                loss: l_sa + l_sas,
                sa_accuracy: c_sa as f64 / (2 * n) as f64,
                sas_accuracy: c_sas as f64 / (2 * n) as f64,
            });
        }
    }
    Ok(history)
}

/// Copy of `src` with every reward replaced by `r + eta * Δr`.
pub fn augment_source(
    src: &TransitionDataset,
    pair: &ClassifierPair,
    eta: f64,
    floor: f64,
) -> Result<TransitionDataset> {
    if eta == 0.0 {
        return Ok(src.clone());
    }
    let mut delta = Vec::with_capacity(src.len());
    let idx: Vec<usize> = (0..src.len()).collect();
    for chunk in idx.chunks(1024) {
        delta.extend(pair.delta_r_batch(&Batch::gather(src, chunk), floor)?);
    }
    src.map_rewards(|i, r| (r as f64 + eta * delta[i]) as f32)
}
