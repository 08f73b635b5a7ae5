use crate::data::{DatasetMeta, Domain, Normalizer, TransitionDataset};
use crate::error::{Error, Result};
use crate::math::{Rng, Tensor};

/// A sampled mini-batch in row-major tensors. Domain tags stay per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Tensor<f32>,
    pub actions: Tensor<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Tensor<f32>,
    pub dones: Vec<bool>,
    pub domains: Vec<Domain>,
}

impl Batch {
    pub fn empty(state_dim: usize, action_dim: usize) -> Self {
        Self {
            states: Tensor::zeros(0, state_dim),
            actions: Tensor::zeros(0, action_dim),
            rewards: Vec::new(),
            next_states: Tensor::zeros(0, state_dim),
            dones: Vec::new(),
            domains: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.domains.iter().filter(|&&d| d == domain).count()
    }

    /// Gathers `indices` of `ds` into a batch.
    pub fn gather(ds: &TransitionDataset, indices: &[usize]) -> Self {
        let (sd, ad) = (ds.state_dim(), ds.action_dim());
        let mut states = Vec::with_capacity(indices.len() * sd);
        let mut actions = Vec::with_capacity(indices.len() * ad);
        let mut next_states = Vec::with_capacity(indices.len() * sd);
        let mut rewards = Vec::with_capacity(indices.len());
        let mut dones = Vec::with_capacity(indices.len());
        for &i in indices {
            states.extend_from_slice(ds.state(i));
            actions.extend_from_slice(ds.action(i));
            next_states.extend_from_slice(ds.next_state(i));
            rewards.push(ds.reward(i));
            dones.push(ds.done(i));
        }
        let n = indices.len();
        Self {
            states: Tensor::from_vec(n, sd, states).unwrap(),
            actions: Tensor::from_vec(n, ad, actions).unwrap(),
            rewards,
            next_states: Tensor::from_vec(n, sd, next_states).unwrap(),
            dones,
            domains: vec![ds.domain; n],
        }
    }

    pub fn concat(parts: &[Batch]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of zero batches".into()));
        };
        if parts.iter().any(|p| {
            p.states.cols() != first.states.cols() || p.actions.cols() != first.actions.cols()
        }) {
            return Err(Error::Shape("batches with different dims".into()));
        }
        Ok(Self {
            states: Tensor::concat_rows(&parts.iter().map(|p| &p.states).collect::<Vec<_>>()),
            actions: Tensor::concat_rows(&parts.iter().map(|p| &p.actions).collect::<Vec<_>>()),
            rewards: parts
                .iter()
                .flat_map(|p| p.rewards.iter().copied())
                .collect(),
            next_states: Tensor::concat_rows(
                &parts.iter().map(|p| &p.next_states).collect::<Vec<_>>(),
            ),
            dones: parts.iter().flat_map(|p| p.dones.iter().copied()).collect(),
            domains: parts
                .iter()
                .flat_map(|p| p.domains.iter().copied())
                .collect(),
        })
    }

    /// Rows whose tag is `domain`, in order.
    pub fn filter(&self, domain: Domain) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.domains[i] == domain)
            .collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            states: self.states.select_rows(idx),
            actions: self.actions.select_rows(idx),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.next_states.select_rows(idx),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
        }
    }

    /// Copy with states and next states normalized by `norm`.
    pub fn normalized(&self, norm: &Normalizer) -> Self {
        let mut out = self.clone();
        norm.normalize_rows(out.states.data_mut());
        norm.normalize_rows(out.next_states.data_mut());
        out
    }
}

/// Uniform sampling with replacement, `n` rows from each dataset, concatenated in order.
pub fn sample_batch(parts: &[(&TransitionDataset, usize)], rng: &mut Rng) -> Result<Batch> {
    let Some((first, _)) = parts.first() else {
        return Err(Error::InvalidConfig("no datasets to sample from".into()));
    };
    let mut batches = Vec::with_capacity(parts.len());
    for (ds, n) in parts {
        if *n > 0 && ds.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "requested {n} rows from an empty {} dataset",
                ds.domain
            )));
        }
        let idx: Vec<usize> = (0..*n).map(|_| rng.index(ds.len())).collect();
        batches.push(Batch::gather(ds, &idx));
    }
    if batches.is_empty() {
        return Ok(Batch::empty(first.state_dim(), first.action_dim()));
    }
    Batch::concat(&batches)
}

/// Weighted mixture over several datasets.
#[derive(Debug, Clone)]
pub struct ReplayView<'a> {
    sources: Vec<(&'a TransitionDataset, f64)>,
}

impl<'a> ReplayView<'a> {
    pub fn new(sources: Vec<(&'a TransitionDataset, f64)>) -> Result<Self> {
        if sources.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig(
                "sampling weights must be non-negative".into(),
            ));
        }
        if !sources.iter().any(|(ds, w)| *w > 0.0 && !ds.is_empty()) {
            return Err(Error::InvalidConfig(
                "replay view needs a positive weight on a nonempty dataset".into(),
            ));
        }
        Ok(Self { sources })
    }

    /// Each draw picks a dataset by weight, then a uniform row.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        let total: f64 = self
            .sources
            .iter()
            .filter(|(ds, _)| !ds.is_empty())
            .map(|(_, w)| w)
            .sum();
        let mut rows: Vec<Batch> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut pick = rng.uniform() * total;
            let mut chosen = None;
            for (ds, w) in self.sources.iter().filter(|(ds, _)| !ds.is_empty()) {
                chosen = Some(*ds);
                if pick < *w {
                    break;
                }
                pick -= w;
            }
            let ds = chosen.expect("validated nonempty");
            rows.push(Batch::gather(ds, &[rng.index(ds.len())]));
        }
        if rows.is_empty() {
            let ds = self.sources[0].0;
            return Ok(Batch::empty(ds.state_dim(), ds.action_dim()));
        }
        Batch::concat(&rows)
    }
}

/// Bounded FIFO of model rollouts; once full, the oldest row is overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: TransitionDataset,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        let meta = DatasetMeta {
            env_id: String::new(),
            shift_kind: String::new(),
            shift_level: String::new(),
            behavior: "model".into(),
        };
        Self {
            data: TransitionDataset::new(meta, Domain::Fake, state_dim, action_dim),
            capacity: capacity.max(1),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, s: &[f32], a: &[f32], r: f32, s_next: &[f32], done: bool) -> Result<()> {
        if self.data.len() < self.capacity {
            self.data.push(s, a, r, s_next, done)
        } else {
            if !r.is_finite() {
                return Err(Error::NumericalFault(format!("non-finite reward {r}")));
            }
            self.data.overwrite(self.head, s, a, r, s_next, done);
            self.head = (self.head + 1) % self.capacity;
            Ok(())
        }
    }

    pub fn push_batch(&mut self, batch: &Batch) -> Result<()> {
        for i in 0..batch.len() {
            self.push(
                batch.states.row_slice(i),
                batch.actions.row_slice(i),
                batch.rewards[i],
                batch.next_states.row_slice(i),
                batch.dones[i],
            )?;
        }
        Ok(())
    }

    pub fn as_dataset(&self) -> &TransitionDataset {
        &self.data
    }
}
