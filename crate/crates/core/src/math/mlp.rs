use crate::error::{Error, Result};
use crate::math::{Gradients, Real, Rng, Tape, Tensor, Var};

/// Fully connected network: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R = f32> {
    widths: Vec<usize>,
    weights: Vec<Tensor<R>>,
    biases: Vec<Tensor<R>>,
}

impl<R: Real> Mlp<R> {
    /// Uniform init in ±1/sqrt(fan_in) for weights and biases.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            let bound = 1.0 / (w.cols() as f64).sqrt();
            for v in w.data_mut().iter_mut().chain(b.data_mut().iter_mut()) {
                *v = R::from_f64_lossy(rng.uniform_range(-bound, bound));
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Shape(format!(
                "layer widths must be >= 2 positive entries, got {widths:?}"
            )));
        }
        let weights = widths
            .windows(2)
            .map(|p| Tensor::zeros(p[1], p[0]))
            .collect();
        let biases = widths.windows(2).map(|p| Tensor::zeros(1, p[1])).collect();
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit layer parameters.
    pub fn from_layers(weights: Vec<Tensor<R>>, biases: Vec<Tensor<R>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape("need one bias per weight matrix".into()));
        }
        let mut widths = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != widths[i] || b.shape() != (1, w.rows()) {
                return Err(Error::Shape(format!(
                    "layer {i}: weight {:?} bias {:?} after width {}",
                    w.shape(),
                    b.shape(),
                    widths[i]
                )));
            }
            widths.push(w.rows());
        }
        Ok(Self {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[Tensor<R>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor<R>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum::<usize>()
            + self.biases.iter().map(Tensor::len).sum::<usize>()
    }

    /// Parameters in declaration order: w0, b0, w1, b1, ...
    pub fn params(&self) -> Vec<&Tensor<R>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<R>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn cast<S: Real>(&self) -> Mlp<S> {
        Mlp {
            widths: self.widths.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
            biases: self.biases.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn forward(&self, x: &[R]) -> Result<Vec<R>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp expects input of length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.forward_batch(&Tensor::row(x.to_vec()))?.into_vec())
    }

    /// Batched forward pass without recording gradients.
    pub fn forward_batch(&self, x: &Tensor<R>) -> Result<Tensor<R>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut out = h.matmul_t(w);
            for r in 0..out.rows() {
                for (o, &bb) in out.row_slice_mut(r).iter_mut().zip(b.data()) {
                    *o += bb;
                    if i < last && *o < R::zero() {
                        *o = R::zero();
                    }
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Registers the parameters on `tape`; `trainable = false` records them as constants.
    pub fn bind(&self, tape: &mut Tape<R>, trainable: bool) -> BoundMlp {
        let mut layers = Vec::with_capacity(self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let (wv, bv) = if trainable {
                (tape.param(w.clone()), tape.param(b.clone()))
            } else {
                (tape.constant(w.clone()), tape.constant(b.clone()))
            };
            layers.push((wv, bv));
        }
        BoundMlp {
            layers,
            shapes: self.params().iter().map(|t| t.shape()).collect(),
        }
    }

    /// Overwrites every parameter with `(1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Self, tau: R) {
        let keep = R::one() - tau;
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = keep * *d + tau * s;
            }
        }
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    shapes: Vec<(usize, usize)>,
}

impl BoundMlp {
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, w, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in the same order as [`Mlp::params`].
    pub fn grads<R: Real>(&self, g: &Gradients<R>) -> Vec<Tensor<R>> {
        self.vars()
            .into_iter()
            .zip(&self.shapes)
            .map(|(v, &shape)| g.wrt_or_zeros(v, shape))
            .collect()
    }
}
