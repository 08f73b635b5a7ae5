use crate::error::{Error, Result};
use crate::math::{Real, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;

/// Adam with bias correction. Moments mirror the parameter list they were
/// created for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &[&Tensor<R>], lr: f64) -> Self {
        let zeros = || -> Vec<Tensor<R>> {
            params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<R>], &[Tensor<R>]) {
        (&self.m, &self.v)
    }

    /// One update. Rejects shape mismatches and non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, params: Vec<&mut Tensor<R>>, grads: &[Tensor<R>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape(format!(
                    "adam tensor {i}: moment {:?}, param {:?}, grad {:?}",
                    self.m[i].shape(),
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NumericalFault(format!(
                    "non-finite gradient in tensor {i}"
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = R::from_f64_lossy(self.beta1);
        let b2 = R::from_f64_lossy(self.beta2);
        let one = R::one();
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = R::from_f64_lossy(self.lr / bc1);
        let bc2_sqrt = R::from_f64_lossy(bc2.sqrt());
        let eps = R::from_f64_lossy(self.eps);

        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let denom = vv.sqrt() / bc2_sqrt + eps;
                *pv -= step_size * *mv / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_on_fresh_state_is_noop() {
        let mut p = Tensor::<f32>::row(vec![0.5, -1.25]);
        let mut adam = AdamState::new(&[&p], 3e-4);
        adam.step(vec![&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data(), &[0.5, -1.25]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::<f64>::scalar(0.0);
        let mut adam = AdamState::new(&[&p], 0.1);
        adam.step(vec![&mut p], &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert!((p.item() + 0.1).abs() < 1e-8, "{}", p.item());
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut p = Tensor::<f32>::scalar(1.0);
        let mut adam = AdamState::new(&[&p], 0.1);
        let err = adam.step(vec![&mut p], &[Tensor::scalar(f32::NAN)]);
        assert!(matches!(err, Err(Error::NumericalFault(_))));
        assert_eq!(p.item(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn moments_match_param_shapes() {
        let a = Tensor::<f32>::zeros(3, 4);
        let b = Tensor::<f32>::zeros(1, 4);
        let adam = AdamState::new(&[&a, &b], 3e-4);
        let (m, v) = adam.moments();
        assert_eq!(m[0].shape(), (3, 4));
        assert_eq!(v[1].shape(), (1, 4));
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = Tensor::<f32>::row(vec![0.1, 0.2, 0.3]);
            let mut adam = AdamState::new(&[&p], 3e-4);
            for k in 0..50 {
                let g = Tensor::row(vec![k as f32 * 0.1, -0.5, 1.0 / (k + 1) as f32]);
                adam.step(vec![&mut p], &[g]).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
