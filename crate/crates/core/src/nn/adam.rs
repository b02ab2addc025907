use crate::nn::{Gradients, NnError, PolicyNet};
use crate::scalar::Scalar;

/// Adam optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &PolicyNet<T>, lr: T) -> Self {
        let zeros: Vec<Vec<T>> = net.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            lr,
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. A gradient containing NaN or infinity is rejected and
    /// leaves both the parameters and the moments untouched.
    pub fn step(&mut self, net: &mut PolicyNet<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        if grads.tensors.len() != self.m.len()
            || grads.tensors.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(NnError::ShapeMismatch {
                expected: "gradients shaped like the optimizer state".into(),
                found: format!("{} tensors", grads.tensors.len()),
            });
        }
        if !grads.all_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        self.t += 1;
        let one = T::one();
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((param, g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{NetSpec, Tensor};

    fn scalar_net(value: f64) -> PolicyNet<f64> {
        // single weight + single bias
        let mut net = PolicyNet::zeros(NetSpec::mlp(1, vec![], 1)).unwrap();
        net.param_mut(0)[0] = value;
        net
    }

    fn grad(g: f64) -> Gradients<f64> {
        Gradients {
            tensors: vec![
                Tensor::from_vec(&[1, 1], vec![g]).unwrap(),
                Tensor::from_vec(&[1], vec![0.0]).unwrap(),
            ],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = scalar_net(0.7);
        let mut adam = AdamState::new(&net, 5e-5);
        adam.step(&mut net, &grad(0.0)).unwrap();
        assert_eq!(net.params()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, 5e-5);
        adam.step(&mut net, &grad(1.0)).unwrap();
        let delta = net.params()[0].data()[0];
        assert!((delta - (-5e-5 / (1.0 + 1e-8))).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn opposite_gradients_damp() {
        let mut net = scalar_net(0.0);
        let mut adam = AdamState::new(&net, 5e-5);
        adam.step(&mut net, &grad(1.0)).unwrap();
        adam.step(&mut net, &grad(-1.0)).unwrap();
        // m2 = 0.09 - 0.1 = -0.01 -> m_hat = -0.01/0.19; v_hat = 1
        let total = net.params()[0].data()[0];
        let expected = -5e-5 / (1.0 + 1e-8) + 5e-5 * (0.01 / 0.19) / (1.0 + 1e-8);
        assert!((total - expected).abs() < 1e-12);
        assert!(total.abs() < 2.0 * 5e-5);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut net = scalar_net(0.3);
        let mut adam = AdamState::new(&net, 1e-3);
        assert!(matches!(adam.step(&mut net, &grad(f64::NAN)), Err(NnError::NonFiniteGradient)));
        assert_eq!(adam.steps(), 0);
        assert_eq!(net.params()[0].data()[0], 0.3);
    }
}
