use super::tensor::Tensor;
use super::NdError;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut Tensor, grads: &Tensor, state: &mut AdamState) -> Result<(), NdError> {
    params.same_shape(grads, "adam_step")?;
    params.same_shape(&state.first_moment, "adam_step")?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), mi), vi) in params
        .data_mut()
        .iter_mut()
        .zip(grads.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + (1.0 - b1) * g;
        *vi = b2 * *vi + (1.0 - b2) * g * g;
        let mhat = *mi / c1;
        let vhat = *vi / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, learning_rate: f64) -> Self {
        Self {
            states: params
                .into_iter()
                .map(|p| AdamState::new(p.shape(), learning_rate))
                .collect(),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for s in &mut self.states {
            s.learning_rate = lr;
        }
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<(), NdError> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(NdError::LengthMismatch {
                op: "adam",
                left: params.len(),
                right: grads.len(),
            });
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.states) {
            adam_step(p, g, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Tensor::from_vec(vec![0.5, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new(&[2], 1e-3);
        adam_step(&mut p, &Tensor::zeros(&[2]), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.first_moment, Tensor::zeros(&[2]));
        assert_eq!(s.second_moment, Tensor::zeros(&[2]));
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        for g in [3.0, -0.25, 1e-3] {
            let mut p = Tensor::scalar(1.0);
            let mut s = AdamState::new(&[1], 0.01);
            adam_step(&mut p, &Tensor::scalar(g), &mut s).unwrap();
            // m_hat = g, v_hat = g^2 on the first step.
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p.item() - expected).abs() < 1e-15);
            assert!(((p.item() - 1.0).abs() - 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn identical_inputs_evolve_identically() {
        let mut a = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
        let mut b = a.clone();
        let mut sa = AdamState::new(&[3], 0.05);
        let mut sb = sa.clone();
        for k in 0..10 {
            let g = Tensor::from_vec(vec![k as f64, -1.0, 0.5 * k as f64]);
            adam_step(&mut a, &g, &mut sa).unwrap();
            adam_step(&mut b, &g, &mut sb).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut s = AdamState::new(&[2], 0.1);
        assert!(adam_step(&mut p, &Tensor::zeros(&[3]), &mut s).is_err());
    }
}
