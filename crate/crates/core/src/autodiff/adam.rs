use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam optimizer state: per-parameter first/second moments and the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over `params`. Every parameter must carry
/// a gradient; gradients are cleared afterwards.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
        return Err(Error::MissingGradient(i));
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        state.second = state.first.clone();
    }
    let shapes_match = state.first.len() == params.len()
        && state.first.iter().zip(params.iter()).all(|(m, p)| m.len() == p.numel());
    if !shapes_match {
        return Err(Error::invalid("adam_step", "parameter set changed between steps"));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);

    for (pi, p) in params.iter_mut().enumerate() {
        let g = p.take_grad().expect("checked above");
        let m = &mut state.first[pi];
        let v = &mut state.second[pi];
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *x -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64) -> Tensor<f64> {
        Tensor::new(&[1], vec![v]).unwrap().into_param()
    }

    #[test]
    fn first_update_has_magnitude_lr() {
        let mut p = param(3.0);
        let mut st = AdamState::new(0.01);
        p.accumulate_grad(&[0.37]).unwrap();
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert!((p.data()[0] - (3.0 - 0.01)).abs() < 1e-9);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut p = param(-1.5);
        let mut st = AdamState::new(0.1);
        p.accumulate_grad(&[0.0]).unwrap();
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert_eq!(p.data()[0], -1.5);
    }

    #[test]
    fn missing_grad_is_error() {
        let mut p = param(1.0);
        let mut st = AdamState::new(0.1);
        assert!(matches!(adam_step(&mut [&mut p], &mut st), Err(Error::MissingGradient(0))));
    }

    #[test]
    fn two_steps_on_square_match_scalar_reference() {
        // f(x) = x², x0 = 1, lr = 0.1
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=2 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }

        let mut p = param(1.0);
        let mut st = AdamState::new(0.1);
        for want in expected {
            let g = 2.0 * p.data()[0];
            p.accumulate_grad(&[g]).unwrap();
            adam_step(&mut [&mut p], &mut st).unwrap();
            assert!((p.data()[0] - want).abs() < 1e-15);
        }
        assert_eq!(st.step_count(), 2);
    }
}
