use super::ParamRef;
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
///
/// Moment buffers are allocated on the first step from the parameter list
/// and must keep the same layout afterwards.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update to every parameter. Nothing is modified if any
    /// gradient is non-finite or the layout changed.
    pub fn step(&mut self, params: &mut [ParamRef<'_>]) -> Result<()> {
        for p in params.iter() {
            if p.value.len() != p.grad.len() {
                return Err(Error::dim("AdamState::step", p.value.len(), p.grad.len()));
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("gradient of {}", p.name)));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::dim(
                "AdamState::step",
                format!("{} parameter tensors", self.m.len()),
                format!("{} parameter tensors", params.len()),
            ));
        }

        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.value.iter_mut().zip(p.grad).zip(m).zip(v) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the functional form `params, grads, state`.
pub fn adam_step(params: &mut [ParamRef<'_>], state: &mut AdamState) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one<'a>(value: &'a mut [f64], grad: &'a [f64]) -> Vec<ParamRef<'a>> {
        vec![ParamRef {
            name: "w".into(),
            value,
            grad,
        }]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(1e-3);
        let mut w = [0.0];
        state.step(&mut one(&mut w, &[2.0])).unwrap();
        let expected = -1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut state = AdamState::new(0.1);
        let mut w = [1.5, -2.0];
        for _ in 0..50 {
            state.step(&mut one(&mut w, &[0.0, 0.0])).unwrap();
        }
        assert_eq!(w, [1.5, -2.0]);
    }

    #[test]
    fn quadratic_converges_like_reference_recurrence() {
        let mut state = AdamState::new(0.1);
        let mut w = [0.0];
        for _ in 0..100 {
            let g = [2.0 * (w[0] - 3.0)];
            state.step(&mut one(&mut w, &g)).unwrap();
        }
        // independent scalar recurrence
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((w[0] - x).abs() < 1e-12);
        assert!((w[0] - 3.0).abs() < 3.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut state = AdamState::new(0.1);
        let mut w = [1.0];
        let err = state.step(&mut one(&mut w, &[f64::NAN])).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(w, [1.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn second_moments_stay_non_negative() {
        let mut state = AdamState::new(0.01);
        let mut w = [0.0, 0.0];
        for i in 0..20 {
            let g = [(i as f64).sin(), -(i as f64).cos()];
            state.step(&mut one(&mut w, &g)).unwrap();
        }
        assert!(state.second_moments()[0].iter().all(|&v| v >= 0.0));
    }
}
