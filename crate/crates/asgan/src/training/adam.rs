use crate::nn::{Param, Scalar};
use ndarray::ArrayD;
use std::collections::{HashMap, HashSet};

/// Adam with per-parameter moment estimates, keyed by storage identity so a
/// tied tensor is stepped exactly once per update even when it is listed by
/// both networks that hold it.
pub struct Adam<S> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    moments: HashMap<u64, (ArrayD<S>, ArrayD<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            t: 0,
            moments: HashMap::new(),
        }
    }

    /// One update over the unique parameters of `params`. Parameters without
    /// an accumulated gradient are left untouched.
    pub fn step(&mut self, params: &[(String, Param<S>)]) {
        self.t += 1;
        let b1 = S::from_f(self.beta1);
        let b2 = S::from_f(self.beta2);
        let one = S::one();
        let bc1 = S::from_f(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = S::from_f(1.0 - self.beta2.powi(self.t as i32));
        let lr = S::from_f(self.learning_rate);
        let eps = S::from_f(self.epsilon);
        let mut seen = HashSet::new();
        for (_, p) in params {
            if !seen.insert(p.id()) {
                continue;
            }
            let Some(grad) = p.grad() else { continue };
            let (m, v) = self
                .moments
                .entry(p.id())
                .or_insert_with(|| (ArrayD::zeros(grad.shape()), ArrayD::zeros(grad.shape())));
            ndarray::Zip::from(&mut *m).and(&grad).for_each(|m, &g| {
                *m = b1 * *m + (one - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&grad).for_each(|v, &g| {
                *v = b2 * *v + (one - b2) * g * g;
            });
            let mut value = p.value_mut();
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    /// Moment pair for a parameter, if the optimizer has seen it.
    pub fn moments_for(&self, param: &Param<S>) -> Option<&(ArrayD<S>, ArrayD<S>)> {
        self.moments.get(&param.id())
    }

    pub fn set_moments(&mut self, param: &Param<S>, m: ArrayD<S>, v: ArrayD<S>) {
        self.moments.insert(param.id(), (m, v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let p = Param::<f64>::new(ArrayD::from_shape_vec(vec![2], vec![0.5, -0.25]).unwrap());
        p.accumulate_grad(&ArrayD::from_shape_vec(vec![2], vec![1.0, -2.0]).unwrap());
        let before = p.value().clone();
        let mut adam = Adam::new(0.0, 0.5, 0.999);
        adam.step(&[("p".into(), p.clone())]);
        assert_eq!(&before, &*p.value());
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let p = Param::<f64>::new(ArrayD::from_shape_vec(vec![2], vec![0.0, 0.0]).unwrap());
        p.accumulate_grad(&ArrayD::from_shape_vec(vec![2], vec![3.0, -0.7]).unwrap());
        let mut adam = Adam::new(0.1, 0.5, 0.999);
        adam.step(&[("p".into(), p.clone())]);
        let v = p.value();
        assert!(v[0] < 0.0 && v[1] > 0.0);
        // Bias-corrected first step has magnitude ~ lr regardless of scale.
        assert!((v[0].abs() - 0.1).abs() < 1e-3);
    }

    #[test]
    fn shared_parameter_is_stepped_once() {
        let p = Param::<f64>::new(ArrayD::from_shape_vec(vec![1], vec![1.0]).unwrap());
        p.accumulate_grad(&ArrayD::from_shape_vec(vec![1], vec![1.0]).unwrap());
        let mut adam = Adam::new(0.1, 0.5, 0.999);
        adam.step(&[("a".into(), p.clone()), ("b".into(), p.clone())]);
        let single = Param::<f64>::new(ArrayD::from_shape_vec(vec![1], vec![1.0]).unwrap());
        single.accumulate_grad(&ArrayD::from_shape_vec(vec![1], vec![1.0]).unwrap());
        let mut adam2 = Adam::new(0.1, 0.5, 0.999);
        adam2.step(&[("s".into(), single.clone())]);
        assert_eq!(p.value()[0], single.value()[0]);
    }
}
