use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Real;

use super::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    step: u64,
    first_moment: Matrix<T>,
    second_moment: Matrix<T>,
    config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            config,
        }
    }

    pub fn for_param(param: &Matrix<T>, config: AdamConfig) -> Self {
        Self::new(param.rows(), param.cols(), config)
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update<T: Real>(param: &mut Matrix<T>, grad: &Matrix<T>, state: &mut AdamState<T>) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.first_moment.shape() {
        return Err(shape_err(
            "adam_update",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.first_moment.shape()
            ),
        ));
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let lr = T::lit(c.learning_rate);
    let eps = T::lit(c.epsilon);
    let t = state.step as i32;
    let bias1 = T::one() - b1.powi(t);
    let bias2 = T::one() - b2.powi(t);

    let m = state.first_moment.as_mut_slice();
    let v = state.second_moment.as_mut_slice();
    for (((p, &g), m), v) in param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Matrix::<f64>::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        for _ in 0..10 {
            adam_update(&mut p, &Matrix::zeros(1, 3), &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Matrix::<f64>::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let g = Matrix::from_vec(1, 2, vec![0.37, -12.0]).unwrap();
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        adam_update(&mut p, &g, &mut st).unwrap();
        assert!((p[(0, 0)] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[(0, 1)] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn quadratic_matches_scalar_reference() {
        // scalar reference written out independently
        let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=100 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            reference.push(x);
        }

        let mut p = Matrix::<f64>::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        let mut prev = 1.0;
        for (i, want) in reference.iter().enumerate() {
            let g = Matrix::from_vec(1, 1, vec![2.0 * p[(0, 0)]]).unwrap();
            adam_update(&mut p, &g, &mut st).unwrap();
            assert!((p[(0, 0)] - want).abs() < 1e-15);
            if i > 0 {
                assert!(p[(0, 0)].abs() < prev);
            }
            prev = p[(0, 0)].abs();
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Matrix::<f64>::zeros(2, 2);
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        assert!(adam_update(&mut p, &Matrix::zeros(1, 2), &mut st).is_err());
    }
}
