//! Momentum SGD with classical (gradient-added) L2 weight decay.

use serde::{Deserialize, Serialize};

use super::network::{Classifier, Gradients};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter group.
    pub momentum_buffers: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &Classifier<T>, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "optimizer needs lr >= 0, momentum in [0, 1), weight decay >= 0 (got {learning_rate}, {momentum}, {weight_decay})"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            weight_decay,
            momentum_buffers: model.params().iter().map(|p| vec![T::zero(); p.len()]).collect(),
        })
    }
}

/// `g += wd * p; buf = momentum * buf + g; p -= lr * buf`.
pub fn sgd_update<T: Scalar>(
    model: &mut Classifier<T>,
    state: &mut OptimizerState<T>,
    gradients: &Gradients<T>,
) -> Result<()> {
    let params = model.params_mut();
    if params.len() != gradients.0.len() || params.len() != state.momentum_buffers.len() {
        return Err(Error::Shape(format!(
            "{} parameter groups, {} gradient groups, {} momentum buffers",
            params.len(),
            gradients.0.len(),
            state.momentum_buffers.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&gradients.0).enumerate() {
        if p.len() != g.len() || p.len() != state.momentum_buffers[i].len() {
            return Err(Error::Shape(format!("parameter group {i} has mismatched gradient length")));
        }
    }
    if !gradients.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    let lr = T::from_f64(state.learning_rate);
    let mu = T::from_f64(state.momentum);
    let wd = T::from_f64(state.weight_decay);
    for ((p, g), buf) in params.into_iter().zip(&gradients.0).zip(&mut state.momentum_buffers) {
        for ((w, &gi), b) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
            let d = gi + wd * *w;
            *b = mu * *b + d;
            *w = *w - lr * *b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn scalar_model(value: f64) -> Classifier<f64> {
        // 1x1 linear layer: weight is the scalar, bias pinned at zero gradient.
        Classifier::linear([1, 1, 1], vec![value, 0.0], vec![0.0, 0.0]).unwrap()
    }

    fn grad(w: f64) -> Gradients<f64> {
        Gradients(vec![vec![w, 0.0], vec![0.0, 0.0]])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = scalar_model(0.7);
        let mut s = OptimizerState::new(&m, 0.1, 0.0, 0.0).unwrap();
        sgd_update(&mut m, &mut s, &grad(0.0)).unwrap();
        assert_eq!(m.flat_params()[0], 0.7);
    }

    #[test]
    fn one_plain_step() {
        let mut m = scalar_model(1.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.0, 0.0).unwrap();
        sgd_update(&mut m, &mut s, &grad(1.0)).unwrap();
        assert!((m.flat_params()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut m = scalar_model(1.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.9, 0.0).unwrap();
        sgd_update(&mut m, &mut s, &grad(1.0)).unwrap();
        let after_one = m.flat_params()[0];
        sgd_update(&mut m, &mut s, &grad(1.0)).unwrap();
        let after_two = m.flat_params()[0];
        assert!((1.0 - after_one - 0.1).abs() < 1e-15);
        assert!((after_one - after_two - 0.19).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut m = Classifier::<f32>::new(
            Architecture::Mlp {
                input: [1, 2, 1],
                hidden: 4,
                num_classes: 2,
            },
            9,
        )
        .unwrap();
        let before = m.flat_params();
        let mut s = OptimizerState::new(&m, 0.0, 0.9, 2e-4).unwrap();
        let g = Gradients(m.params().iter().map(|p| vec![1.0f32; p.len()]).collect());
        sgd_update(&mut m, &mut s, &g).unwrap();
        assert_eq!(before, m.flat_params());
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut m = scalar_model(1.0);
        let mut s = OptimizerState::new(&m, 0.1, 0.0, 0.0).unwrap();
        assert!(matches!(sgd_update(&mut m, &mut s, &grad(f64::NAN)), Err(Error::NonFinite(_))));
    }
}
