//! SGD with optional momentum, plus a finite-difference gradient checker.

use std::collections::HashMap;

use super::{NumericError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Stochastic gradient descent over every store tensor that carries a
/// gradient. Gradients are cleared after the step and the updated tensors are
/// checked for non-finite values.
pub fn sgd_step(store: &mut ParamStore, lr: f64, dir: Direction) -> Result<(), NumericError> {
    Sgd::new(0.0).step(store, lr, dir)
}

/// SGD with momentum; `momentum = 0` is plain SGD.
#[derive(Debug, Default)]
pub struct Sgd {
    momentum: f64,
    velocity: HashMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            velocity: HashMap::new(),
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        lr: f64,
        dir: Direction,
    ) -> Result<(), NumericError> {
        let names: Vec<String> = store
            .iter()
            .filter(|(_, t)| t.grad().is_some())
            .map(|(n, _)| n.to_string())
            .collect();
        for name in &names {
            let grad = store.get(name)?.grad().unwrap().to_vec();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(NumericError::NonFiniteGrad(name.clone()));
            }
            let step: Vec<f64> = if self.momentum > 0.0 {
                let vel = self
                    .velocity
                    .entry(name.clone())
                    .or_insert_with(|| vec![0.0; grad.len()]);
                for (v, g) in vel.iter_mut().zip(&grad) {
                    *v = self.momentum * *v + g;
                }
                vel.clone()
            } else {
                grad
            };
            let tensor = store.get_mut(name)?;
            let signed_lr = match dir {
                Direction::Minimize => -lr,
                Direction::Maximize => lr,
            };
            for (p, s) in tensor.data_mut().iter_mut().zip(&step) {
                *p += signed_lr * s;
            }
            tensor.clear_grad();
            if !tensor.is_finite() {
                return Err(NumericError::NonFiniteParam(name.clone()));
            }
        }
        Ok(())
    }
}

/// Compare analytic gradients already accumulated in the store against
/// central finite differences of `loss`, over the named tensors. Returns the
/// maximum relative error.
///
/// `loss` must be a pure function of the store's current parameter values.
pub fn grad_check<F>(
    store: &mut ParamStore,
    names: &[&str],
    eps: f64,
    mut loss: F,
) -> Result<f64, NumericError>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut max_rel = 0.0f64;
    for &name in names {
        let len = store.get(name)?.len();
        let analytic = store
            .get(name)?
            .grad()
            .ok_or_else(|| NumericError::MissingGrad(name.to_string()))?
            .to_vec();
        for i in 0..len {
            let original = store.get(name)?.data()[i];
            store.get_mut(name)?.data_mut()[i] = original + eps;
            let up = loss(store);
            store.get_mut(name)?.data_mut()[i] = original - eps;
            let down = loss(store);
            store.get_mut(name)?.data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
