use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Grad, Gradients};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig {
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Invalid(format!("adadelta rho must be in (0, 1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("adadelta epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Tensor,
    pub sq_delta: Tensor,
    pub config: AdadeltaConfig,
}

impl AdadeltaState {
    pub fn new(shape: &[usize], config: AdadeltaConfig) -> Self {
        AdadeltaState {
            sq_grad: Tensor::zeros(shape),
            sq_delta: Tensor::zeros(shape),
            config,
        }
    }
}

/// One Adadelta update of `param` in place.
pub fn adadelta_step(param: &mut Tensor, grad: &Tensor, state: &mut AdadeltaState) -> Result<()> {
    state.config.validate()?;
    if param.shape() != grad.shape() || state.sq_grad.shape() != param.shape() {
        return Err(Error::shape("adadelta_step", param.shape(), grad.shape()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("adadelta_step gradient"));
    }
    let AdadeltaConfig { rho, epsilon } = state.config;
    let p = param.data_mut();
    let eg = state.sq_grad.data_mut();
    let ed = state.sq_delta.data_mut();
    for (i, &g) in grad.data().iter().enumerate() {
        eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
        let delta = -((ed[i] + epsilon).sqrt() / (eg[i] + epsilon).sqrt()) * g;
        ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
        p[i] += delta;
    }
    Ok(())
}

/// Plain gradient descent, used in tests.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape("sgd_step", param.shape(), grad.shape()));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales each row whose L2 norm exceeds `max_norm` down to exactly `max_norm`.
pub fn max_norm_rescale(w: &mut Tensor, max_norm: f64) {
    assert!(max_norm > 0.0, "max norm must be positive");
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        let norm = row_norm(row);
        if norm > max_norm {
            let s = max_norm / norm;
            row.iter_mut().for_each(|x| *x *= s);
            // rounding can leave the norm an ulp over; a second call must be a no-op
            while row_norm(row) > max_norm {
                row.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
            }
        }
    }
}

/// Adadelta over every trainable tensor of a store.
#[derive(Clone, Debug)]
pub struct Adadelta {
    states: Vec<Option<AdadeltaState>>,
}

impl Adadelta {
    pub fn new(store: &ParamStore, config: AdadeltaConfig) -> Result<Self> {
        config.validate()?;
        let states = store
            .iter()
            .map(|(_, p)| p.trainable.then(|| AdadeltaState::new(p.value.shape(), config)))
            .collect();
        Ok(Adadelta { states })
    }

    /// Applies the step to every trainable parameter; unreached ones get a
    /// zero gradient (their accumulators still decay).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (i, state) in self.states.iter_mut().enumerate() {
            let Some(state) = state else { continue };
            let id = ParamId(i);
            let param = store.get_mut(id);
            match grads.get(id) {
                Some(Grad::Rows { rows, .. }) => step_rows(param, rows, state)?,
                Some(g @ Grad::Dense(_)) => adadelta_step(param, &g.to_dense(), state)?,
                None => {
                    let zero = Tensor::zeros(param.shape());
                    adadelta_step(param, &zero, state)?
                }
            }
        }
        Ok(())
    }
}

// Same arithmetic as `adadelta_step`, without materializing the zero rows.
fn step_rows(
    param: &mut Tensor,
    rows: &std::collections::BTreeMap<usize, Vec<f64>>,
    state: &mut AdadeltaState,
) -> Result<()> {
    let AdadeltaConfig { rho, epsilon } = state.config;
    if rows.values().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adadelta_step gradient"));
    }
    let cols = param.cols();
    let p = param.data_mut();
    let eg = state.sq_grad.data_mut();
    let ed = state.sq_delta.data_mut();
    for r in 0..p.len() / cols.max(1) {
        let g_row = rows.get(&r);
        for j in 0..cols {
            let i = r * cols + j;
            let g = g_row.map_or(0.0, |g| g[j]);
            eg[i] = rho * eg[i] + (1.0 - rho) * g * g;
            let delta = -((ed[i] + epsilon).sqrt() / (eg[i] + epsilon).sqrt()) * g;
            ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
            p[i] += delta;
        }
    }
    Ok(())
}
