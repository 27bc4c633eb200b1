use super::params::{flatten, param_count, Params};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators laid out in the parameter visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Params + ?Sized>(params: &P) -> Self {
        let n = param_count(params);
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Fails without touching anything if a
/// gradient is non-finite.
pub fn adam_step<P: Params + ?Sized>(params: &mut P, grads: &P, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let mut bad: Option<String> = None;
    grads.visit("", &mut |name, g| {
        if bad.is_none() && g.iter().any(|x| !x.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let g = flatten(grads);
    if g.len() != state.m.len() || g.len() != param_count(params) {
        return Err(Error::Shape(format!(
            "optimizer state holds {} values, gradients {}",
            state.m.len(),
            g.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    let mut off = 0;
    params.visit_mut("", &mut |_, p| {
        for (k, w) in p.iter_mut().enumerate() {
            let i = off + k;
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = state.m[i] / c1;
            let v_hat = state.v[i] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        off += p.len();
    });
    Ok(())
}
