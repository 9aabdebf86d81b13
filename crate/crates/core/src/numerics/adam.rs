use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected Adam update, applied in place.
///
/// Non-finite gradient entries abort the step before anything is modified.
pub fn adam_step<P, G>(params: &mut P, grads: &G, state: &mut AdamState, cfg: &AdamConfig) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grad_tensors = grads.tensors();
    {
        let param_tensors = params.tensors();
        let lens = |ts: &[&[f64]]| ts.iter().map(|t| t.len()).collect::<Vec<_>>();
        let (p, g) = (lens(&param_tensors), lens(&grad_tensors));
        let s: Vec<usize> = state.m.iter().map(Vec::len).collect();
        if p != g || p != s {
            return Err(Error::shape("adam_step", format!("{p:?}"), format!("grads {g:?}, state {s:?}")));
        }
    }
    if let Some((i, _)) = grad_tensors
        .iter()
        .enumerate()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            context: format!("gradient tensor {i} in adam_step"),
            iteration: None,
        });
    }

    state.step += 1;
    let step = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(step);
    let bc2 = 1.0 - cfg.beta2.powi(step);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
