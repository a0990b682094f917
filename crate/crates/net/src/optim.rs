//! Sophia with a Hutchinson diagonal-Hessian estimate.

use std::collections::BTreeMap;

use imt_autograd::{Real, Tensor};
use imt_core::{ImtError, Result};
use rand::Rng;

use crate::params::Weights;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SophiaConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub rho: f64,
}

impl Default for SophiaConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            rho: 0.04,
        }
    }
}

pub const HESSIAN_FLOOR: f64 = 1e-12;

/// Per-tensor EMAs of the gradient and the diagonal Hessian estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SophiaState {
    pub steps: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub h: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct Sophia {
    pub cfg: SophiaConfig,
    pub state: SophiaState,
}

impl Sophia {
    pub fn new(cfg: SophiaConfig) -> Self {
        Self {
            cfg,
            state: SophiaState::default(),
        }
    }

    /// Updates one tensor in place. `hessian` refreshes the curvature EMA
    /// when present; `decays` selects decoupled weight decay.
    pub fn step_tensor<R: Real>(&mut self, name: &str, p: &mut [R], grad: &[R], hessian: Option<&[R]>, decays: bool) -> Result<()> {
        let n = p.len();
        if grad.len() != n || hessian.is_some_and(|h| h.len() != n) {
            return Err(ImtError::InvalidInput(format!("optimizer inputs for '{name}' differ in length")));
        }
        let SophiaConfig {
            lr,
            beta1,
            beta2,
            weight_decay,
            rho,
        } = self.cfg;
        let m = self.state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let h = self.state.h.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let decay = if decays { 1.0 - lr * weight_decay } else { 1.0 };
        let mut next = Vec::with_capacity(n);
        let mut new_m = Vec::with_capacity(n);
        let mut new_h = Vec::with_capacity(n);
        for i in 0..n {
            let mi = beta1 * m[i] + (1.0 - beta1) * grad[i].f64();
            let hi = match hessian {
                Some(est) => beta2 * h[i] + (1.0 - beta2) * est[i].f64(),
                None => h[i],
            };
            let ratio = (mi / hi.max(HESSIAN_FLOOR)).clamp(-rho, rho);
            let v = p[i].f64() * decay - lr * ratio;
            if !v.is_finite() {
                return Err(ImtError::Numerical(format!("non-finite update for '{name}' at index {i}")));
            }
            next.push(v);
            new_m.push(mi);
            new_h.push(hi);
        }
        for (dst, v) in p.iter_mut().zip(next) {
            *dst = R::of(v);
        }
        *m = new_m;
        *h = new_h;
        Ok(())
    }

    /// One step over every tensor that has a gradient.
    pub fn step<R: Real>(
        &mut self,
        params: &mut Weights<R>,
        grads: &Weights<R>,
        hessian: Option<&Weights<R>>,
        decays: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| ImtError::InvalidInput(format!("gradient for unknown tensor '{name}'")))?;
            let est = hessian.and_then(|h| h.get(name)).map(|t| t.data());
            self.step_tensor(name, p.data_mut(), g.data(), est, decays(name))?;
        }
        self.state.steps += 1;
        Ok(())
    }
}

/// Hutchinson estimate `z ⊙ (H z)` with Rademacher `z`, where `H z` is a
/// central difference of gradients: `(∇ℓ(p + δz) − ∇ℓ(p − δz)) / 2δ`.
pub fn hutchinson_estimate<R: Real, F>(point: &Weights<R>, mut grad: F, fd_step: f64, rng: &mut impl Rng) -> Result<Weights<R>>
where
    F: FnMut(&Weights<R>) -> Result<Weights<R>>,
{
    if !(fd_step > 0.0 && fd_step.is_finite()) {
        return Err(ImtError::InvalidInput(format!("finite-difference step must be positive, got {fd_step}")));
    }
    let z: BTreeMap<String, Vec<f64>> = point
        .iter()
        .map(|(k, t)| {
            let v = (0..t.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            (k.clone(), v)
        })
        .collect();
    let shifted = |sign: f64| -> Weights<R> {
        point
            .iter()
            .map(|(k, t)| {
                let data = t.data().iter().zip(&z[k]).map(|(&p, &zi)| R::of(p.f64() + sign * fd_step * zi)).collect();
                (k.clone(), Tensor::new(t.shape().to_vec(), data))
            })
            .collect()
    };
    let plus = grad(&shifted(1.0))?;
    let minus = grad(&shifted(-1.0))?;
    let mut out = Weights::new();
    for (k, t) in point {
        let (gp, gm) = (plus.get(k), minus.get(k));
        let data = (0..t.len())
            .map(|i| {
                let a = gp.map_or(0.0, |g| g.data()[i].f64());
                let b = gm.map_or(0.0, |g| g.data()[i].f64());
                R::of(z[k][i] * (a - b) / (2.0 * fd_step))
            })
            .collect();
        out.insert(k.clone(), Tensor::new(t.shape().to_vec(), data));
    }
    Ok(out)
}
