//! Constrained Adam (CAdam) subdomain solver.
//!
//! Each inner step takes a plain Adam update computed from the frozen-cache
//! block gradient and rescales it so its ∞-norm is at most `Δ/ℓ`. After `ℓ`
//! steps the accumulated local step therefore lies in the ∞-ball of radius `Δ`.

use thiserror::Error;

use crate::model::{BlockCache, ModelError};
use crate::partition::inf_norm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalSolverError {
    #[error("step bound must be positive, got {0}")]
    NonPositiveBound(f64),
    #[error("inner iteration count must be at least 1")]
    NoInnerIterations,
    #[error("subdomain {block}: non-finite gradient at inner step {step}")]
    NonFinite { block: usize, step: usize },
    #[error("subdomain {block}: moment state has length {state}, block has {expected} parameters")]
    StateLength {
        block: usize,
        state: usize,
        expected: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moments and step counter for one subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct CAdamState {
    pub params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl CAdamState {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Unclipped Adam update `-lr · m̂ / (√v̂ + ε)` for gradient `g`.
    pub fn raw_step(&mut self, g: &[f64]) -> Vec<f64> {
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.params;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut out = Vec::with_capacity(g.len());
        for ((m, v), &gi) in self.m.iter_mut().zip(self.v.iter_mut()).zip(g) {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            out.push(-learning_rate * m_hat / (v_hat.sqrt() + epsilon));
        }
        out
    }
}

/// `min{‖raw‖∞, bound} · raw / ‖raw‖∞`, and zero for a zero input.
pub fn clip_step(raw: &[f64], bound: f64) -> Result<Vec<f64>, LocalSolverError> {
    if bound.is_nan() || bound <= 0.0 {
        return Err(LocalSolverError::NonPositiveBound(bound));
    }
    let norm = inf_norm(raw);
    if norm == 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    if norm <= bound {
        return Ok(raw.to_vec());
    }
    let scale = bound / norm;
    Ok(raw.iter().map(|x| x * scale).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CAdamDiagnostics {
    /// ∞-norm of every clipped inner step.
    pub inner_norms: Vec<f64>,
    /// Inner steps whose raw Adam update exceeded the per-step bound.
    pub clipped: usize,
    pub per_step_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    pub step: Vec<f64>,
    pub diagnostics: CAdamDiagnostics,
}

/// Runs `ell` CAdam iterations on block `d` starting from `theta_d0`, using
/// the frozen cache for gradients, with per-step bound `delta / ell`.
/// `state` carries the moments; pass a fresh one to reset them.
pub fn cadam_solve(
    cache: &BlockCache,
    d: usize,
    theta_d0: &[f64],
    ell: usize,
    delta: f64,
    state: &mut CAdamState,
) -> Result<LocalStep, LocalSolverError> {
    if ell == 0 {
        return Err(LocalSolverError::NoInnerIterations);
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(LocalSolverError::NonPositiveBound(delta));
    }
    if state.len() != theta_d0.len() {
        return Err(LocalSolverError::StateLength {
            block: d,
            state: state.len(),
            expected: theta_d0.len(),
        });
    }
    let bound = delta / ell as f64;
    let mut theta = theta_d0.to_vec();
    let mut total = vec![0.0; theta.len()];
    let mut diagnostics = CAdamDiagnostics {
        per_step_bound: bound,
        ..Default::default()
    };
    for step in 1..=ell {
        let g = cache.local_block_gradient(d, &theta)?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(LocalSolverError::NonFinite { block: d, step });
        }
        let raw = state.raw_step(&g);
        if inf_norm(&raw) > bound {
            diagnostics.clipped += 1;
        }
        let s = clip_step(&raw, bound)?;
        diagnostics.inner_norms.push(inf_norm(&s));
        for ((th, acc), si) in theta.iter_mut().zip(total.iter_mut()).zip(&s) {
            *th += si;
            *acc += si;
        }
    }
    Ok(LocalStep {
        step: total,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{Activation, Architecture, Batch, BlockSplit, LossKind, Targets};
    use crate::tensor_ad::Tensor;

    #[test]
    fn clip_leaves_small_steps_alone() {
        assert_eq!(clip_step(&[0.1, -0.2], 0.5).unwrap(), vec![0.1, -0.2]);
    }

    #[test]
    fn clip_scales_by_inf_norm() {
        assert_eq!(clip_step(&[4.0, -2.0], 1.0).unwrap(), vec![1.0, -0.5]);
    }

    #[test]
    fn clip_of_zero_is_zero() {
        assert_eq!(clip_step(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn clip_rejects_non_positive_bound() {
        assert!(clip_step(&[1.0], 0.0).is_err());
        assert!(clip_step(&[1.0], -1.0).is_err());
        assert!(clip_step(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut st = CAdamState::new(2, AdamParams::default());
        let s = st.raw_step(&[3.0, -0.5]);
        assert!((s[0] + 1e-3).abs() < 1e-9);
        assert!((s[1] - 1e-3).abs() < 1e-9);
        assert_eq!(st.step_count(), 1);
    }

    fn setup(zero: bool) -> (Arc<Architecture>, Vec<f64>, BlockCache) {
        let arch = Arc::new(
            Architecture::mlp(&[2, 4, 1], Activation::Tanh, LossKind::MeanSquaredError, BlockSplit::Balanced(2))
                .unwrap(),
        );
        let theta = if zero {
            vec![0.0; arch.param_count()]
        } else {
            arch.init_params(11)
        };
        let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.2, 0.3, -0.8, 0.1]).unwrap();
        let y = if zero {
            Tensor::zeros(vec![3, 1])
        } else {
            Tensor::matrix(3, 1, vec![1.0, -1.0, 0.5]).unwrap()
        };
        let eval = arch
            .evaluate_with_cache(&theta, &Batch::new(0, x, Targets::Values(y)))
            .unwrap();
        (arch, theta, eval.cache)
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let (arch, theta, cache) = setup(true);
        for d in 0..2 {
            let r = arch.block_params(d).unwrap();
            let mut st = CAdamState::new(r.len(), AdamParams::default());
            let out = cadam_solve(&cache, d, &theta[r], 4, 0.1, &mut st).unwrap();
            assert!(out.step.iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn single_inner_step_uses_full_radius_bound() {
        let (arch, theta, cache) = setup(false);
        let r = arch.block_params(1).unwrap();
        let params = AdamParams {
            learning_rate: 10.0,
            ..Default::default()
        };
        let mut st = CAdamState::new(r.len(), params);
        let out = cadam_solve(&cache, 1, &theta[r], 1, 0.25, &mut st).unwrap();
        assert_eq!(out.diagnostics.per_step_bound, 0.25);
        assert!((inf_norm(&out.step) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inner_steps_respect_per_step_bound() {
        let (arch, theta, cache) = setup(false);
        let r = arch.block_params(0).unwrap();
        let params = AdamParams {
            learning_rate: 0.5,
            ..Default::default()
        };
        let mut st = CAdamState::new(r.len(), params);
        let out = cadam_solve(&cache, 0, &theta[r], 5, 0.1, &mut st).unwrap();
        assert!(out.diagnostics.inner_norms.iter().all(|&n| n <= 0.1 / 5.0));
        assert!(inf_norm(&out.step) <= 0.1);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (arch, theta, cache) = setup(false);
        let r = arch.block_params(0).unwrap();
        let mut st = CAdamState::new(r.len(), AdamParams::default());
        assert!(matches!(
            cadam_solve(&cache, 0, &theta[r.clone()], 0, 0.1, &mut st),
            Err(LocalSolverError::NoInnerIterations)
        ));
        assert!(matches!(
            cadam_solve(&cache, 0, &theta[r.clone()], 2, 0.0, &mut st),
            Err(LocalSolverError::NonPositiveBound(_))
        ));
        let mut wrong = CAdamState::new(1, AdamParams::default());
        assert!(matches!(
            cadam_solve(&cache, 0, &theta[r], 2, 0.1, &mut wrong),
            Err(LocalSolverError::StateLength { .. })
        ));
    }
}
