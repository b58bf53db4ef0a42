//! Optimizers and learning-rate schedules.
//!
//! All state lives in plain structs mirroring the network's parameter
//! structure, and every update walks elements in row-major order, so
//! optimisation is as reproducible as the forward pass.

use crate::error::{Error, Result};
use crate::nn::LayerParams;
use crate::scalar::Scalar;

/// Adam state (first/second moment estimates plus step counter).
///
/// The update is `p -= lr * m_hat / sqrt(v_hat + eps)` with bias-corrected
/// moments; note the damping term sits inside the square root.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    m: Vec<LayerParams<S>>,
    v: Vec<LayerParams<S>>,
    step: u64,
    beta1: S,
    beta2: S,
    epsilon: S,
}

impl<S: Scalar> AdamState<S> {
    /// Standard defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(params: &[LayerParams<S>]) -> Self {
        Self::with_hyperparams(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(params: &[LayerParams<S>], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<LayerParams<S>> = params.iter().map(zeros_like).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: S::of_f64(beta1),
            beta2: S::of_f64(beta2),
            epsilon: S::of_f64(epsilon),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` from `grads` at learning rate `lr`.
pub fn adam_step<S: Scalar>(
    params: &mut [LayerParams<S>],
    grads: &[LayerParams<S>],
    state: &mut AdamState<S>,
    lr: S,
) -> Result<()> {
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = S::one() - state.beta1.powi(t);
    let c2 = S::one() - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let one = S::one();
    visit_quads(params, grads, &mut state.m, &mut state.v, |p, g, m, v| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p - lr * m_hat / (v_hat + eps).sqrt();
    })
}

/// Momentum SGD state; optionally Nesterov-style.
#[derive(Debug, Clone)]
pub struct MomentumState<S> {
    velocity: Vec<LayerParams<S>>,
    momentum: S,
    nesterov: bool,
}

impl<S: Scalar> MomentumState<S> {
    pub fn new(params: &[LayerParams<S>], momentum: f64, nesterov: bool) -> Self {
        MomentumState {
            velocity: params.iter().map(zeros_like).collect(),
            momentum: S::of_f64(momentum),
            nesterov,
        }
    }
}

/// One (Nesterov) momentum SGD update with decoupled-from-nothing classic
/// L2 weight decay folded into the gradient:
///
/// ```text
/// d = g + weight_decay * p
/// v = momentum * v + d
/// p -= lr * (momentum * v + d)   (nesterov)
/// p -= lr * v                    (plain)
/// ```
pub fn momentum_step<S: Scalar>(
    params: &mut [LayerParams<S>],
    grads: &[LayerParams<S>],
    state: &mut MomentumState<S>,
    lr: S,
    weight_decay: S,
) -> Result<()> {
    let mu = state.momentum;
    let nesterov = state.nesterov;
    visit_triples(params, grads, &mut state.velocity, |p, g, v| {
        let d = g + weight_decay * *p;
        *v = mu * *v + d;
        let step = if nesterov { mu * *v + d } else { *v };
        *p = *p - lr * step;
    })
}

/// Exponential moving average of parameters, tracked alongside training and
/// preferred at evaluation time.
#[derive(Debug, Clone)]
pub struct EmaState<S> {
    shadow: Vec<LayerParams<S>>,
    decay: S,
}

impl<S: Scalar> EmaState<S> {
    /// `decay` must lie in `[0, 1)`. The shadow starts as a copy of the
    /// current parameters.
    pub fn new(params: &[LayerParams<S>], decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!(
                "EMA decay {decay} outside [0, 1)"
            )));
        }
        Ok(EmaState {
            shadow: params.to_vec(),
            decay: S::of_f64(decay),
        })
    }

    /// `shadow = decay * shadow + (1 - decay) * params`.
    pub fn update(&mut self, params: &[LayerParams<S>]) -> Result<()> {
        let r = self.decay;
        let one = S::one();
        // Reuse the triple walker with shadow as the mutated operand.
        visit_pairs(&mut self.shadow, params, |s, p| {
            *s = r * *s + (one - r) * p;
        })
    }

    pub fn shadow(&self) -> &[LayerParams<S>] {
        &self.shadow
    }

    pub fn into_shadow(self) -> Vec<LayerParams<S>> {
        self.shadow
    }
}

/// Cosine decay from `base` at step 0 to `base * floor_fraction` at
/// `total_steps`:
///
/// `lr(t) = base * (floor + (1 - floor) * 0.5 * (1 + cos(pi * t / T)))`
pub fn cosine_lr<S: Scalar>(step: usize, total_steps: usize, base: S, floor_fraction: S) -> S {
    assert!(total_steps > 0, "cosine schedule needs at least one step");
    let t = S::of_f64(step as f64 / total_steps as f64);
    let half = S::of_f64(0.5);
    let cos_term = half * (S::one() + (S::PI() * t).cos());
    base * (floor_fraction + (S::one() - floor_fraction) * cos_term)
}

/// Step decay: multiply `base` by `factor` once for every drop epoch that
/// has been reached.
pub fn step_decay_lr<S: Scalar>(epoch: usize, base: S, drop_epochs: &[usize], factor: S) -> S {
    let drops = drop_epochs.iter().filter(|&&d| epoch >= d).count();
    let mut lr = base;
    for _ in 0..drops {
        lr = lr * factor;
    }
    lr
}

// ---------------------------------------------------------------------------

fn zeros_like<S: Scalar>(lp: &LayerParams<S>) -> LayerParams<S> {
    LayerParams {
        weight: lp
            .weight
            .as_ref()
            .map(|t| crate::tensor::Tensor::zeros(t.dims().to_vec())),
        bias: lp
            .bias
            .as_ref()
            .map(|t| crate::tensor::Tensor::zeros(t.dims().to_vec())),
    }
}

fn structure_error() -> Error {
    Error::shape("optimizer step", "matching parameter structures", "mismatch")
}

fn visit_pairs<S: Scalar>(
    a: &mut [LayerParams<S>],
    b: &[LayerParams<S>],
    mut f: impl FnMut(&mut S, S),
) -> Result<()> {
    if a.len() != b.len() {
        return Err(structure_error());
    }
    for (la, lb) in a.iter_mut().zip(b) {
        for (ta, tb) in la.tensors_mut().zip(lb.tensors()) {
            if ta.dims() != tb.dims() {
                return Err(structure_error());
            }
            for (va, &vb) in ta.data_mut().iter_mut().zip(tb.data()) {
                f(va, vb);
            }
        }
    }
    Ok(())
}

fn visit_triples<S: Scalar>(
    a: &mut [LayerParams<S>],
    b: &[LayerParams<S>],
    c: &mut [LayerParams<S>],
    mut f: impl FnMut(&mut S, S, &mut S),
) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() {
        return Err(structure_error());
    }
    for ((la, lb), lc) in a.iter_mut().zip(b).zip(c.iter_mut()) {
        for ((ta, tb), tc) in la.tensors_mut().zip(lb.tensors()).zip(lc.tensors_mut()) {
            if ta.dims() != tb.dims() || ta.dims() != tc.dims() {
                return Err(structure_error());
            }
            for ((va, &vb), vc) in ta
                .data_mut()
                .iter_mut()
                .zip(tb.data())
                .zip(tc.data_mut().iter_mut())
            {
                f(va, vb, vc);
            }
        }
    }
    Ok(())
}

fn visit_quads<S: Scalar>(
    a: &mut [LayerParams<S>],
    b: &[LayerParams<S>],
    c: &mut [LayerParams<S>],
    d: &mut [LayerParams<S>],
    mut f: impl FnMut(&mut S, S, &mut S, &mut S),
) -> Result<()> {
    if a.len() != b.len() || a.len() != c.len() || a.len() != d.len() {
        return Err(structure_error());
    }
    for (((la, lb), lc), ld) in a.iter_mut().zip(b).zip(c.iter_mut()).zip(d.iter_mut()) {
        for (((ta, tb), tc), td) in la
            .tensors_mut()
            .zip(lb.tensors())
            .zip(lc.tensors_mut())
            .zip(ld.tensors_mut())
        {
            if ta.dims() != tb.dims() || ta.dims() != tc.dims() || ta.dims() != td.dims() {
                return Err(structure_error());
            }
            for (((va, &vb), vc), vd) in ta
                .data_mut()
                .iter_mut()
                .zip(tb.data())
                .zip(tc.data_mut().iter_mut())
                .zip(td.data_mut().iter_mut())
            {
                f(va, vb, vc, vd);
            }
        }
    }
    Ok(())
}
