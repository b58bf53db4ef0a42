//! Adversarial attack suite: projected-gradient attacks (untargeted and
//! multi-targeted), a gradient-free square-search attack, backward-pass
//! substitution for non-differentiable defences, trained bypass
//! approximations of keyed defences, brute-force key search, and a
//! transfer harness that evaluates perturbations across models.
//!
//! Conventions shared by every attack:
//! - Inputs and perturbation budgets live in the raw `[0,1]` pixel box;
//!   whatever normalization a classifier applies happens inside the model
//!   adapter, so attack arithmetic never leaves image space.
//! - Every emitted adversarial tensor satisfies its norm budget and the
//!   `[0,1]` box bit-exactly (enforced by [`finalize_adversarial`], checked
//!   by [`AttackOutcome::validate_budget`]).
//! - All randomness flows from caller-provided [`RngStream`]s; per-restart
//!   and per-example streams are derived by index, never by execution
//!   order, so results are independent of worker count.

mod bruteforce;
mod pba;
mod pgd;
mod square;
mod transfer;

pub use bruteforce::{brute_force_keys, KeyAccuracy};
pub use pba::{
    pba_attack, prediction_agreement, train_pba, BypassArch, BypassParams, PbaTrainConfig,
    TrainedBypass,
};
pub use pgd::{bpda_attack, mt_pgd, pgd};
pub use square::square_attack;
pub use transfer::{transfer_attack, TransferCell};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, cross_entropy, ClassTarget, Network};
use crate::rng::{RngStream, StreamLabel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{apply_normalization, normalization_input_grad, NormalizationStats};
use crate::dataset::LabeledImages;

/// Norm in which a perturbation budget is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

/// Maximum allowed perturbation, in raw `[0,1]` pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub norm: Norm,
    pub epsilon: f64,
}

impl PerturbationBudget {
    /// The standard L∞ budget of 8/255.
    pub fn linf_8_255() -> Self {
        PerturbationBudget {
            norm: Norm::Linf,
            epsilon: 8.0 / 255.0,
        }
    }

    /// The standard L2 budget of 0.5.
    pub fn l2_half() -> Self {
        PerturbationBudget {
            norm: Norm::L2,
            epsilon: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "perturbation budget epsilon must be positive and finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Which attack to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Pgd,
    MtPgd,
    Square,
}

/// Attack parameters shared across attack kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Gradient steps per restart (ignored by the square attack).
    pub steps: usize,
    /// Independent restarts; the strongest result is kept.
    pub restarts: usize,
    /// Gradient step size; `None` selects epsilon / 4.
    pub step_size: Option<f64>,
    /// Total forward evaluations allowed across all restarts
    /// (square attack only).
    pub query_budget: usize,
    /// Label of the stream the caller should derive attack randomness from.
    pub stream: StreamLabel,
}

impl AttackConfig {
    pub fn pgd(steps: usize, restarts: usize) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            steps,
            restarts,
            step_size: None,
            query_budget: 0,
            stream: StreamLabel::Attack,
        }
    }

    pub fn mt_pgd(steps: usize, restarts: usize) -> Self {
        AttackConfig {
            kind: AttackKind::MtPgd,
            ..AttackConfig::pgd(steps, restarts)
        }
    }

    pub fn square(query_budget: usize, restarts: usize) -> Self {
        AttackConfig {
            kind: AttackKind::Square,
            steps: 0,
            restarts,
            step_size: None,
            query_budget,
            stream: StreamLabel::Attack,
        }
    }

    /// Reference settings: 100-step PGD with 10 restarts.
    pub fn pgd_reference() -> Self {
        AttackConfig::pgd(100, 10)
    }

    /// Reference settings: 200-step multi-targeted PGD with 20 restarts.
    pub fn mt_pgd_reference() -> Self {
        AttackConfig::mt_pgd(200, 20)
    }

    /// Reference settings: square search with 10000 evaluations over
    /// 10 restarts.
    pub fn square_reference() -> Self {
        AttackConfig::square(10_000, 10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("attack restarts must be >= 1".into()));
        }
        match self.kind {
            AttackKind::Pgd | AttackKind::MtPgd => {
                if self.steps == 0 {
                    return Err(Error::InvalidArgument("attack steps must be >= 1".into()));
                }
                if let Some(a) = self.step_size {
                    if !(a > 0.0 && a.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "step size must be positive and finite, got {a}"
                        )));
                    }
                }
            }
            AttackKind::Square => {
                if self.query_budget < self.restarts {
                    return Err(Error::InvalidArgument(format!(
                        "square query budget ({}) must cover at least one \
                         evaluation per restart ({})",
                        self.query_budget, self.restarts
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective gradient step size for this budget (default epsilon / 4).
    pub fn effective_step(&self, budget: &PerturbationBudget) -> f64 {
        self.step_size.unwrap_or(budget.epsilon / 4.0)
    }
}

/// Scalar the attacker pushes upward, defined on the classifier logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackObjective {
    /// Cross-entropy of the true label: raising it degrades the correct
    /// prediction (untargeted).
    CrossEntropy { label: usize },
    /// Logit margin of a chosen wrong class over the true label:
    /// `z[target] - z[label]` (targeted).
    Margin { target: usize, label: usize },
}

impl AttackObjective {
    /// Objective value and its gradient with respect to the logits.
    pub fn value_and_dlogits<S: Scalar>(&self, logits: &[S]) -> Result<(S, Vec<S>)> {
        match *self {
            AttackObjective::CrossEntropy { label } => {
                cross_entropy(logits, ClassTarget::Hard(label))
            }
            AttackObjective::Margin { target, label } => {
                if target >= logits.len() || label >= logits.len() {
                    return Err(Error::InvalidArgument(format!(
                        "margin objective classes ({target}, {label}) out of \
                         range for {} logits",
                        logits.len()
                    )));
                }
                let mut d = vec![S::zero(); logits.len()];
                d[target] = S::one();
                d[label] = d[label] - S::one();
                Ok((logits[target] - logits[label], d))
            }
        }
    }

    /// Objective value alone.
    pub fn value<S: Scalar>(&self, logits: &[S]) -> Result<S> {
        Ok(self.value_and_dlogits(logits)?.0)
    }
}

/// Forward-only view of a classification pipeline: raw `[0,1]` image in,
/// logits out.
pub trait ForwardModel<S: Scalar>: Sync {
    fn classes(&self) -> usize;
    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>>;

    /// Predicted label at `x`.
    fn predict(&self, x: &Tensor<S>) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }
}

/// Differentiable view: can also evaluate an objective of the logits and
/// return its gradient with respect to the raw input.
pub trait GradientModel<S: Scalar>: ForwardModel<S> {
    fn objective_grad(
        &self,
        x: &Tensor<S>,
        objective: &AttackObjective,
    ) -> Result<(S, Tensor<S>)>;
}

impl<S: Scalar, M: ForwardModel<S> + ?Sized> ForwardModel<S> for &M {
    fn classes(&self) -> usize {
        (**self).classes()
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        (**self).logits(x)
    }
}

impl<S: Scalar, M: GradientModel<S> + ?Sized> GradientModel<S> for &M {
    fn objective_grad(
        &self,
        x: &Tensor<S>,
        objective: &AttackObjective,
    ) -> Result<(S, Tensor<S>)> {
        (**self).objective_grad(x, objective)
    }
}

/// `classifier(normalize(pre(x)))` with every stage optional except the
/// classifier — covers an undefended network (`pre = None`), a trained
/// bypass map feeding a defended classifier, and un-normalized pipelines.
pub struct ComposedModel<'a, S: Scalar> {
    pre: Option<&'a Network<S>>,
    stats: Option<&'a NormalizationStats>,
    net: &'a Network<S>,
    classes: usize,
}

impl<'a, S: Scalar> ComposedModel<'a, S> {
    pub fn new(
        pre: Option<&'a Network<S>>,
        stats: Option<&'a NormalizationStats>,
        net: &'a Network<S>,
        classes: usize,
    ) -> Self {
        ComposedModel {
            pre,
            stats,
            net,
            classes,
        }
    }

    /// A bare classifier over (optionally normalized) raw input.
    pub fn plain(
        net: &'a Network<S>,
        stats: Option<&'a NormalizationStats>,
        classes: usize,
    ) -> Self {
        ComposedModel::new(None, stats, net, classes)
    }

    fn normalized(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self.stats {
            Some(stats) => apply_normalization(x, stats),
            None => Ok(x.clone()),
        }
    }
}

impl<S: Scalar> ForwardModel<S> for ComposedModel<'_, S> {
    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        let staged = match self.pre {
            Some(pre) => pre.forward(x)?,
            None => x.clone(),
        };
        let out = self.net.forward(&self.normalized(&staged)?)?;
        Ok(out.into_data())
    }
}

impl<S: Scalar> GradientModel<S> for ComposedModel<'_, S> {
    fn objective_grad(
        &self,
        x: &Tensor<S>,
        objective: &AttackObjective,
    ) -> Result<(S, Tensor<S>)> {
        let (staged, pre_cache) = match self.pre {
            Some(pre) => {
                let (out, cache) = pre.forward_cached(x)?;
                (out, Some(cache))
            }
            None => (x.clone(), None),
        };
        let normed = self.normalized(&staged)?;
        let (logits, cache) = self.net.forward_cached(&normed)?;
        let (value, dlogits) = objective.value_and_dlogits(logits.data())?;
        let dlogits = Tensor::new(logits.dims().to_vec(), dlogits)?;
        let mut grad = self.net.backward_into(&cache, &dlogits, None)?;
        if let Some(stats) = self.stats {
            grad = normalization_input_grad(&grad, stats)?;
        }
        if let (Some(pre), Some(pre_cache)) = (self.pre, pre_cache.as_ref()) {
            grad = pre.backward_into(pre_cache, &grad, None)?;
        }
        Ok((value, grad))
    }
}

/// Forward-only pipeline defined by a closure — used for defended
/// pipelines whose transform is not differentiable (per-input fitting,
/// keyed shuffles evaluated without the key, ...).
pub struct FnModel<S, F>
where
    F: Fn(&Tensor<S>) -> Result<Vec<S>> + Sync,
{
    forward: F,
    classes: usize,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<S: Scalar, F> FnModel<S, F>
where
    F: Fn(&Tensor<S>) -> Result<Vec<S>> + Sync,
{
    pub fn new(classes: usize, forward: F) -> Self {
        FnModel {
            forward,
            classes,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<S: Scalar, F> ForwardModel<S> for FnModel<S, F>
where
    F: Fn(&Tensor<S>) -> Result<Vec<S>> + Sync,
{
    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        (self.forward)(x)
    }
}

/// Backward-pass stand-in for a non-differentiable transform.
pub enum Surrogate<'a, S> {
    /// Pretend the transform's Jacobian is the identity.
    Identity,
    /// Differentiate through a stand-in network instead.
    Network(&'a Network<S>),
}

/// Model whose forward pass applies an exact, possibly non-differentiable
/// transform before the classifier, while gradients substitute a
/// differentiable surrogate for that transform.
pub struct BpdaModel<'a, S: Scalar, F>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    exact: F,
    surrogate: Surrogate<'a, S>,
    classifier: ComposedModel<'a, S>,
}

impl<'a, S: Scalar, F> BpdaModel<'a, S, F>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    pub fn new(exact: F, surrogate: Surrogate<'a, S>, classifier: ComposedModel<'a, S>) -> Self {
        BpdaModel {
            exact,
            surrogate,
            classifier,
        }
    }
}

impl<S: Scalar, F> ForwardModel<S> for BpdaModel<'_, S, F>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    fn classes(&self) -> usize {
        self.classifier.classes()
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        self.classifier.logits(&(self.exact)(x)?)
    }
}

impl<S: Scalar, F> GradientModel<S> for BpdaModel<'_, S, F>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    fn objective_grad(
        &self,
        x: &Tensor<S>,
        objective: &AttackObjective,
    ) -> Result<(S, Tensor<S>)> {
        let transformed = (self.exact)(x)?;
        let (value, grad_t) = self.classifier.objective_grad(&transformed, objective)?;
        let grad = match &self.surrogate {
            Surrogate::Identity => {
                if grad_t.dims() != x.dims() {
                    return Err(Error::shape(
                        "BpdaModel identity surrogate",
                        format!("{:?}", x.dims()),
                        format!("{:?}", grad_t.dims()),
                    ));
                }
                grad_t
            }
            Surrogate::Network(net) => {
                let (out, cache) = net.forward_cached(x)?;
                let grad_t = grad_t.reshaped(out.dims().to_vec())?;
                net.backward_into(&cache, &grad_t, None)?
            }
        };
        Ok((value, grad))
    }
}

/// Wrapper that counts forward and gradient evaluations — instrumentation
/// for query-budget and gradient-freeness assertions.
pub struct CountingModel<'a, S: Scalar, M: ForwardModel<S>> {
    inner: &'a M,
    forwards: AtomicU64,
    backwards: AtomicU64,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<'a, S: Scalar, M: ForwardModel<S>> CountingModel<'a, S, M> {
    pub fn new(inner: &'a M) -> Self {
        CountingModel {
            inner,
            forwards: AtomicU64::new(0),
            backwards: AtomicU64::new(0),
            _scalar: std::marker::PhantomData,
        }
    }

    /// Forward evaluations so far (gradient evaluations include one).
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    /// Gradient evaluations so far.
    pub fn backward_count(&self) -> u64 {
        self.backwards.load(Ordering::Relaxed)
    }
}

impl<S: Scalar, M: ForwardModel<S>> ForwardModel<S> for CountingModel<'_, S, M> {
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn logits(&self, x: &Tensor<S>) -> Result<Vec<S>> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.inner.logits(x)
    }
}

impl<S: Scalar, M: GradientModel<S>> GradientModel<S> for CountingModel<'_, S, M> {
    fn objective_grad(
        &self,
        x: &Tensor<S>,
        objective: &AttackObjective,
    ) -> Result<(S, Tensor<S>)> {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        self.backwards.fetch_add(1, Ordering::Relaxed);
        self.inner.objective_grad(x, objective)
    }
}

/// Project a perturbation into the norm ball and keep `x + delta` inside
/// the `[0,1]` box. This is the fast in-loop projection; the emitted
/// adversarial tensor additionally goes through [`finalize_adversarial`],
/// which guarantees the invariants bit-exactly.
pub fn project<S: Scalar>(
    delta: &mut Tensor<S>,
    x: &Tensor<S>,
    budget: &PerturbationBudget,
) -> Result<()> {
    if delta.dims() != x.dims() {
        return Err(Error::shape(
            "project",
            format!("{:?}", x.dims()),
            format!("{:?}", delta.dims()),
        ));
    }
    let eps = S::of_f64(budget.epsilon);
    match budget.norm {
        Norm::Linf => delta.clamp_inplace(-eps, eps),
        Norm::L2 => {
            let norm = delta.l2_norm();
            if norm > budget.epsilon {
                let scale = S::of_f64(budget.epsilon / norm);
                delta.map_inplace(|v| v * scale);
            }
        }
    }
    for (d, &xv) in delta.data_mut().iter_mut().zip(x.data()) {
        // Rewrite only box violators so in-range deltas stay bit-identical.
        let moved = xv + *d;
        if moved < S::zero() {
            *d = S::zero() - xv;
        } else if moved > S::one() {
            *d = S::one() - xv;
        }
    }
    Ok(())
}

/// Build the adversarial image from a proposed perturbed point, enforcing
/// the `[0,1]` box and the norm budget so that the *stored* tensor passes
/// a bit-level re-check: every element lies in `[0,1]` and the recomputed
/// `x_adv - x` satisfies the budget in floating point.
pub fn finalize_adversarial<S: Scalar>(
    x: &Tensor<S>,
    proposed: &Tensor<S>,
    budget: &PerturbationBudget,
) -> Result<Tensor<S>> {
    if proposed.dims() != x.dims() {
        return Err(Error::shape(
            "finalize_adversarial",
            format!("{:?}", x.dims()),
            format!("{:?}", proposed.dims()),
        ));
    }
    let eps = S::of_f64(budget.epsilon);
    let mut adv = proposed.clone();
    match budget.norm {
        Norm::Linf => {
            for (a, &xv) in adv.data_mut().iter_mut().zip(x.data()) {
                // Shrink the interval edge by an ulp at a time until the
                // rounded difference fits the budget; rounding can push
                // `x + eps - x` one ulp past eps, so one or two steps at
                // most.
                let mut hi = xv + eps;
                while hi - xv > eps {
                    hi = hi - ulp_at(hi);
                }
                let mut lo = xv - eps;
                while xv - lo > eps {
                    lo = lo + ulp_at(lo);
                }
                let boxed = (*a).max(S::zero()).min(S::one());
                *a = boxed.max(lo).min(hi);
            }
        }
        Norm::L2 => {
            for (a, &xv) in adv.data_mut().iter_mut().zip(x.data()) {
                let boxed = (*a).max(S::zero()).min(S::one());
                *a = xv + (boxed - xv);
            }
            // Rescale until the recomputed norm fits. Each retry widens
            // the shrink margin so per-element rounding noise (which does
            // not shrink with the scale) cannot stall the loop.
            let mut margin = 1e-7;
            loop {
                let mut delta: Vec<S> = adv
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&a, &xv)| a - xv)
                    .collect();
                let norm = delta
                    .iter()
                    .fold(0.0f64, |acc, &d| acc + d.into_f64() * d.into_f64())
                    .sqrt();
                if norm <= budget.epsilon {
                    break;
                }
                let scale = S::of_f64((budget.epsilon / norm) * (1.0 - margin));
                margin *= 8.0;
                for d in delta.iter_mut() {
                    *d = *d * scale;
                }
                for ((a, &xv), &d) in adv.data_mut().iter_mut().zip(x.data()).zip(&delta) {
                    *a = (xv + d).max(S::zero()).min(S::one());
                }
            }
        }
    }
    Ok(adv)
}

/// Magnitude of one unit in the last place at `v`, computed in the scalar
/// type itself.
fn ulp_at<S: Scalar>(v: S) -> S {
    let mag = v.abs().max(S::min_positive_value());
    // epsilon() is the ulp of 1.0; scale it to v's binade (next power of
    // two at or above |v| keeps the step >= the true ulp).
    let exp = mag.into_f64().log2().ceil();
    S::of_f64(2.0f64.powf(exp)) * S::epsilon()
}

/// Result of one attack on one example.
#[derive(Debug, Clone)]
pub struct AttackOutcome<S> {
    /// The adversarial image (raw `[0,1]` space, budget-satisfying).
    pub adversarial: Tensor<S>,
    /// Whether the attacked model misclassifies `adversarial`.
    pub success: bool,
    /// Attack objective value at `adversarial` (higher favours the
    /// attacker; cross-entropy for untargeted gradient attacks, margin for
    /// targeted, negated prediction margin for square search).
    pub best_loss: f64,
    /// Model forward evaluations consumed.
    pub forward_queries: u64,
    /// Model gradient evaluations consumed.
    pub backward_queries: u64,
    /// Restarts abandoned because a gradient or loss went non-finite.
    pub skipped_restarts: usize,
}

impl<S: Scalar> AttackOutcome<S> {
    /// Bit-level invariant check: `adversarial` is inside `[0,1]` and
    /// within the budget of `original`. The L∞ bound is checked against
    /// epsilon converted to `S` — the binding representation in an
    /// `S`-typed pipeline; L2 accumulates in `f64` as everywhere else.
    pub fn validate_budget(
        &self,
        original: &Tensor<S>,
        budget: &PerturbationBudget,
    ) -> Result<()> {
        if self.adversarial.dims() != original.dims() {
            return Err(Error::shape(
                "AttackOutcome::validate_budget",
                format!("{:?}", original.dims()),
                format!("{:?}", self.adversarial.dims()),
            ));
        }
        let eps = S::of_f64(budget.epsilon);
        for (&a, &xv) in self.adversarial.data().iter().zip(original.data()) {
            if !(a >= S::zero() && a <= S::one()) {
                return Err(Error::InvalidArgument(format!(
                    "adversarial pixel {a} outside [0,1]"
                )));
            }
            if budget.norm == Norm::Linf {
                let d = (a - xv).abs();
                if d > eps {
                    return Err(Error::InvalidArgument(format!(
                        "adversarial pixel deviates by {d} > epsilon {}",
                        budget.epsilon
                    )));
                }
            }
        }
        if budget.norm == Norm::L2 {
            let norm = self
                .adversarial
                .data()
                .iter()
                .zip(original.data())
                .fold(0.0f64, |acc, (&a, &xv)| {
                    let d = (a - xv).into_f64();
                    acc + d * d
                })
                .sqrt();
            if norm > budget.epsilon {
                return Err(Error::InvalidArgument(format!(
                    "adversarial L2 deviation {norm} > epsilon {}",
                    budget.epsilon
                )));
            }
        }
        Ok(())
    }

    /// Persist as a perturbation tensor (`delta.lnt`), the full
    /// adversarial image (`adversarial.lnt`), and a JSON metadata sidecar.
    pub fn save_dir(
        &self,
        dir: impl AsRef<Path>,
        original: &Tensor<S>,
        kind: AttackKind,
        budget: &PerturbationBudget,
    ) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let delta = self.adversarial.sub(original)?;
        delta.save_lnt(dir.join("delta.lnt"))?;
        self.adversarial.save_lnt(dir.join("adversarial.lnt"))?;
        let meta = OutcomeMetadata {
            kind,
            budget: *budget,
            success: self.success,
            best_loss: self.best_loss,
            forward_queries: self.forward_queries,
            backward_queries: self.backward_queries,
            skipped_restarts: self.skipped_restarts,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// JSON sidecar stored next to attack outcome tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMetadata {
    pub kind: AttackKind,
    pub budget: PerturbationBudget,
    pub success: bool,
    pub best_loss: f64,
    pub forward_queries: u64,
    pub backward_queries: u64,
    pub skipped_restarts: usize,
}

/// Run the configured attack against one example.
pub fn run_attack<S: Scalar, M: GradientModel<S>>(
    model: &M,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>> {
    match cfg.kind {
        AttackKind::Pgd => pgd(model, x, label, budget, cfg, stream),
        AttackKind::MtPgd => mt_pgd(model, x, label, budget, cfg, stream),
        AttackKind::Square => square_attack(model, x, label, budget, cfg, stream),
    }
}

/// Attack every example of a labeled set in parallel. Example `i` draws
/// its randomness from `stream.split(i)`, so results do not depend on the
/// worker count.
pub fn attack_batch<S: Scalar, M: GradientModel<S>>(
    model: &M,
    data: &LabeledImages<S>,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<Vec<AttackOutcome<S>>> {
    budget.validate()?;
    cfg.validate()?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            run_attack(
                model,
                data.image(i),
                data.label(i),
                budget,
                cfg,
                &stream.split(i as u64),
            )
        })
        .collect()
}

/// Fraction of examples whose outcome left the model correct — the robust
/// accuracy implied by a batch of attack outcomes.
pub fn robust_accuracy<S: Scalar>(outcomes: &[AttackOutcome<S>]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let surviving = outcomes.iter().filter(|o| !o.success).count();
    surviving as f64 / outcomes.len() as f64
}
