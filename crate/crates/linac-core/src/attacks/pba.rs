//! Bypass approximation: train a small differentiable map that imitates a
//! keyed input transform so the frozen defended classifier can be attacked
//! end to end with gradients, without ever touching the private key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImages;
use crate::error::{Error, Result};
use crate::nn::{accumulate_params, cross_entropy, ClassTarget, LayerParams, LayerSpec, Network};
use crate::optim::{momentum_step, step_decay_lr, MomentumState};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{apply_normalization, normalization_input_grad, NormalizationStats};

use super::{
    run_attack, AttackConfig, AttackOutcome, ComposedModel, ForwardModel, PerturbationBudget,
};
use rayon::prelude::*;

/// Architecture of the trainable stand-in map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "arch")]
pub enum BypassArch {
    /// One 3x3 convolution with bias, RGB in, `hidden` channels out —
    /// imitates a per-image fitted-network activation transform.
    Conv { hidden: usize },
    /// One tile-shared linear map without bias, identity-initialised —
    /// imitates a fixed pixel permutation applied per tile.
    BlockLinear { block: usize, channels: usize },
}

impl BypassArch {
    pub fn layer_spec(&self) -> LayerSpec {
        match *self {
            BypassArch::Conv { hidden } => LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: hidden,
                kernel: 3,
                stride: 1,
                bias: true,
            },
            BypassArch::BlockLinear { block, channels } => {
                LayerSpec::BlockLinear { block, channels }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BypassArch::Conv { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument(
                        "bypass conv needs at least one output channel".into(),
                    ));
                }
            }
            BypassArch::BlockLinear { block, channels } => {
                if block == 0 || channels == 0 {
                    return Err(Error::InvalidArgument(
                        "bypass block-linear needs positive block and channels".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Fresh map parameters: random for the convolution, exact identity
    /// for the tile-shared linear map (so it starts as a no-op).
    pub fn init<S: Scalar>(&self, stream: &mut RngStream) -> Result<Network<S>> {
        self.validate()?;
        match *self {
            BypassArch::Conv { .. } => Network::init(vec![self.layer_spec()], stream),
            BypassArch::BlockLinear { block, channels } => {
                let f = block * block * channels;
                let weight = Tensor::from_fn(vec![f, f], |at| {
                    if at / f == at % f {
                        S::one()
                    } else {
                        S::zero()
                    }
                });
                let params = LayerParams {
                    weight: Some(weight),
                    bias: None,
                };
                Network::from_parts(vec![self.layer_spec()], vec![params])
            }
        }
    }
}

/// A trained (or freshly initialised) bypass map.
#[derive(Debug, Clone)]
pub struct BypassParams<S> {
    pub arch: BypassArch,
    pub map: Network<S>,
}

impl<S: Scalar> BypassParams<S> {
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("bypass.json"),
            serde_json::to_string_pretty(&self.arch)?,
        )?;
        self.map.save_dir(dir)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let arch: BypassArch =
            serde_json::from_str(&std::fs::read_to_string(dir.join("bypass.json"))?)?;
        arch.validate()?;
        let map = Network::load_dir(dir)?;
        if map.specs() != [arch.layer_spec()] {
            return Err(Error::Format(
                "bypass network does not match the stored architecture".into(),
            ));
        }
        Ok(BypassParams { arch, map })
    }
}

/// Hyperparameters for bypass training (SGD with momentum over the map
/// only; the defended classifier stays frozen).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Epochs at which the learning rate is multiplied by `drop_factor`.
    pub drop_epochs: Vec<usize>,
    pub drop_factor: f64,
    pub momentum: f64,
}

impl PbaTrainConfig {
    /// Reference schedule for the convolutional (activation-imitating)
    /// bypass: lr 0.1 over 100 epochs with tenfold drops at 65/80/90/95.
    pub fn conv_reference() -> Self {
        PbaTrainConfig {
            epochs: 100,
            batch_size: 128,
            base_lr: 0.1,
            drop_epochs: vec![65, 80, 90, 95],
            drop_factor: 0.1,
            momentum: 0.9,
        }
    }

    /// Reference schedule for the identity-initialised linear bypass:
    /// lr 1e-3 over 300 epochs with tenfold drops at 275/285/290/295.
    pub fn linear_reference() -> Self {
        PbaTrainConfig {
            epochs: 300,
            batch_size: 128,
            base_lr: 1e-3,
            drop_epochs: vec![275, 285, 290, 295],
            drop_factor: 0.1,
            momentum: 0.9,
        }
    }

    /// The same schedule compressed to `epochs`, drop points scaled
    /// proportionally (duplicates and out-of-range drops removed).
    pub fn scaled_to(&self, epochs: usize, batch_size: usize) -> Self {
        let mut drops: Vec<usize> = self
            .drop_epochs
            .iter()
            .map(|&d| ((d as f64 / self.epochs as f64) * epochs as f64).round() as usize)
            .filter(|&d| d > 0 && d < epochs)
            .collect();
        drops.dedup();
        PbaTrainConfig {
            epochs,
            batch_size,
            drop_epochs: drops,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "bypass training needs epochs >= 1 and batch_size >= 1".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bypass base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bypass drop_factor must be in (0, 1], got {}",
                self.drop_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "bypass momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self
            .drop_epochs
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "bypass drop epochs must be strictly increasing".into(),
            ));
        }
        if self.drop_epochs.iter().any(|&d| d >= self.epochs) {
            return Err(Error::InvalidArgument(
                "bypass drop epochs must precede the final epoch".into(),
            ));
        }
        Ok(())
    }
}

/// Bypass training result: the trained map plus the mean loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainedBypass<S> {
    pub bypass: BypassParams<S>,
    pub epoch_losses: Vec<f64>,
}

/// Train a bypass map against a frozen defended classifier.
///
/// The composite being optimised is `defended(normalize(map(x)))` — with
/// `stats = None` the map feeds the classifier directly. Only the map's
/// parameters receive updates; the classifier is immutably borrowed and
/// bit-unchanged by construction.
pub fn train_pba<S: Scalar>(
    defended: &Network<S>,
    stats: Option<&NormalizationStats>,
    train: &LabeledImages<S>,
    arch: BypassArch,
    cfg: &PbaTrainConfig,
    stream: &mut RngStream,
) -> Result<TrainedBypass<S>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("bypass training set is empty".into()));
    }

    let mut map = arch.init::<S>(stream)?;
    let mut momentum = MomentumState::new(map.params(), cfg.momentum, false);
    let mut example_grads = map.zeros_like_params();
    let mut batch_grads = map.zeros_like_params();
    let n = train.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = step_decay_lr(epoch, cfg.base_lr, &cfg.drop_epochs, cfg.drop_factor);
        let order = stream.permutation(n);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            for t in batch_grads.iter_mut().flat_map(|lp| lp.tensors_mut()) {
                t.data_mut().fill(S::zero());
            }
            let mut batch_loss = S::zero();
            for &idx in batch {
                let (mapped, map_cache) = map.forward_cached(train.image(idx))?;
                let staged = match stats {
                    Some(st) => apply_normalization(&mapped, st)?,
                    None => mapped,
                };
                let (logits, net_cache) = defended.forward_cached(&staged)?;
                let (loss, dlogits) =
                    cross_entropy(logits.data(), ClassTarget::Hard(train.label(idx)))?;
                batch_loss = batch_loss + loss;
                let dlogits = Tensor::new(logits.dims().to_vec(), dlogits)?;
                let mut grad = defended.backward_into(&net_cache, &dlogits, None)?;
                if let Some(st) = stats {
                    grad = normalization_input_grad(&grad, st)?;
                }
                map.backward_into(&map_cache, &grad, Some(&mut example_grads))?;
                accumulate_params(&mut batch_grads, &example_grads)?;
            }
            let scale = S::of_f64(1.0 / batch.len() as f64);
            for t in batch_grads.iter_mut().flat_map(|lp| lp.tensors_mut()) {
                t.map_inplace(|v| v * scale);
            }
            let mean_loss = (batch_loss * scale).into_f64();
            if !mean_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "bypass training loss at epoch {epoch}, batch {batches}"
                )));
            }
            epoch_loss += mean_loss;
            batches += 1;
            momentum_step(
                map.params_mut(),
                &batch_grads,
                &mut momentum,
                S::of_f64(lr),
                S::zero(),
            )?;
        }
        epoch_losses.push(epoch_loss / batches.max(1) as f64);
        log::info!(
            "bypass epoch {epoch}: loss {:.4}, lr {lr:.5}",
            epoch_loss / batches.max(1) as f64
        );
    }

    Ok(TrainedBypass {
        bypass: BypassParams { arch, map },
        epoch_losses,
    })
}

/// Attack the differentiable bypass composite
/// `defended(normalize(map(x)))`. The emitted perturbations are intended
/// to be *evaluated* against the true keyed pipeline by the caller; the
/// attack itself never sees the key.
#[allow(clippy::too_many_arguments)]
pub fn pba_attack<S: Scalar>(
    bypass: &BypassParams<S>,
    defended: &Network<S>,
    stats: Option<&NormalizationStats>,
    classes: usize,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>> {
    let model = ComposedModel::new(Some(&bypass.map), stats, defended, classes);
    run_attack(&model, x, label, budget, cfg, stream)
}

/// Fraction of examples on which two pipelines predict the same label —
/// the fidelity metric for a trained bypass against the true defence.
pub fn prediction_agreement<S, A, B>(a: &A, b: &B, data: &LabeledImages<S>) -> Result<f64>
where
    S: Scalar,
    A: ForwardModel<S>,
    B: ForwardModel<S>,
{
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "prediction_agreement on empty set".into(),
        ));
    }
    let matches: Result<Vec<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(a.predict(data.image(i))? == b.predict(data.image(i))?))
        .collect();
    let matches = matches?;
    Ok(matches.iter().filter(|&&m| m).count() as f64 / data.len() as f64)
}
