//! JSON experiment configuration: schema, validation with path-precise
//! messages, and resolution into concrete core types.
//!
//! Commands are deterministic functions of their config: every random draw
//! is derived from a key written in it, and all validation runs before any
//! compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use linac_core::attacks::{AttackConfig, BypassArch, Norm, PbaTrainConfig, PerturbationBudget};
use linac_core::classifier::TrainConfig;
use linac_core::dataset::{
    generate_synthetic, load_cifar10_dir, LabeledImages, SyntheticConfig,
};
use linac_core::error::{Error, Result};
use linac_core::inr::{FitConfig, InrArch};
use linac_core::rng::PrivateKey;
use linac_core::tensor::Tensor;
use linac_core::transforms::{
    block_pixel_shuffle, linac_reconstruction, linac_transform, LinacConfig, ShuffleKeySpec,
};

/// Named hyperparameter bundles: the full-scale reference settings and the
/// scaled-down settings sized for minutes-long desk runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-scale reference hyperparameters.
    PaperAppendixA,
    /// Scaled-down hyperparameters for fast runs.
    DeskSmall,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("{path}: {msg}"))
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Where the experiment's images come from.
///
/// `kind` selects one of:
/// * `"synthetic"` — keyed procedural dataset (`key`, `train`, `test`,
///   `size` = `"standard"` 32x32 or `"small"` 16x16);
/// * `"dir"` — a directory with `train/` and `test/` image bundles as
///   written by `linac synth`;
/// * `"cifar10"` — a directory of CIFAR-10 binary batch files.
///
/// `train_subset` / `test_subset` truncate after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
}

impl DatasetBlock {
    pub fn validate(&self, default_key: Option<i64>) -> Result<()> {
        match self.kind.as_str() {
            "synthetic" => {
                if self.key.or(default_key).is_none() {
                    return Err(invalid(
                        "dataset.key",
                        "required for kind=synthetic (no top-level key to inherit)",
                    ));
                }
                match self.size.as_deref() {
                    None | Some("standard") | Some("small") => {}
                    Some(other) => {
                        return Err(invalid(
                            "dataset.size",
                            format!("expected \"standard\" or \"small\", got {other:?}"),
                        ))
                    }
                }
            }
            "dir" | "cifar10" => {
                let path = self.path.as_ref().ok_or_else(|| {
                    invalid("dataset.path", format!("required for kind={}", self.kind))
                })?;
                if !path.is_dir() {
                    return Err(invalid(
                        "dataset.path",
                        format!("no such directory: {}", path.display()),
                    ));
                }
                if self.kind == "cifar10" && !path.join("test_batch.bin").is_file() {
                    return Err(invalid(
                        "dataset.path",
                        format!("{} has no test_batch.bin", path.display()),
                    ));
                }
            }
            other => {
                return Err(invalid(
                    "dataset.kind",
                    format!("expected \"synthetic\", \"dir\" or \"cifar10\", got {other:?}"),
                ))
            }
        }
        Ok(())
    }

    /// Load (or generate) the train/test pair, applying subset truncation.
    pub fn load(
        &self,
        default_key: Option<i64>,
    ) -> Result<(LabeledImages<f32>, LabeledImages<f32>)> {
        self.validate(default_key)?;
        let (train, test) = match self.kind.as_str() {
            "synthetic" => {
                let key = PrivateKey(self.key.or(default_key).expect("validated"));
                let train_n = self.train.unwrap_or(256);
                let test_n = self.test.unwrap_or(64);
                let cfg = match self.size.as_deref() {
                    Some("small") => SyntheticConfig::small(key, train_n, test_n),
                    _ => SyntheticConfig::standard(key, train_n, test_n),
                };
                generate_synthetic::<f32>(&cfg)?
            }
            "dir" => {
                let path = self.path.as_ref().expect("validated");
                (
                    LabeledImages::load_dir(path.join("train"))?,
                    LabeledImages::load_dir(path.join("test"))?,
                )
            }
            "cifar10" => {
                let path = self.path.as_ref().expect("validated");
                load_cifar10_dir::<f32>(path, self.train, self.test)?
            }
            _ => unreachable!("validated"),
        };
        let train = match self.train_subset {
            Some(n) => train.take(n),
            None => train,
        };
        let test = match self.test_subset {
            Some(n) => test.take(n),
            None => test,
        };
        if train.is_empty() && test.is_empty() {
            return Err(invalid("dataset", "loaded zero images"));
        }
        Ok((train, test))
    }

    /// Short identifier for report metadata.
    pub fn id(&self) -> String {
        match self.kind.as_str() {
            "synthetic" => format!(
                "synthetic-{}",
                self.size.as_deref().unwrap_or("standard")
            ),
            _ => format!(
                "{}:{}",
                self.kind,
                self.path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default()
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Transform
// ---------------------------------------------------------------------------

/// The keyed input transform applied before the classifier.
///
/// `kind` selects `"linac"` (keyed activation-image transform),
/// `"linac-reconstruction"` (same fit, colour output instead of hidden
/// activations), `"shuffle"` (keyed block pixel shuffle) or `"identity"`.
/// Keyed kinds need `key` here or a top-level key to inherit. Unset fields
/// fall back to the preset (default: desk-small).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformBlock {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repr_layer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_pixels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_floor: Option<f64>,
    /// Block side length for kind=shuffle (default 4).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
}

impl TransformBlock {
    pub fn identity() -> Self {
        TransformBlock {
            kind: "identity".into(),
            key: None,
            preset: None,
            hidden_layers: None,
            hidden_units: None,
            frequencies: None,
            repr_layer: None,
            epochs: None,
            batch_pixels: None,
            learning_rate: None,
            cosine_floor: None,
            block: None,
        }
    }

    fn required_key(&self, default_key: Option<i64>) -> Result<PrivateKey> {
        self.key.or(default_key).map(PrivateKey).ok_or_else(|| {
            invalid(
                "transform.key",
                format!(
                    "required for kind={} (no top-level key to inherit)",
                    self.kind
                ),
            )
        })
    }

    /// Resolve into a concrete, self-contained transform. All validation
    /// errors surface here, before any compute.
    pub fn resolve(&self, default_key: Option<i64>) -> Result<ResolvedTransform> {
        match self.kind.as_str() {
            "identity" => Ok(ResolvedTransform::Identity),
            "shuffle" => {
                let spec = ShuffleKeySpec {
                    block: self.block.unwrap_or(4),
                    key: self.required_key(default_key)?,
                };
                if spec.block == 0 {
                    return Err(invalid("transform.block", "must be >= 1"));
                }
                Ok(ResolvedTransform::Shuffle(spec))
            }
            "linac" | "linac-reconstruction" => {
                let key = self.required_key(default_key)?;
                let base = match self.preset.unwrap_or(Preset::DeskSmall) {
                    Preset::PaperAppendixA => LinacConfig::reference(key),
                    Preset::DeskSmall => LinacConfig::desk(key),
                };
                let arch = InrArch {
                    hidden_layers: self.hidden_layers.unwrap_or(base.arch.hidden_layers),
                    hidden_units: self.hidden_units.unwrap_or(base.arch.hidden_units),
                    frequencies: self.frequencies.unwrap_or(base.arch.frequencies),
                };
                let fit = FitConfig {
                    epochs: self.epochs.unwrap_or(base.fit.epochs),
                    batch_pixels: self.batch_pixels.unwrap_or(base.fit.batch_pixels),
                    learning_rate: self.learning_rate.unwrap_or(base.fit.learning_rate),
                    cosine_floor: self.cosine_floor.unwrap_or(base.fit.cosine_floor),
                    key,
                };
                if self.kind == "linac-reconstruction" {
                    fit.validate()?;
                    arch.validate()?;
                    Ok(ResolvedTransform::LinacReconstruction { fit, arch })
                } else {
                    let cfg = LinacConfig {
                        fit,
                        arch,
                        repr_layer: self.repr_layer.unwrap_or(base.repr_layer),
                    };
                    cfg.validate()
                        .map_err(|e| invalid("transform", e))?;
                    Ok(ResolvedTransform::Linac(cfg))
                }
            }
            other => Err(invalid(
                "transform.kind",
                format!(
                    "expected \"linac\", \"linac-reconstruction\", \"shuffle\" or \
                     \"identity\", got {other:?}"
                ),
            )),
        }
    }
}

/// A fully-resolved input transform: every hyperparameter concrete, ready
/// to apply, serializable for artifact sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResolvedTransform {
    Identity,
    Shuffle(ShuffleKeySpec),
    Linac(LinacConfig),
    LinacReconstruction { fit: FitConfig, arch: InrArch },
}

impl ResolvedTransform {
    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            ResolvedTransform::Identity => Ok(x.clone()),
            ResolvedTransform::Shuffle(spec) => block_pixel_shuffle(x, spec),
            ResolvedTransform::Linac(cfg) => linac_transform(x, cfg),
            ResolvedTransform::LinacReconstruction { fit, arch } => {
                linac_reconstruction(x, fit, arch)
            }
        }
    }

    /// The same transform under a different private key (key search).
    pub fn with_key(&self, key: PrivateKey) -> Self {
        let mut out = self.clone();
        match &mut out {
            ResolvedTransform::Identity => {}
            ResolvedTransform::Shuffle(spec) => spec.key = key,
            ResolvedTransform::Linac(cfg) => cfg.fit.key = key,
            ResolvedTransform::LinacReconstruction { fit, .. } => fit.key = key,
        }
        out
    }

    /// The private key, for keyed kinds.
    pub fn key(&self) -> Option<PrivateKey> {
        match self {
            ResolvedTransform::Identity => None,
            ResolvedTransform::Shuffle(spec) => Some(spec.key),
            ResolvedTransform::Linac(cfg) => Some(cfg.fit.key),
            ResolvedTransform::LinacReconstruction { fit, .. } => Some(fit.key),
        }
    }

    pub fn kind_id(&self) -> &'static str {
        match self {
            ResolvedTransform::Identity => "identity",
            ResolvedTransform::Shuffle(_) => "shuffle",
            ResolvedTransform::Linac(_) => "linac",
            ResolvedTransform::LinacReconstruction { .. } => "linac-reconstruction",
        }
    }

    /// Whether the classifier pipeline normalizes by default: activation
    /// images feed the classifier raw; everything else keeps pixel-space
    /// statistics worth normalizing.
    pub fn default_normalize(&self) -> bool {
        !matches!(self, ResolvedTransform::Linac(_))
    }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

/// Classifier architecture/training settings. Unset fields fall back to the
/// preset (default: desk-small).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierBlock {
    pub preset: Option<Preset>,
    /// Training-randomness key; defaults to the top-level key.
    pub key: Option<i64>,
    /// Fit per-channel normalization on the (transformed) training set.
    /// Default depends on the transform kind.
    pub normalize: Option<bool>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub lr_drops: Option<Vec<usize>>,
    pub lr_factor: Option<f64>,
    pub weight_decay: Option<f64>,
    pub momentum: Option<f64>,
    pub nesterov: Option<bool>,
    pub ema_decay: Option<f64>,
    pub cutmix: Option<bool>,
    pub init_gain: Option<f64>,
    pub eval_every: Option<usize>,
}

impl ClassifierBlock {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let base = match self.preset.unwrap_or(Preset::DeskSmall) {
            Preset::PaperAppendixA => TrainConfig::full_scale(),
            Preset::DeskSmall => TrainConfig::desk(),
        };
        let cfg = TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            base_lr: self.base_lr.unwrap_or(base.base_lr),
            lr_drops: self.lr_drops.clone().unwrap_or(base.lr_drops),
            lr_factor: self.lr_factor.unwrap_or(base.lr_factor),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            momentum: self.momentum.unwrap_or(base.momentum),
            nesterov: self.nesterov.unwrap_or(base.nesterov),
            ema_decay: self.ema_decay.unwrap_or(base.ema_decay),
            cutmix: self.cutmix.unwrap_or(base.cutmix),
            init_gain: self.init_gain.unwrap_or(base.init_gain),
            eval_every: self.eval_every.unwrap_or(base.eval_every),
        };
        cfg.validate().map_err(|e| invalid("classifier", e))?;
        Ok(cfg)
    }

    pub fn training_key(&self, default_key: Option<i64>) -> Result<PrivateKey> {
        self.key.or(default_key).map(PrivateKey).ok_or_else(|| {
            invalid(
                "classifier.key",
                "required (no top-level key to inherit)",
            )
        })
    }
}

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

/// One attack to run against the defended pipeline.
///
/// `kind` ∈ {`"pgd"`, `"mt-pgd"`, `"square"`, `"pba"`}. `pba` first trains
/// a differentiable bypass of the transform against the frozen classifier,
/// then runs the inner gradient attack on that composite; its perturbations
/// are still evaluated on the true pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub kind: String,
    /// Report row label; defaults to `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `"linf"` (default) or `"l2"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    /// Default 8/255 for linf, 0.5 for l2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_budget: Option<usize>,
    /// Bypass family for kind=pba: `"conv"` or `"block-linear"`; default
    /// matches the transform (activation transforms → conv, shuffles →
    /// block-linear).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_lr: Option<f64>,
    /// Training examples for the bypass fit (default: the whole train set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bypass_train_subset: Option<usize>,
}

impl AttackBlock {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.clone())
    }

    pub fn budget(&self, path: &str) -> Result<PerturbationBudget> {
        let budget = match self.norm.as_deref().unwrap_or("linf") {
            "linf" => PerturbationBudget {
                norm: Norm::Linf,
                epsilon: self.epsilon.unwrap_or(8.0 / 255.0),
            },
            "l2" => PerturbationBudget {
                norm: Norm::L2,
                epsilon: self.epsilon.unwrap_or(0.5),
            },
            other => {
                return Err(invalid(
                    &format!("{path}.norm"),
                    format!("expected \"linf\" or \"l2\", got {other:?}"),
                ))
            }
        };
        budget
            .validate()
            .map_err(|e| invalid(&format!("{path}.epsilon"), e))?;
        Ok(budget)
    }

    /// The gradient/search configuration (for `pba`, the inner attack run
    /// on the bypass composite).
    pub fn attack_config(&self, path: &str) -> Result<AttackConfig> {
        let cfg = match self.kind.as_str() {
            "pgd" | "pba" => {
                let mut cfg =
                    AttackConfig::pgd(self.steps.unwrap_or(100), self.restarts.unwrap_or(10));
                cfg.step_size = self.step_size;
                cfg
            }
            "mt-pgd" => {
                let mut cfg =
                    AttackConfig::mt_pgd(self.steps.unwrap_or(200), self.restarts.unwrap_or(20));
                cfg.step_size = self.step_size;
                cfg
            }
            "square" => AttackConfig::square(
                self.query_budget.unwrap_or(10_000),
                self.restarts.unwrap_or(10),
            ),
            other => {
                return Err(invalid(
                    &format!("{path}.kind"),
                    format!(
                        "expected \"pgd\", \"mt-pgd\", \"square\" or \"pba\", got {other:?}"
                    ),
                ))
            }
        };
        cfg.validate()
            .map_err(|e| invalid(path, e))?;
        Ok(cfg)
    }

    /// Bypass family + schedule for kind=pba.
    pub fn bypass_plan(
        &self,
        path: &str,
        transform: &ResolvedTransform,
        input_channels: usize,
    ) -> Result<(BypassArch, PbaTrainConfig)> {
        let family = match self.bypass.as_deref() {
            Some(f) => f.to_string(),
            None => match transform {
                ResolvedTransform::Shuffle(_) => "block-linear".into(),
                _ => "conv".into(),
            },
        };
        let arch = match family.as_str() {
            "conv" => BypassArch::Conv {
                hidden: self.bypass_hidden.unwrap_or(64),
            },
            "block-linear" => {
                let block = match (self.bypass_block, transform) {
                    (Some(b), _) => b,
                    (None, ResolvedTransform::Shuffle(spec)) => spec.block,
                    (None, _) => 4,
                };
                BypassArch::BlockLinear {
                    block,
                    channels: input_channels,
                }
            }
            other => {
                return Err(invalid(
                    &format!("{path}.bypass"),
                    format!("expected \"conv\" or \"block-linear\", got {other:?}"),
                ))
            }
        };
        arch.validate()?;
        let reference = match arch {
            BypassArch::Conv { .. } => PbaTrainConfig::conv_reference(),
            BypassArch::BlockLinear { .. } => PbaTrainConfig::linear_reference(),
        };
        let epochs = self.bypass_epochs.unwrap_or_else(|| match arch {
            BypassArch::Conv { .. } => 20,
            BypassArch::BlockLinear { .. } => 30,
        });
        let batch = self.bypass_batch.unwrap_or(64);
        let mut cfg = reference.scaled_to(epochs, batch);
        if let Some(lr) = self.bypass_lr {
            cfg.base_lr = lr;
        }
        cfg.validate()
            .map_err(|e| invalid(&format!("{path}.bypass_epochs"), e))?;
        Ok((arch, cfg))
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        self.budget(path)?;
        self.attack_config(path)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

/// Top-level experiment document consumed by `train`, `attack`,
/// `bruteforce` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The private key; keyed blocks inherit it unless they override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<i64>,
    pub dataset: DatasetBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<AttackBlock>,
    /// Output directory; `--out` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!("{}: {e}", path.display()))
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Schema-level validation of every block; runs before any compute.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate(self.key)?;
        if let Some(transform) = &self.transform {
            transform.resolve(self.key).map(|_| ())?;
        }
        if let Some(classifier) = &self.classifier {
            classifier.train_config()?;
            classifier.training_key(self.key)?;
        }
        for (i, attack) in self.attacks.iter().enumerate() {
            attack.validate(&format!("attacks[{i}]"))?;
        }
        Ok(())
    }

    pub fn resolve_transform(&self) -> Result<ResolvedTransform> {
        match &self.transform {
            Some(block) => block.resolve(self.key),
            None => Ok(ResolvedTransform::Identity),
        }
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| {
                invalid("output_dir", "set it in the config or pass --out")
            })
    }
}
