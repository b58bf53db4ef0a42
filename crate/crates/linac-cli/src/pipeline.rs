//! Shared plumbing between commands: checkpoint bundles, the exact defended
//! pipeline, per-example masks, and artifact sidecars.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use linac_core::classifier::TrainedClassifier;
use linac_core::dataset::LabeledImages;
use linac_core::error::{Error, Result};
use linac_core::nn::argmax;
use linac_core::tensor::Tensor;
use linac_core::transforms::{apply_normalization, NormalizationStats};
use linac_core::Tensor32;

use crate::config::ResolvedTransform;

/// A trained defended pipeline as persisted by `linac train`: classifier
/// checkpoint, optional normalization statistics, and the input transform.
pub struct Checkpoint {
    pub classifier: TrainedClassifier<f32>,
    pub stats: Option<NormalizationStats>,
    pub transform: ResolvedTransform,
}

impl Checkpoint {
    /// Load from a `linac train` output directory. `config_transform` is
    /// the transform the caller's config resolves to; if the checkpoint
    /// recorded its own (it always does when written by `train`), the two
    /// must agree — attacking with the wrong key or architecture would
    /// silently measure the wrong pipeline.
    pub fn load(dir: impl AsRef<Path>, config_transform: ResolvedTransform) -> Result<Self> {
        let dir = dir.as_ref();
        let classifier = TrainedClassifier::load_dir(dir.join("checkpoint"))?;
        let stats_path = dir.join("normalization.json");
        let stats = if stats_path.is_file() {
            Some(serde_json::from_str(&std::fs::read_to_string(stats_path)?)?)
        } else {
            None
        };
        let recorded_path = dir.join("transform.json");
        let transform = if recorded_path.is_file() {
            let recorded: ResolvedTransform =
                serde_json::from_str(&std::fs::read_to_string(recorded_path)?)?;
            if recorded != config_transform {
                return Err(Error::InvalidArgument(format!(
                    "config transform ({}) differs from the checkpoint's ({}); \
                     re-point the config at the transform this model was trained with",
                    config_transform.kind_id(),
                    recorded.kind_id()
                )));
            }
            recorded
        } else {
            config_transform
        };
        Ok(Checkpoint {
            classifier,
            stats,
            transform,
        })
    }

    /// Normalize into the classifier's input domain (identity when the
    /// checkpoint trained without normalization).
    pub fn normalize(&self, x: &Tensor32) -> Result<Tensor32> {
        match &self.stats {
            Some(stats) => apply_normalization(x, stats),
            None => Ok(x.clone()),
        }
    }

    /// Logits of the true defended pipeline: exact transform, then
    /// normalization, then the averaged evaluation network.
    pub fn exact_logits(&self, x: &Tensor32) -> Result<Vec<f32>> {
        let transformed = self.transform.apply(x)?;
        let out = self
            .classifier
            .eval_network()
            .forward(&self.normalize(&transformed)?)?;
        Ok(out.into_data())
    }

    pub fn exact_predict(&self, x: &Tensor32) -> Result<usize> {
        Ok(argmax(&self.exact_logits(x)?))
    }

    pub fn classes(&self) -> usize {
        self.classifier.spec.classes
    }
}

/// Per-example clean-correctness through an arbitrary prediction pipeline,
/// evaluated in parallel with order-preserving collection.
pub fn correctness_mask<F>(data: &LabeledImages<f32>, predict: F) -> Result<Vec<bool>>
where
    F: Fn(&Tensor<f32>) -> Result<usize> + Sync,
{
    (0..data.len())
        .into_par_iter()
        .map(|i| Ok(predict(data.image(i))? == data.label(i)))
        .collect()
}

/// Fraction of `true` entries.
pub fn fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&b| b).count() as f64 / mask.len() as f64
}

/// Percentage with two decimals, the formatting every table uses.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

/// Write `<name>.meta.json`: the command's resolved inputs and measured
/// outputs plus a `generated_unix` timestamp. Sidecars are the only
/// artifacts that carry timestamps, so everything else byte-compares equal
/// across reruns.
pub fn write_meta(
    dir: impl AsRef<Path>,
    name: &str,
    mut body: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let generated = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    if let Some(map) = body.as_object_mut() {
        map.insert("generated_unix".into(), serde_json::json!(generated));
    }
    std::fs::write(
        dir.join(format!("{name}.meta.json")),
        serde_json::to_string_pretty(&body)?,
    )?;
    Ok(())
}

/// Apply a fallible per-image map across a dataset, preserving labels.
pub fn map_images<F>(data: &LabeledImages<f32>, f: F) -> Result<LabeledImages<f32>>
where
    F: Fn(&Tensor32) -> Result<Tensor32> + Sync,
{
    data.transformed(f)
}
