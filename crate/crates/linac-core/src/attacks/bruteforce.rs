//! Brute-force key search: score every candidate key by transforming a
//! fixed evaluation batch with it and measuring the defended classifier's
//! accuracy. A keyed defence is only as secret as this table is flat.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImages;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network};
use crate::rng::PrivateKey;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Accuracy of the defended classifier when the batch is transformed with
/// one candidate key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyAccuracy {
    pub key: PrivateKey,
    pub accuracy: f64,
}

/// Evaluate every candidate key and return the table sorted by accuracy
/// (descending; ties broken by key value so the order is total).
///
/// `transform` maps `(candidate key, raw image)` to the classifier's input
/// — the same keyed pipeline the defender uses, parameterised by the guess.
pub fn brute_force_keys<S, F>(
    defended: &Network<S>,
    transform: F,
    keys: &[PrivateKey],
    batch: &LabeledImages<S>,
) -> Result<Vec<KeyAccuracy>>
where
    S: Scalar,
    F: Fn(PrivateKey, &Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    if keys.is_empty() {
        return Err(Error::InvalidArgument("no candidate keys supplied".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation batch".into()));
    }
    let mut table: Vec<KeyAccuracy> = keys
        .par_iter()
        .map(|&key| {
            let mut correct = 0usize;
            for i in 0..batch.len() {
                let transformed = transform(key, batch.image(i))?;
                let logits = defended.forward(&transformed)?;
                if argmax(logits.data()) == batch.label(i) {
                    correct += 1;
                }
            }
            Ok(KeyAccuracy {
                key,
                accuracy: correct as f64 / batch.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    table.sort_by(|a, b| {
        b.accuracy
            .partial_cmp(&a.accuracy)
            .expect("accuracies are finite")
            .then(a.key.0.cmp(&b.key.0))
    });
    Ok(table)
}
