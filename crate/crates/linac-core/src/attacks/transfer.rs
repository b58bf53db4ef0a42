//! Transfer harness: compute perturbations on each source model, evaluate
//! them on a target pipeline, and hand per-example robustness columns to
//! the aggregation layer.

use rayon::prelude::*;

use crate::dataset::LabeledImages;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{attack_batch, AttackConfig, GradientModel, PerturbationBudget};

/// One (source, attack) entry of the transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub source: String,
    pub attack: String,
    /// Per example: the target still classifies correctly after the
    /// perturbation computed on the source.
    pub robust: Vec<bool>,
    /// Fraction of examples the attack flipped on its own source model.
    pub source_success_rate: f64,
}

/// Run every configured attack on every source model and evaluate the
/// resulting adversarial images against the target pipeline.
///
/// The cell for `(source i, attack j)` draws its randomness from
/// `stream.split(i * |attacks| + j)`, so the matrix is reproducible cell
/// by cell and independent of evaluation order. Returned cells are in
/// source-major order and there are exactly `|sources| * |attacks|`.
pub fn transfer_attack<S: Scalar>(
    sources: &[(String, &dyn GradientModel<S>)],
    target_predict: &(dyn Fn(&Tensor<S>) -> Result<usize> + Sync),
    attacks: &[(String, AttackConfig)],
    budget: &PerturbationBudget,
    data: &LabeledImages<S>,
    stream: &RngStream,
) -> Result<Vec<TransferCell>> {
    if sources.is_empty() || attacks.is_empty() {
        return Err(Error::InvalidArgument(
            "transfer matrix needs at least one source and one attack".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("transfer on empty example set".into()));
    }
    let mut cells = Vec::with_capacity(sources.len() * attacks.len());
    for (i, (source_name, source)) in sources.iter().enumerate() {
        for (j, (attack_name, cfg)) in attacks.iter().enumerate() {
            let cell_stream = stream.split((i * attacks.len() + j) as u64);
            let outcomes = attack_batch(source, data, budget, cfg, &cell_stream)?;
            let successes = outcomes.iter().filter(|o| o.success).count();
            let robust: Result<Vec<bool>> = outcomes
                .par_iter()
                .enumerate()
                .map(|(k, outcome)| {
                    Ok(target_predict(&outcome.adversarial)? == data.label(k))
                })
                .collect();
            cells.push(TransferCell {
                source: source_name.clone(),
                attack: attack_name.clone(),
                robust: robust?,
                source_success_rate: successes as f64 / data.len() as f64,
            });
        }
    }
    Ok(cells)
}
