//! Gradient-free random search over square patches. Only forward
//! evaluations are used; a candidate replaces the incumbent exactly when
//! it strictly lowers the prediction margin, so the best value is
//! monotone and the query count is bounded by the configured budget.

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{finalize_adversarial, AttackConfig, AttackOutcome, ForwardModel, PerturbationBudget};

/// Fractions of the per-restart budget at which the square size parameter
/// `p` is halved, starting from 0.1.
const P_SCHEDULE: [f64; 9] = [0.001, 0.005, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8];
const P_INIT: f64 = 0.1;

/// Prediction margin `z[label] - max(z[other])` and whether the model
/// currently misclassifies. The attacker drives the margin negative.
fn margin<S: Scalar>(logits: &[S], label: usize) -> (f64, bool) {
    let own = logits[label].into_f64();
    let mut best_other = f64::NEG_INFINITY;
    for (c, &z) in logits.iter().enumerate() {
        if c != label {
            best_other = best_other.max(z.into_f64());
        }
    }
    (own - best_other, argmax(logits) != label)
}

/// Side length of the proposal square after `used` of `total` queries.
fn square_side(used: u64, total: u64, rows: usize, cols: usize) -> usize {
    let fraction = used as f64 / total.max(1) as f64;
    let halvings = P_SCHEDULE.iter().filter(|&&f| fraction >= f).count();
    let p = P_INIT / 2f64.powi(halvings as i32);
    let h = (p * (rows * cols) as f64).sqrt().round() as usize;
    h.clamp(1, rows.min(cols))
}

/// Random search over square perturbation patches.
///
/// L∞ starts from full-height ±epsilon stripes (one sign per column and
/// channel) and proposes squares whose pixels are reset to ±epsilon per
/// channel. The L2 variant uses the same proposals but rescales the whole
/// perturbation onto the epsilon sphere afterwards. Proposals are accepted
/// only on strict margin improvement; the search stops as soon as the
/// model misclassifies or the query budget is spent.
pub fn square_attack<S: Scalar, M: ForwardModel<S>>(
    model: &M,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>> {
    budget.validate()?;
    cfg.validate()?;
    let &[rows, cols, channels] = x.dims() else {
        return Err(Error::shape(
            "square_attack",
            "[rows, cols, channels]",
            format!("{:?}", x.dims()),
        ));
    };
    if label >= model.classes() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            model.classes()
        )));
    }
    let eps = S::of_f64(budget.epsilon);

    let base_queries = (cfg.query_budget / cfg.restarts) as u64;
    let extra = (cfg.query_budget % cfg.restarts) as u64;

    let mut total_queries = 0u64;
    let mut skipped_restarts = 0usize;
    // (success, margin, adversarial) of the strongest restart so far.
    let mut best: Option<(bool, f64, Tensor<S>)> = None;

    for restart in 0..cfg.restarts {
        let mut rs = stream.split(restart as u64);
        let allowance = base_queries + u64::from((restart as u64) < extra);
        if allowance == 0 {
            continue;
        }

        // Vertical stripe start: one sign per (column, channel).
        let mut proposal = x.clone();
        for j in 0..cols {
            for c in 0..channels {
                let sign = if rs.next_below(2) == 0 { eps } else { -eps };
                for i in 0..rows {
                    let at = proposal.offset3(i, j, c);
                    proposal.data_mut()[at] = x.data()[at] + sign;
                }
            }
        }
        let mut current = finalize_adversarial(x, &proposal, budget)?;
        let logits = model.logits(&current)?;
        let mut used = 1u64;
        let (mut current_margin, mut current_success) = margin(&logits, label);
        if current_margin.is_nan() {
            total_queries += used;
            skipped_restarts += 1;
            continue;
        }

        while used < allowance && !current_success {
            let h = square_side(used, allowance, rows, cols);
            let i0 = rs.next_below((rows - h + 1) as u64) as usize;
            let j0 = rs.next_below((cols - h + 1) as u64) as usize;
            let signs: Vec<S> = (0..channels)
                .map(|_| if rs.next_below(2) == 0 { eps } else { -eps })
                .collect();

            let mut proposal = current.clone();
            for i in i0..i0 + h {
                for j in j0..j0 + h {
                    for (c, &sign) in signs.iter().enumerate() {
                        let at = proposal.offset3(i, j, c);
                        proposal.data_mut()[at] = x.data()[at] + sign;
                    }
                }
            }
            let candidate = finalize_adversarial(x, &proposal, budget)?;
            let logits = model.logits(&candidate)?;
            used += 1;
            let (candidate_margin, candidate_success) = margin(&logits, label);
            if candidate_margin.is_nan() {
                continue;
            }
            if candidate_margin < current_margin {
                current = candidate;
                current_margin = candidate_margin;
                current_success = candidate_success;
            }
        }
        total_queries += used;

        let improves = match &best {
            None => true,
            Some((best_success, best_margin, _)) => {
                (current_success && !best_success)
                    || (current_success == *best_success && current_margin < *best_margin)
            }
        };
        if improves {
            best = Some((current_success, current_margin, current));
        }
        if current_success {
            // A misclassification is found; further restarts cannot
            // improve the success flag, so stop and save the queries.
            break;
        }
    }

    let (success, final_margin, adversarial) = match best {
        Some(found) => found,
        None => {
            let adversarial = finalize_adversarial(x, x, budget)?;
            let logits = model.logits(&adversarial)?;
            total_queries += 1;
            let (m, s) = margin(&logits, label);
            (s, m, adversarial)
        }
    };

    Ok(AttackOutcome {
        adversarial,
        success,
        // Reported ascending like the gradient attacks: the negated margin.
        best_loss: -final_margin,
        forward_queries: total_queries,
        backward_queries: 0,
        skipped_restarts,
    })
}
