//! Projected gradient ascent: untargeted, multi-targeted, and
//! backward-surrogate variants share one restart engine.

use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{
    finalize_adversarial, project, run_attack, AttackConfig, AttackObjective, AttackOutcome,
    BpdaModel, ComposedModel, GradientModel, Norm, PerturbationBudget, Surrogate,
};

/// Untargeted projected gradient ascent on the true label's cross-entropy.
///
/// Each restart starts from a uniform random point inside the perturbation
/// ball and climbs with sign steps (L∞) or normalized-gradient steps (L2),
/// projecting after every step. The strongest restart wins: a successful
/// (misclassifying) restart beats any unsuccessful one, then higher final
/// objective decides.
pub fn pgd<S: Scalar, M: GradientModel<S>>(
    model: &M,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>> {
    run_restarts(model, x, label, budget, cfg, stream, |_| {
        AttackObjective::CrossEntropy { label }
    })
}

/// Multi-targeted PGD: targeted margin ascent toward every class other
/// than the true one, restarts assigned round-robin over the targets.
pub fn mt_pgd<S: Scalar, M: GradientModel<S>>(
    model: &M,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>> {
    let targets: Vec<usize> = (0..model.classes()).filter(|&c| c != label).collect();
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "multi-targeted attack needs at least 2 classes".into(),
        ));
    }
    run_restarts(model, x, label, budget, cfg, stream, |restart| {
        AttackObjective::Margin {
            target: targets[restart % targets.len()],
            label,
        }
    })
}

/// Attack a pipeline whose transform is not differentiable: forward passes
/// run `classifier(exact(x))`, while gradients substitute `surrogate` for
/// the transform.
#[allow(clippy::too_many_arguments)]
pub fn bpda_attack<S: Scalar, F>(
    exact: F,
    surrogate: Surrogate<'_, S>,
    classifier: ComposedModel<'_, S>,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackOutcome<S>>
where
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    let model = BpdaModel::new(exact, surrogate, classifier);
    run_attack(&model, x, label, budget, cfg, stream)
}

/// `x + delta`, elementwise.
fn perturbed<S: Scalar>(x: &Tensor<S>, delta: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for (o, &d) in out.data_mut().iter_mut().zip(delta.data()) {
        *o = *o + d;
    }
    out
}

/// Sign with exact zero preserved (so untouched coordinates stay put).
fn sign0<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Uniform random perturbation inside the budget ball.
fn random_in_ball<S: Scalar>(
    dims: &[usize],
    n: usize,
    budget: &PerturbationBudget,
    stream: &mut RngStream,
) -> Tensor<S> {
    let eps = S::of_f64(budget.epsilon);
    match budget.norm {
        Norm::Linf => Tensor::from_fn(dims.to_vec(), |_| {
            (S::of_f64(2.0) * stream.next_uniform::<S>() - S::one()) * eps
        }),
        Norm::L2 => {
            let mut g = Tensor::from_fn(dims.to_vec(), |_| stream.next_gaussian::<S>());
            let norm = g.l2_norm();
            if norm > 0.0 {
                let radius =
                    budget.epsilon * stream.next_uniform::<f64>().powf(1.0 / n.max(1) as f64);
                let scale = S::of_f64(radius / norm);
                g.map_inplace(|v| v * scale);
            }
            g
        }
    }
}

/// Restart engine shared by all gradient attacks. `objective_of` maps a
/// restart index to the scalar being ascended, which lets multi-targeted
/// runs rotate over target classes while sharing everything else.
fn run_restarts<S: Scalar, M: GradientModel<S>>(
    model: &M,
    x: &Tensor<S>,
    label: usize,
    budget: &PerturbationBudget,
    cfg: &AttackConfig,
    stream: &RngStream,
    objective_of: impl Fn(usize) -> AttackObjective,
) -> Result<AttackOutcome<S>> {
    budget.validate()?;
    cfg.validate()?;
    let alpha = S::of_f64(cfg.effective_step(budget));
    let mut forward_queries = 0u64;
    let mut backward_queries = 0u64;
    let mut skipped_restarts = 0usize;
    // (success, objective value, adversarial image) of the best restart.
    let mut best: Option<(bool, f64, Tensor<S>)> = None;

    for restart in 0..cfg.restarts {
        let mut rs = stream.split(restart as u64);
        let objective = objective_of(restart);
        let mut delta = random_in_ball::<S>(x.dims(), x.len(), budget, &mut rs);
        project(&mut delta, x, budget)?;

        let mut abandoned = false;
        for _ in 0..cfg.steps {
            let point = perturbed(x, &delta);
            forward_queries += 1;
            backward_queries += 1;
            let (value, grad) = match model.objective_grad(&point, &objective) {
                Ok(pair) => pair,
                Err(Error::NonFinite(_)) => {
                    abandoned = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if !value.is_finite() || !grad.all_finite() {
                abandoned = true;
                break;
            }
            match budget.norm {
                Norm::Linf => {
                    for (d, &g) in delta.data_mut().iter_mut().zip(grad.data()) {
                        *d = *d + alpha * sign0(g);
                    }
                }
                Norm::L2 => {
                    let norm = grad.l2_norm();
                    if norm > 0.0 {
                        let scale = alpha * S::of_f64(1.0 / norm);
                        for (d, &g) in delta.data_mut().iter_mut().zip(grad.data()) {
                            *d = *d + g * scale;
                        }
                    }
                }
            }
            project(&mut delta, x, budget)?;
        }
        if abandoned {
            skipped_restarts += 1;
            continue;
        }

        let adversarial = finalize_adversarial(x, &perturbed(x, &delta), budget)?;
        forward_queries += 1;
        let logits = model.logits(&adversarial)?;
        let value = objective.value(&logits)?;
        if !value.is_finite() {
            skipped_restarts += 1;
            continue;
        }
        let success = argmax(&logits) != label;
        let value = value.into_f64();
        let improves = match &best {
            None => true,
            Some((best_success, best_value, _)) => {
                (success && !best_success) || (success == *best_success && value > *best_value)
            }
        };
        if improves {
            best = Some((success, value, adversarial));
        }
    }

    let (success, best_loss, adversarial) = match best {
        Some(found) => found,
        None => {
            // Every restart hit non-finite values; fall back to reporting
            // the unperturbed input so downstream aggregation stays sound.
            let adversarial = finalize_adversarial(x, x, budget)?;
            forward_queries += 1;
            let logits = model.logits(&adversarial)?;
            let success = argmax(&logits) != label;
            let value = objective_of(0)
                .value(&logits)?
                .into_f64();
            (success, value, adversarial)
        }
    };

    Ok(AttackOutcome {
        adversarial,
        success,
        best_loss,
        forward_queries,
        backward_queries,
        skipped_restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::ForwardModel;
    use crate::nn::{LayerSpec, Network};
    use crate::rng::{derive_stream, PrivateKey, StreamLabel};
    use crate::tensor::Tensor;

    const KEY: PrivateKey = PrivateKey(-2314326399425823309);

    fn attack_stream() -> RngStream {
        derive_stream(KEY, StreamLabel::Attack)
    }

    /// Two-class linear model with a hand-set weight matrix.
    fn linear_model(weights: Vec<f64>) -> Network<f64> {
        let spec = LayerSpec::Dense {
            in_features: 4,
            out_features: 2,
            bias: false,
        };
        let params = crate::nn::LayerParams {
            weight: Some(Tensor::new(vec![4, 2], weights).unwrap()),
            bias: None,
        };
        Network::from_parts(vec![spec], vec![params]).unwrap()
    }

    #[test]
    fn one_step_linf_on_linear_model_moves_exactly_epsilon_sign() {
        // Weight columns (classes) per input feature; the ascent direction
        // of class-0 cross-entropy is sign(w1 - w0) per coordinate.
        #[rustfmt::skip]
        let w = vec![
            // class0, class1
            1.0, -1.0,   // feature 0 -> sign -1
            -2.0, 3.0,   // feature 1 -> sign +1
            0.5, 2.5,    // feature 2 -> sign +1
            4.0, -4.0,   // feature 3 -> sign -1
        ];
        let net = linear_model(w);
        let model = ComposedModel::plain(&net, None, 2);
        let x = Tensor::new(vec![4], vec![0.5; 4]).unwrap();
        // Epsilon an exact power of two so 0.5 +/- eps is exact in f64,
        // and a double-length step so the projection lands on the ball
        // boundary no matter where the restart started.
        let eps = 0.03125;
        let budget = PerturbationBudget {
            norm: Norm::Linf,
            epsilon: eps,
        };
        let mut cfg = AttackConfig::pgd(1, 1);
        cfg.step_size = Some(2.0 * eps);
        let out = pgd(&model, &x, 0, &budget, &cfg, &attack_stream()).unwrap();
        let expect = [-eps, eps, eps, -eps];
        for (i, (&a, &xv)) in out.adversarial.data().iter().zip(x.data()).enumerate() {
            assert_eq!(a - xv, expect[i], "coordinate {i}");
        }
        out.validate_budget(&x, &budget).unwrap();
    }

    fn small_conv_classifier() -> Network<f64> {
        let mut stream = derive_stream(KEY, StreamLabel::Init);
        Network::init(
            vec![
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                    bias: true,
                },
                LayerSpec::Swish,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features: 8,
                    out_features: 4,
                    bias: true,
                },
            ],
            &mut stream,
        )
        .unwrap()
    }

    fn test_image() -> Tensor<f64> {
        let mut s = derive_stream(KEY, StreamLabel::Dataset);
        Tensor::from_fn(vec![8, 8, 3], |_| s.next_uniform::<f64>())
    }

    #[test]
    fn identity_bpda_is_bit_identical_to_plain_pgd() {
        let net = small_conv_classifier();
        let x = test_image();
        let budget = PerturbationBudget::linf_8_255();
        let cfg = AttackConfig::pgd(5, 2);
        let stream = attack_stream();

        let plain = pgd(
            &ComposedModel::plain(&net, None, 4),
            &x,
            1,
            &budget,
            &cfg,
            &stream,
        )
        .unwrap();
        let via_bpda = bpda_attack(
            |t: &Tensor<f64>| Ok(t.clone()),
            Surrogate::Identity,
            ComposedModel::plain(&net, None, 4),
            &x,
            1,
            &budget,
            &cfg,
            &stream,
        )
        .unwrap();

        assert_eq!(plain.adversarial.data(), via_bpda.adversarial.data());
        assert_eq!(plain.success, via_bpda.success);
        assert_eq!(plain.best_loss, via_bpda.best_loss);
        assert_eq!(plain.forward_queries, via_bpda.forward_queries);
    }

    #[test]
    fn pgd_outcomes_satisfy_budgets_and_replay_identically() {
        let net = small_conv_classifier();
        let model = ComposedModel::plain(&net, None, 4);
        let x = test_image();
        let stream = attack_stream();
        for budget in [PerturbationBudget::linf_8_255(), PerturbationBudget::l2_half()] {
            let cfg = AttackConfig::pgd(6, 3);
            let a = pgd(&model, &x, 2, &budget, &cfg, &stream).unwrap();
            let b = pgd(&model, &x, 2, &budget, &cfg, &stream).unwrap();
            a.validate_budget(&x, &budget).unwrap();
            assert_eq!(a.adversarial.data(), b.adversarial.data());
            assert_eq!(a.best_loss, b.best_loss);
            // 6 gradient steps + 1 final evaluation per restart.
            assert_eq!(a.forward_queries, 3 * 7);
            assert_eq!(a.backward_queries, 3 * 6);
        }
    }

    #[test]
    fn mt_pgd_rotates_targets_and_respects_budget() {
        let net = small_conv_classifier();
        let model = ComposedModel::plain(&net, None, 4);
        let x = test_image();
        let budget = PerturbationBudget::linf_8_255();
        let cfg = AttackConfig::mt_pgd(4, 6);
        let out = mt_pgd(&model, &x, 0, &budget, &cfg, &attack_stream()).unwrap();
        out.validate_budget(&x, &budget).unwrap();
        // If the attack reports success the stored tensor must really
        // flip the prediction.
        let logits = model.logits(&out.adversarial).unwrap();
        assert_eq!(out.success, argmax(&logits) != 0);
    }

    #[test]
    fn mt_pgd_rejects_single_class_models() {
        let mut stream = derive_stream(KEY, StreamLabel::Init);
        let net = Network::<f64>::init(
            vec![LayerSpec::Dense {
                in_features: 4,
                out_features: 1,
                bias: false,
            }],
            &mut stream,
        )
        .unwrap();
        let model = ComposedModel::plain(&net, None, 1);
        let x = Tensor::new(vec![4], vec![0.5; 4]).unwrap();
        let err = mt_pgd(
            &model,
            &x,
            0,
            &PerturbationBudget::linf_8_255(),
            &AttackConfig::mt_pgd(2, 2),
            &attack_stream(),
        );
        assert!(err.is_err());
    }

    /// Model whose gradients are always NaN — exercises restart skipping.
    struct PoisonedModel;

    impl crate::attacks::ForwardModel<f64> for PoisonedModel {
        fn classes(&self) -> usize {
            3
        }
        fn logits(&self, _x: &Tensor<f64>) -> crate::error::Result<Vec<f64>> {
            Ok(vec![1.0, 0.0, -1.0])
        }
    }

    impl GradientModel<f64> for PoisonedModel {
        fn objective_grad(
            &self,
            x: &Tensor<f64>,
            _objective: &AttackObjective,
        ) -> crate::error::Result<(f64, Tensor<f64>)> {
            Ok((f64::NAN, Tensor::zeros(x.dims().to_vec())))
        }
    }

    #[test]
    fn non_finite_gradients_skip_restarts_without_failing() {
        let x = Tensor::new(vec![4], vec![0.5; 4]).unwrap();
        let budget = PerturbationBudget::linf_8_255();
        let out = pgd(
            &PoisonedModel,
            &x,
            0,
            &budget,
            &AttackConfig::pgd(3, 4),
            &attack_stream(),
        )
        .unwrap();
        assert_eq!(out.skipped_restarts, 4);
        // Fallback reports the clean input, still budget-valid.
        out.validate_budget(&x, &budget).unwrap();
        assert!(!out.success);
    }
}
