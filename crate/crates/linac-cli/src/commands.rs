//! Command implementations. Each takes validated inputs, runs the compute,
//! writes self-describing artifacts under its output directory, and prints
//! a one-line summary. Outputs are deterministic given the config;
//! timestamps appear only in `*.meta.json` sidecars.

use std::path::{Path, PathBuf};
use std::time::Instant;

use linac_core::attacks::{
    attack_batch, brute_force_keys, prediction_agreement, train_pba, BpdaModel,
    ComposedModel, ForwardModel, Norm, PerturbationBudget, Surrogate,
};
use linac_core::classifier::{train_classifier, ClassifierSpec, TrainedClassifier};
use linac_core::dataset::{generate_synthetic, LabeledImages, SyntheticConfig};
use linac_core::error::{Error, Result};
use linac_core::evaluation::{write_report, CorrectnessMask, ReportMetadata, RobustReport};
use linac_core::inr::{fit_inr, hidden_activation_grid, reconstruct, reconstruction_error};
use linac_core::nn::argmax;
use linac_core::rng::{derive_stream, PrivateKey, RngStream, StreamLabel};
use linac_core::transforms::fit_normalization;
use linac_core::Tensor32;

use crate::config::{
    AttackBlock, ExperimentConfig, Preset, ResolvedTransform, TransformBlock,
};
use crate::pipeline::{correctness_mask, fraction, map_images, pct, write_meta, Checkpoint};

fn norm_id(norm: Norm) -> &'static str {
    match norm {
        Norm::Linf => "linf",
        Norm::L2 => "l2",
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(
    key: i64,
    train: usize,
    test: usize,
    size: &str,
    out: &Path,
) -> Result<()> {
    let cfg = match size {
        "standard" => SyntheticConfig::standard(PrivateKey(key), train, test),
        "small" => SyntheticConfig::small(PrivateKey(key), train, test),
        other => {
            return Err(Error::InvalidArgument(format!(
                "--size expects \"standard\" or \"small\", got {other:?}"
            )))
        }
    };
    let start = Instant::now();
    let (train_set, test_set) = generate_synthetic::<f32>(&cfg)?;
    train_set.save_dir(out.join("train"))?;
    test_set.save_dir(out.join("test"))?;
    write_meta(
        out,
        "synth",
        serde_json::json!({
            "key": key,
            "size": size,
            "train": train_set.len(),
            "test": test_set.len(),
            "image_dims": train_set.image_dims(),
            "elapsed_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    println!(
        "synth: wrote {} train + {} test images ({}) to {}",
        train_set.len(),
        test_set.len(),
        size,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub struct FitRequest {
    pub image: PathBuf,
    pub index: usize,
    pub key: i64,
    pub preset: Option<Preset>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub layers: Option<usize>,
    pub width: Option<usize>,
    pub freqs: Option<usize>,
    pub repr_layer: Option<usize>,
    pub lr: Option<f64>,
    pub floor: Option<f64>,
    pub reconstruction: bool,
    pub out: PathBuf,
}

fn load_image(path: &Path, index: usize) -> Result<Tensor32> {
    let image = if path.extension().and_then(|e| e.to_str()) == Some("bin") {
        let records =
            linac_core::dataset::load_cifar10_file::<f32>(path, Some(index + 1))?;
        if index >= records.len() {
            return Err(Error::InvalidArgument(format!(
                "--index {index} out of range: {} holds {} records",
                path.display(),
                records.len()
            )));
        }
        records.image(index).clone()
    } else {
        Tensor32::load_lnt(path)?
    };
    match image.dims() {
        [_, _, 3] => Ok(image),
        dims => Err(Error::InvalidArgument(format!(
            "image must be [rows, cols, 3], got {dims:?} in {}",
            path.display()
        ))),
    }
}

pub fn cmd_fit(req: FitRequest) -> Result<()> {
    let image = load_image(&req.image, req.index)?;
    let block = TransformBlock {
        kind: if req.reconstruction {
            "linac-reconstruction".into()
        } else {
            "linac".into()
        },
        key: Some(req.key),
        preset: Some(req.preset.unwrap_or(Preset::PaperAppendixA)),
        hidden_layers: req.layers,
        hidden_units: req.width,
        frequencies: req.freqs,
        repr_layer: req.repr_layer,
        epochs: req.epochs,
        batch_pixels: req.batch,
        learning_rate: req.lr,
        cosine_floor: req.floor,
        ..TransformBlock::identity()
    };
    let resolved = block.resolve(None)?;
    let (fit_cfg, arch, repr) = match &resolved {
        ResolvedTransform::Linac(cfg) => (cfg.fit, cfg.arch, Some(cfg.repr_layer)),
        ResolvedTransform::LinacReconstruction { fit, arch } => (*fit, *arch, None),
        _ => unreachable!("kind fixed above"),
    };

    let start = Instant::now();
    let fitted = fit_inr(&image, &fit_cfg, &arch)?;
    let elapsed = start.elapsed();

    std::fs::create_dir_all(&req.out)?;
    fitted.params.save_dir(req.out.join("params"))?;
    let mut trace = String::from("step,loss\n");
    for (s, loss) in fitted.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{s},{loss:.17e}\n"));
    }
    std::fs::write(req.out.join("loss_trace.csv"), trace)?;

    let (rows, cols) = (image.dims()[0], image.dims()[1]);
    let mut sse = None;
    match repr {
        Some(layer) => {
            let activations = hidden_activation_grid(&fitted.params, rows, cols, layer)?;
            activations.save_lnt(req.out.join("activation_image.lnt"))?;
        }
        None => {
            let recon = reconstruct(&fitted.params, rows, cols)?;
            recon.save_lnt(req.out.join("reconstruction.lnt"))?;
            sse = Some(reconstruction_error(&recon, &image)?);
        }
    }

    let final_loss = fitted.loss_trace.last().copied();
    write_meta(
        &req.out,
        "fit",
        serde_json::json!({
            "image": req.image.display().to_string(),
            "index": req.index,
            "transform": resolved,
            "steps": fitted.loss_trace.len(),
            "final_loss": final_loss,
            "reconstruction_sse": sse,
            "elapsed_s": elapsed.as_secs_f64(),
        }),
    )?;
    println!(
        "fit: {} steps in {:.2?}, final loss {:.6}{} -> {}",
        fitted.loss_trace.len(),
        elapsed,
        final_loss.unwrap_or(f64::NAN),
        sse.map(|v| format!(", reconstruction sse {v:.6}"))
            .unwrap_or_default(),
        req.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// transform
// ---------------------------------------------------------------------------

pub fn cmd_transform(
    dataset: &Path,
    key: Option<i64>,
    config: &Path,
    out: &Path,
) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", config.display()))
    })?;
    let block: TransformBlock = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", config.display())))?;
    let resolved = block.resolve(key)?;
    let data = LabeledImages::<f32>::load_dir(dataset)?;

    let start = Instant::now();
    let transformed = map_images(&data, |x| resolved.apply(x))?;
    let elapsed = start.elapsed();

    transformed.save_dir(out)?;
    std::fs::write(
        out.join("transform.json"),
        serde_json::to_string_pretty(&resolved)?,
    )?;
    write_meta(
        out,
        "transform",
        serde_json::json!({
            "dataset": dataset.display().to_string(),
            "transform": resolved,
            "images": transformed.len(),
            "output_dims": transformed.image_dims(),
            "elapsed_s": elapsed.as_secs_f64(),
        }),
    )?;
    println!(
        "transform: {} images through {} in {:.2?} -> {}",
        transformed.len(),
        resolved.kind_id(),
        elapsed,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainedPipeline {
    trained: TrainedClassifier<f32>,
    stats: Option<linac_core::transforms::NormalizationStats>,
    transform: ResolvedTransform,
    test_transformed: LabeledImages<f32>,
    clean_accuracy: f64,
}

/// Transform the dataset, optionally fit+apply normalization, and train the
/// classifier — the shared body of `train` and `sweep`.
fn train_pipeline(
    config: &ExperimentConfig,
    transform: &ResolvedTransform,
) -> Result<TrainedPipeline> {
    let (train_raw, test_raw) = config.dataset.load(config.key)?;
    if train_raw.is_empty() {
        return Err(Error::InvalidArgument(
            "training requires a non-empty train split".into(),
        ));
    }
    let classifier_block = config.classifier.clone().unwrap_or_default();
    let train_cfg = classifier_block.train_config()?;
    let key = classifier_block.training_key(config.key)?;

    let start = Instant::now();
    let train_t = map_images(&train_raw, |x| transform.apply(x))?;
    let test_t = map_images(&test_raw, |x| transform.apply(x))?;
    log::info!(
        "transformed {} train + {} test images in {:.2?}",
        train_t.len(),
        test_t.len(),
        start.elapsed()
    );

    let normalize = classifier_block
        .normalize
        .unwrap_or_else(|| transform.default_normalize());
    let stats = if normalize {
        Some(fit_normalization(train_t.images())?)
    } else {
        None
    };
    let (train_n, test_n) = match &stats {
        Some(s) => (
            map_images(&train_t, |x| linac_core::transforms::apply_normalization(x, s))?,
            map_images(&test_t, |x| linac_core::transforms::apply_normalization(x, s))?,
        ),
        None => (train_t.clone(), test_t.clone()),
    };

    let dims = train_n.image_dims().expect("nonempty");
    let spec = ClassifierSpec::new(dims[2], train_n.num_classes());
    let mut stream = derive_stream(key, StreamLabel::Training);
    let eval = if test_n.is_empty() { None } else { Some(&test_n) };
    let trained = train_classifier(&train_n, &spec, &train_cfg, &mut stream, eval)?;
    let clean_accuracy = trained
        .curve
        .last()
        .and_then(|row| row.eval_acc_avg)
        .unwrap_or(f64::NAN);
    Ok(TrainedPipeline {
        trained,
        stats,
        transform: transform.clone(),
        test_transformed: test_t,
        clean_accuracy,
    })
}

pub fn cmd_train(config_path: &Path, out_flag: Option<&Path>) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let out = config.output_dir(out_flag)?;
    let transform = config.resolve_transform()?;

    let start = Instant::now();
    let pipeline = train_pipeline(&config, &transform)?;
    let elapsed = start.elapsed();

    std::fs::create_dir_all(&out)?;
    pipeline.trained.save_dir(out.join("checkpoint"))?;
    if let Some(stats) = &pipeline.stats {
        std::fs::write(
            out.join("normalization.json"),
            serde_json::to_string_pretty(stats)?,
        )?;
    }
    std::fs::write(
        out.join("transform.json"),
        serde_json::to_string_pretty(&pipeline.transform)?,
    )?;
    write_meta(
        &out,
        "train",
        serde_json::json!({
            "config": config,
            "transform": pipeline.transform,
            "normalized": pipeline.stats.is_some(),
            "clean_accuracy": pipeline.clean_accuracy,
            "epochs": pipeline.trained.curve.len(),
            "elapsed_s": elapsed.as_secs_f64(),
        }),
    )?;
    println!(
        "train: clean accuracy {} after {} epochs in {:.2?} -> {}",
        pct(pipeline.clean_accuracy),
        pipeline.trained.curve.len(),
        elapsed,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackRun {
    name: String,
    robust: Vec<bool>,
    source_success_rate: f64,
    mean_forward_queries: f64,
    mean_backward_queries: f64,
    agreement: Option<f64>,
    elapsed_s: f64,
}

fn run_attack_block(
    block: &AttackBlock,
    path: &str,
    ckpt: &Checkpoint,
    train_raw: &LabeledImages<f32>,
    test_raw: &LabeledImages<f32>,
    budget: &PerturbationBudget,
    stream: &RngStream,
    out: &Path,
) -> Result<AttackRun> {
    let cfg = block.attack_config(path)?;
    let classes = ckpt.classes();
    let eval_net = ckpt.classifier.eval_network();
    let start = Instant::now();

    let (outcomes, agreement) = if block.kind == "pba" {
        let dims = test_raw.image_dims().ok_or_else(|| {
            Error::InvalidArgument("attack evaluation set is empty".into())
        })?;
        let (arch, pba_cfg) = block.bypass_plan(path, &ckpt.transform, dims[2])?;
        let bypass_train = match block.bypass_train_subset {
            Some(n) => train_raw.take(n),
            None => train_raw.clone(),
        };
        if bypass_train.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{path}: bypass training needs train images (dataset train split is empty)"
            )));
        }
        let mut train_stream = stream.split(0);
        log::info!(
            "{}: training {arch:?} bypass on {} images, {} epochs",
            block.display_name(),
            bypass_train.len(),
            pba_cfg.epochs
        );
        let trained =
            train_pba(eval_net, ckpt.stats.as_ref(), &bypass_train, arch, &pba_cfg, &mut train_stream)?;
        trained
            .bypass
            .save_dir(out.join(format!("bypass-{}", block.display_name())))?;

        let composite =
            ComposedModel::new(Some(&trained.bypass.map), ckpt.stats.as_ref(), eval_net, classes);
        let exact = FnPredict { ckpt };
        let agreement = prediction_agreement(&composite, &exact, test_raw)?;
        log::info!(
            "{}: bypass agreement {} on {} examples",
            block.display_name(),
            pct(agreement),
            test_raw.len()
        );
        let outcomes = attack_batch(&composite, test_raw, budget, &cfg, &stream.split(1))?;
        (outcomes, Some(agreement))
    } else {
        // Straight-through gradients only make sense when the transform
        // keeps the input shape (identity, shuffle, reconstruction). The
        // activation-image transform widens the channel dimension, so
        // gradient attacks on it must go through a trained bypass instead.
        if matches!(ckpt.transform, ResolvedTransform::Linac(_)) && block.kind != "square" {
            return Err(Error::InvalidArgument(format!(
                "{path}.kind: \"{}\" needs gradients, which the activation-image \
                 transform does not expose; use \"pba\" (bypass gradients) or \
                 \"square\" (gradient-free)",
                block.kind
            )));
        }
        let classifier = ComposedModel::plain(eval_net, ckpt.stats.as_ref(), classes);
        let model = BpdaModel::new(
            |x: &Tensor32| ckpt.transform.apply(x),
            Surrogate::Identity,
            classifier,
        );
        let outcomes = attack_batch(&model, test_raw, budget, &cfg, &stream.split(1))?;
        (outcomes, None)
    };

    // Perturbations always score against the true pipeline, whatever model
    // computed them.
    let robust: Result<Vec<bool>> = outcomes
        .iter()
        .zip(test_raw.labels())
        .map(|(o, &label)| Ok(ckpt.exact_predict(&o.adversarial)? == label))
        .collect();
    let n = outcomes.len() as f64;
    Ok(AttackRun {
        name: block.display_name(),
        robust: robust?,
        source_success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
        mean_forward_queries: outcomes.iter().map(|o| o.forward_queries as f64).sum::<f64>() / n,
        mean_backward_queries: outcomes.iter().map(|o| o.backward_queries as f64).sum::<f64>()
            / n,
        agreement,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// The exact defended pipeline as a forward-only model (for agreement
/// checks).
struct FnPredict<'a> {
    ckpt: &'a Checkpoint,
}

impl ForwardModel<f32> for FnPredict<'_> {
    fn classes(&self) -> usize {
        self.ckpt.classes()
    }
    fn logits(&self, x: &Tensor32) -> Result<Vec<f32>> {
        self.ckpt.exact_logits(x)
    }
}

pub fn cmd_attack(
    config_path: &Path,
    checkpoint: &Path,
    out_flag: Option<&Path>,
) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    if config.attacks.is_empty() {
        return Err(Error::InvalidArgument(
            "attacks: config lists no attacks".into(),
        ));
    }
    let out = config.output_dir(out_flag)?;
    let transform = config.resolve_transform()?;
    let ckpt = Checkpoint::load(checkpoint, transform)?;
    let (train_raw, test_raw) = config.dataset.load(config.key)?;
    if test_raw.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset.test_subset: attack evaluation needs test images".into(),
        ));
    }

    // One report is one threat model: all attacks must share it.
    let budget = config.attacks[0].budget("attacks[0]")?;
    for (i, block) in config.attacks.iter().enumerate() {
        let b = block.budget(&format!("attacks[{i}]"))?;
        if b != budget {
            return Err(Error::InvalidArgument(format!(
                "attacks[{i}]: all attacks in one report must share norm and epsilon \
                 (got {} {} vs {} {})",
                norm_id(b.norm),
                b.epsilon,
                norm_id(budget.norm),
                budget.epsilon
            )));
        }
    }

    let attack_key = config
        .key
        .or(ckpt.transform.key().map(|k| k.0))
        .ok_or_else(|| Error::InvalidArgument("key: required to seed attack randomness".into()))?;
    let parent = derive_stream(PrivateKey(attack_key), StreamLabel::Attack);

    std::fs::create_dir_all(&out)?;
    let clean = correctness_mask(&test_raw, |x| ckpt.exact_predict(x))?;
    let mut mask = CorrectnessMask::new(clean);
    let mut runs = Vec::new();
    for (j, block) in config.attacks.iter().enumerate() {
        let run = run_attack_block(
            block,
            &format!("attacks[{j}]"),
            &ckpt,
            &train_raw,
            &test_raw,
            &budget,
            &parent.split(j as u64),
            &out,
        )?;
        mask.push_column(run.name.clone(), "self", run.robust.clone())?;
        println!(
            "attack {}: source success {}, robust(clean∧) {}{}",
            run.name,
            pct(run.source_success_rate),
            pct(fraction(
                &run.robust
                    .iter()
                    .zip(&mask.clean)
                    .map(|(&r, &c)| r && c)
                    .collect::<Vec<_>>()
            )),
            run.agreement
                .map(|a| format!(", bypass agreement {}", pct(a)))
                .unwrap_or_default()
        );
        runs.push(run);
    }

    let metadata = ReportMetadata {
        norm: norm_id(budget.norm).into(),
        epsilon: budget.epsilon,
        model_id: checkpoint.display().to_string(),
        transform_id: Some(ckpt.transform.kind_id().into()),
        dataset_id: Some(config.dataset.id()),
    };
    let report = write_report(&out, &mask, &metadata)?;
    write_meta(
        &out,
        "attack",
        serde_json::json!({
            "config": config,
            "checkpoint": checkpoint.display().to_string(),
            "examples": test_raw.len(),
            "clean_accuracy": report.clean_accuracy,
            "best_known": report.best_known,
            "attacks": runs.iter().map(|r| serde_json::json!({
                "name": r.name,
                "source_success_rate": r.source_success_rate,
                "mean_forward_queries": r.mean_forward_queries,
                "mean_backward_queries": r.mean_backward_queries,
                "bypass_agreement": r.agreement,
                "elapsed_s": r.elapsed_s,
            })).collect::<Vec<_>>(),
        }),
    )?;
    print!("{}", std::fs::read_to_string(out.join("report.csv"))?);
    println!(
        "attack: clean {}, best known {} -> {}",
        pct(report.clean_accuracy),
        pct(report.best_known),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bruteforce
// ---------------------------------------------------------------------------

pub fn cmd_bruteforce(
    config_path: &Path,
    checkpoint: &Path,
    keys: usize,
    batch: usize,
    out_flag: Option<&Path>,
) -> Result<()> {
    if keys == 0 || batch == 0 {
        return Err(Error::InvalidArgument(
            "--keys and --batch must be >= 1".into(),
        ));
    }
    let config = ExperimentConfig::load(config_path)?;
    let out = config.output_dir(out_flag)?;
    let transform = config.resolve_transform()?;
    let ckpt = Checkpoint::load(checkpoint, transform)?;
    let true_key = ckpt.transform.key().ok_or_else(|| {
        Error::InvalidArgument(
            "transform.kind: key search needs a keyed transform (linac or shuffle)".into(),
        )
    })?;
    let (_, test_raw) = config.dataset.load(config.key)?;
    let eval_batch = test_raw.take(batch);
    if eval_batch.is_empty() {
        return Err(Error::InvalidArgument(
            "dataset: key search needs test images".into(),
        ));
    }

    let mut candidates = vec![true_key];
    let mut seen: std::collections::HashSet<i64> = candidates.iter().map(|k| k.0).collect();
    let mut stream = derive_stream(true_key, StreamLabel::Evaluation).split(0x6b);
    while candidates.len() < keys + 1 {
        let guess = stream.next_u64() as i64;
        if seen.insert(guess) {
            candidates.push(PrivateKey(guess));
        }
    }

    let start = Instant::now();
    let table = brute_force_keys(
        ckpt.classifier.eval_network(),
        |key, x| {
            let transformed = ckpt.transform.with_key(key).apply(x)?;
            ckpt.normalize(&transformed)
        },
        &candidates,
        &eval_batch,
    )?;
    let elapsed = start.elapsed();

    let mut csv = String::from("rank,key,accuracy\n");
    for (rank, entry) in table.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{}\n",
            rank + 1,
            entry.key.0,
            pct(entry.accuracy)
        ));
    }
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("keys.csv"), csv)?;

    let true_rank = table
        .iter()
        .position(|e| e.key == true_key)
        .expect("true key is a candidate")
        + 1;
    let true_accuracy = table[true_rank - 1].accuracy;
    let wrong: Vec<f64> = table
        .iter()
        .filter(|e| e.key != true_key)
        .map(|e| e.accuracy)
        .collect();
    let wrong_mean = wrong.iter().sum::<f64>() / wrong.len().max(1) as f64;
    write_meta(
        &out,
        "bruteforce",
        serde_json::json!({
            "checkpoint": checkpoint.display().to_string(),
            "candidates": table.len(),
            "batch": eval_batch.len(),
            "true_key": true_key.0,
            "true_rank": true_rank,
            "true_accuracy": true_accuracy,
            "wrong_key_mean_accuracy": wrong_mean,
            "elapsed_s": elapsed.as_secs_f64(),
        }),
    )?;
    println!(
        "bruteforce: true key ranks {}/{} (accuracy {} vs wrong-key mean {}) in {:.2?} -> {}",
        true_rank,
        table.len(),
        pct(true_accuracy),
        pct(wrong_mean),
        elapsed,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(
    mask_paths: &[PathBuf],
    out: &Path,
    norm: &str,
    epsilon: f64,
    model_id: &str,
) -> Result<RobustReport> {
    if mask_paths.is_empty() {
        return Err(Error::InvalidArgument("--masks: at least one file".into()));
    }
    let mut merged: Option<CorrectnessMask> = None;
    for path in mask_paths {
        let mask = CorrectnessMask::load(path)?;
        match &mut merged {
            None => merged = Some(mask),
            Some(acc) => {
                if acc.clean != mask.clean {
                    return Err(Error::InvalidArgument(format!(
                        "{}: clean mask disagrees with the first file (different \
                         example set?)",
                        path.display()
                    )));
                }
                for attack in mask.attacks {
                    for source in attack.sources {
                        acc.push_column(attack.attack.clone(), source.source, source.robust)?;
                    }
                }
            }
        }
    }
    let merged = merged.expect("non-empty list");
    merged.validate()?;
    let metadata = ReportMetadata {
        norm: norm.into(),
        epsilon,
        model_id: model_id.into(),
        transform_id: None,
        dataset_id: None,
    };
    let report = write_report(out, &merged, &metadata)?;
    print!("{}", std::fs::read_to_string(out.join("report.csv"))?);
    println!(
        "report: {} attacks x {} sources over {} examples, best known {} -> {}",
        report.rows.len(),
        report.sources.len(),
        report.examples,
        pct(report.best_known),
        out.display()
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    /// Positional-encoding frequency count.
    F,
    /// Hidden layers of the fitted network.
    L,
    /// Representation layer (0 = no transform, layer count = colour output).
    K,
    /// Fitting epochs.
    N,
}

impl SweepParam {
    fn id(self) -> &'static str {
        match self {
            SweepParam::F => "F",
            SweepParam::L => "L",
            SweepParam::K => "K",
            SweepParam::N => "N",
        }
    }
}

/// Patch one hyperparameter of the base activation-image transform.
fn sweep_variant(
    base: &linac_core::transforms::LinacConfig,
    param: SweepParam,
    value: usize,
) -> Result<ResolvedTransform> {
    let mut cfg = *base;
    let resolved = match param {
        SweepParam::F => {
            cfg.arch.frequencies = value;
            ResolvedTransform::Linac(cfg)
        }
        SweepParam::L => {
            cfg.arch.hidden_layers = value;
            ResolvedTransform::Linac(cfg)
        }
        SweepParam::N => {
            cfg.fit.epochs = value;
            ResolvedTransform::Linac(cfg)
        }
        SweepParam::K => {
            if value == 0 {
                return Ok(ResolvedTransform::Identity);
            }
            if value == cfg.arch.hidden_layers {
                return Ok(ResolvedTransform::LinacReconstruction {
                    fit: cfg.fit,
                    arch: cfg.arch,
                });
            }
            cfg.repr_layer = value;
            ResolvedTransform::Linac(cfg)
        }
    };
    if let ResolvedTransform::Linac(cfg) = &resolved {
        cfg.validate()
            .map_err(|e| Error::InvalidArgument(format!("--values {value}: {e}")))?;
    }
    Ok(resolved)
}

pub fn cmd_sweep(
    config_path: &Path,
    param: SweepParam,
    values: &[usize],
    out_flag: Option<&Path>,
) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("--values: at least one value".into()));
    }
    let config = ExperimentConfig::load(config_path)?;
    let out = config.output_dir(out_flag)?;
    let base = match config.resolve_transform()? {
        ResolvedTransform::Linac(cfg) => cfg,
        other => {
            return Err(Error::InvalidArgument(format!(
                "transform.kind: sweep needs a \"linac\" base transform, got {}",
                other.kind_id()
            )))
        }
    };
    // Validate every variant before the first expensive run.
    let variants: Result<Vec<ResolvedTransform>> = values
        .iter()
        .map(|&v| sweep_variant(&base, param, v))
        .collect();
    let variants = variants?;

    let pgd_block = config
        .attacks
        .iter()
        .find(|b| b.kind == "pgd")
        .cloned()
        .unwrap_or_else(|| {
            serde_json::from_value(serde_json::json!({
                "kind": "pgd", "steps": 20, "restarts": 1
            }))
            .expect("static attack block")
        });
    let budget = pgd_block.budget("attacks")?;
    let attack_cfg = pgd_block.attack_config("attacks")?;
    let attack_key = config
        .key
        .or(Some(base.fit.key.0))
        .expect("linac base has a key");

    // Perturbations for every row come from one undefended classifier
    // trained on the same data and recipe, then score against the variant's
    // exact pipeline. Crafting them on a fixed differentiable source keeps
    // the rows comparable and works for any transform output shape.
    let source = train_pipeline(&config, &ResolvedTransform::Identity)?;
    log::info!(
        "sweep: perturbation source (undefended) clean accuracy {}",
        pct(source.clean_accuracy)
    );

    let mut rows = Vec::new();
    let mut csv = String::from("param,value,clean_accuracy,pgd_robust_accuracy\n");
    for (value, transform) in values.iter().zip(&variants) {
        let start = Instant::now();
        let pipeline = train_pipeline(&config, transform)?;
        let test = &pipeline.test_transformed;
        if test.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset: sweep needs test images".into(),
            ));
        }
        // Rebuild the exact pipeline for this variant.
        let eval_net = pipeline.trained.eval_network();
        let (_, test_raw) = config.dataset.load(config.key)?;
        let normalize_into = |x: &Tensor32| -> Result<Tensor32> {
            match &pipeline.stats {
                Some(s) => linac_core::transforms::apply_normalization(x, s),
                None => Ok(x.clone()),
            }
        };
        let exact_predict = |x: &Tensor32| -> Result<usize> {
            let t = transform.apply(x)?;
            let logits = eval_net.forward(&normalize_into(&t)?)?;
            Ok(argmax(logits.data()))
        };
        let clean = correctness_mask(&test_raw, &exact_predict)?;

        let source_model = ComposedModel::plain(
            source.trained.eval_network(),
            source.stats.as_ref(),
            source.trained.spec.classes,
        );
        let stream = derive_stream(PrivateKey(attack_key), StreamLabel::Attack)
            .split(*value as u64);
        let outcomes = attack_batch(&source_model, &test_raw, &budget, &attack_cfg, &stream)?;
        let mut robust = Vec::with_capacity(outcomes.len());
        for ((o, &label), &c) in outcomes.iter().zip(test_raw.labels()).zip(&clean) {
            robust.push(c && exact_predict(&o.adversarial)? == label);
        }

        let clean_acc = fraction(&clean);
        let robust_acc = fraction(&robust);
        csv.push_str(&format!(
            "{},{},{},{}\n",
            param.id(),
            value,
            pct(clean_acc),
            pct(robust_acc)
        ));
        println!(
            "sweep {}={}: clean {}, robust {} ({:.2?})",
            param.id(),
            value,
            pct(clean_acc),
            pct(robust_acc),
            start.elapsed()
        );
        rows.push(serde_json::json!({
            "value": value,
            "transform": transform,
            "clean_accuracy": clean_acc,
            "pgd_robust_accuracy": robust_acc,
            "elapsed_s": start.elapsed().as_secs_f64(),
        }));
    }

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("sweep.csv"), &csv)?;
    write_meta(
        &out,
        "sweep",
        serde_json::json!({
            "param": param.id(),
            "values": values,
            "norm": norm_id(budget.norm),
            "epsilon": budget.epsilon,
            "perturbation_source": "undefended classifier, same data and recipe",
            "source_clean_accuracy": source.clean_accuracy,
            "rows": rows,
        }),
    )?;
    println!("sweep: {} rows -> {}", values.len(), out.display());
    Ok(())
}
