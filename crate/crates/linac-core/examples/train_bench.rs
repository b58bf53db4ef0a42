//! Times desk-scale classifier training on the procedural corpus and prints
//! the accuracy trajectory — a sizing check before committing to long runs.

use std::time::Instant;

use linac_core::classifier::{train_classifier, ClassifierSpec, TrainConfig};
use linac_core::dataset::{generate_synthetic, SyntheticConfig};
use linac_core::rng::{derive_stream, PrivateKey, StreamLabel};

fn main() {
    let key = PrivateKey(-2314326399425823309);
    let args: Vec<String> = std::env::args().collect();
    let train_n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);

    let cfg = SyntheticConfig::standard(key, train_n, 500);
    let (train, test) = generate_synthetic::<f32>(&cfg).expect("dataset");

    let spec = ClassifierSpec::new(3, 10);
    micro_profile(&train, &spec, key);
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        base_lr: lr,
        lr_drops: vec![epochs * 3 / 5, epochs * 13 / 15],
        eval_every: 1,
        ..TrainConfig::desk()
    };
    let eval_on_train = std::env::var("BENCH_EVAL_TRAIN").is_ok();
    let eval_set = if eval_on_train { &train } else { &test };
    let mut stream = derive_stream(key, StreamLabel::Training);
    let start = Instant::now();
    let trained = train_classifier(&train, &spec, &train_cfg, &mut stream, Some(eval_set))
        .expect("training");
    let elapsed = start.elapsed();

    for row in &trained.curve {
        println!(
            "epoch {:>3}: loss {:.4}, lr {:.4}, acc(avg) {:?}, acc(raw) {:?}",
            row.epoch, row.mean_loss, row.lr, row.eval_acc_avg, row.eval_acc_raw
        );
    }
    println!(
        "trained {train_n} examples x {epochs} epochs in {elapsed:.2?} ({:.2?}/epoch)",
        elapsed / epochs as u32
    );
}

/// Per-example forward / backward timing for the classifier network.
fn micro_profile(
    train: &linac_core::dataset::LabeledImages<f32>,
    spec: &ClassifierSpec,
    key: PrivateKey,
) {
    use linac_core::nn::Network;
    let mut stream = derive_stream(key, StreamLabel::Training);
    let network = Network::<f32>::init_with_gain(spec.layer_specs(), &mut stream, 2.0).unwrap();
    let img = train.image(0);
    let reps = 100;

    let start = Instant::now();
    for _ in 0..reps {
        let _ = network.forward(img).unwrap();
    }
    let fwd = start.elapsed() / reps;

    let mut grads = network.zeros_like_params();
    let start = Instant::now();
    for _ in 0..reps {
        let (out, cache) = network.forward_cached(img).unwrap();
        network
            .backward_into(&cache, &out, Some(&mut grads))
            .unwrap();
    }
    let full = start.elapsed() / reps;

    let start = Instant::now();
    for _ in 0..reps {
        let (out, cache) = network.forward_cached(img).unwrap();
        network.backward_into(&cache, &out, None).unwrap();
    }
    let input_only = start.elapsed() / reps;

    println!(
        "micro: forward {fwd:.2?}, fwd+bwd(params) {full:.2?}, fwd+bwd(input-only) {input_only:.2?}"
    );
}
