//! Times one reference-preset implicit-network fit on a 32x32 image and
//! reports the reconstruction error — a quick throughput check before
//! launching large runs.

use std::time::Instant;

use linac_core::dataset::{generate_synthetic, SyntheticConfig};
use linac_core::inr::{
    encode_grid, fit_inr, initial_params, reconstruct, reconstruction_error, FitConfig, InrArch,
};
use linac_core::optim::{adam_step, AdamState};
use linac_core::rng::PrivateKey;
use linac_core::tensor::Tensor;

fn main() {
    let key = PrivateKey(-2314326399425823309);
    let cfg = SyntheticConfig::standard(key, 1, 0);
    let (train, _) = generate_synthetic::<f32>(&cfg).expect("generate image");
    let image = train.image(0);

    component_breakdown(key);

    let arch = InrArch::reference();
    let fit_cfg = FitConfig::reference(key);

    let start = Instant::now();
    let fitted = fit_inr(image, &fit_cfg, &arch).expect("fit");
    let fit_time = start.elapsed();

    let start = Instant::now();
    let recon = reconstruct(&fitted.params, 32, 32).expect("reconstruct");
    let recon_time = start.elapsed();

    let err = reconstruction_error(&recon, image).expect("error");
    println!(
        "fit: {} steps in {:.2?} ({:.1} ms/step)",
        fitted.loss_trace.len(),
        fit_time,
        fit_time.as_secs_f64() * 1e3 / fitted.loss_trace.len() as f64
    );
    println!("reconstruction pass: {recon_time:.2?}");
    println!("final loss {:.5}, reconstruction error {err:.5}", fitted.loss_trace.last().unwrap());
}

/// Times forward, forward+backward, and the Adam update separately on a
/// reference-architecture batch so kernel work can be attributed.
fn component_breakdown(key: PrivateKey) {
    let arch = InrArch::reference();
    let mut params = initial_params::<f32>(key, &arch).expect("init");
    let coords = encode_grid::<f32>(32, 32, arch.frequencies);
    let batch: Vec<f32> = coords.data()[..32 * arch.input_width()].to_vec();
    let batch = Tensor::new(vec![32, arch.input_width()], batch).unwrap();

    let reps = 200;
    let start = Instant::now();
    for _ in 0..reps {
        let _ = params.network.forward(&batch).unwrap();
    }
    let fwd = start.elapsed() / reps;

    let start = Instant::now();
    let mut grads = None;
    for _ in 0..reps {
        let (out, cache) = params.network.forward_cached(&batch).unwrap();
        let g = out.clone();
        let back = params.network.backward(&cache, &g, true).unwrap();
        grads = back.param_grads;
    }
    let fwd_bwd = start.elapsed() / reps;

    let grads = grads.unwrap();
    let mut adam = AdamState::new(params.network.params());
    let start = Instant::now();
    for _ in 0..reps {
        adam_step(params.network.params_mut(), &grads, &mut adam, 1e-9).unwrap();
    }
    let adam_t = start.elapsed() / reps;

    println!("components: forward {fwd:.2?}, forward+backward {fwd_bwd:.2?}, adam {adam_t:.2?}");
}
