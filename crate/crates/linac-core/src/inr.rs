//! Per-image implicit network fitting.
//!
//! An implicit network maps a pixel's positionally-encoded coordinates to
//! its colour. Fitting one network per image (from a key-derived shared
//! initialisation, with key-derived per-epoch pixel shuffles) is the first
//! half of the keyed input transform; the second half reads the fitted
//! network's hidden activations back out on the full pixel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};
use crate::optim::{adam_step, cosine_lr, AdamState};
use crate::rng::{derive_stream, PrivateKey, StreamLabel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Colour channels produced by the implicit network's output layer.
pub const COLOR_CHANNELS: usize = 3;

/// Architecture of the per-image implicit network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InrArch {
    /// Hidden-layer count `L`.
    pub hidden_layers: usize,
    /// Units per hidden layer `H`.
    pub hidden_units: usize,
    /// Positional-encoding frequency count `F`.
    pub frequencies: usize,
}

impl InrArch {
    /// Reference architecture: 5 hidden layers of 256 relu units over 5
    /// encoding frequencies.
    pub fn reference() -> Self {
        InrArch {
            hidden_layers: 5,
            hidden_units: 256,
            frequencies: 5,
        }
    }

    /// Scaled-down architecture for fast experiments.
    pub fn desk() -> Self {
        InrArch {
            hidden_layers: 5,
            hidden_units: 64,
            frequencies: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 || self.hidden_units < 1 || self.frequencies < 1 {
            return Err(Error::InvalidArgument(format!(
                "implicit-network architecture fields must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Width of the encoded input: two coordinates, each contributing
    /// `2 * frequencies` features.
    pub fn input_width(&self) -> usize {
        4 * self.frequencies
    }

    /// Layer stack: `hidden_layers` relu blocks, then a linear colour head.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(2 * self.hidden_layers + 1);
        let mut width = self.input_width();
        for _ in 0..self.hidden_layers {
            specs.push(LayerSpec::Dense {
                in_features: width,
                out_features: self.hidden_units,
                bias: true,
            });
            specs.push(LayerSpec::Relu);
            width = self.hidden_units;
        }
        specs.push(LayerSpec::Dense {
            in_features: width,
            out_features: COLOR_CHANNELS,
            bias: true,
        });
        specs
    }
}

/// Fitting hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Epoch count `N`.
    pub epochs: usize,
    /// Pixels per mini-batch `M`.
    pub batch_pixels: usize,
    /// Adam learning rate at the start of the schedule.
    pub learning_rate: f64,
    /// Final learning rate the cosine schedule decays to (absolute, not a
    /// fraction of the base rate).
    pub cosine_floor: f64,
    /// Private key seeding the initialisation and the per-epoch shuffles.
    pub key: PrivateKey,
}

impl FitConfig {
    /// Reference fitting recipe: 10 epochs of 32-pixel batches, learning
    /// rate decaying 1e-3 -> 1e-4.
    pub fn reference(key: PrivateKey) -> Self {
        FitConfig {
            epochs: 10,
            batch_pixels: 32,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_pixels < 1 {
            return Err(Error::InvalidArgument(format!(
                "fit config needs epochs >= 1 and batch_pixels >= 1, got {self:?}"
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.cosine_floor > 0.0 && self.cosine_floor <= self.learning_rate) {
            return Err(Error::InvalidArgument(format!(
                "cosine floor must lie in (0, learning_rate], got {}",
                self.cosine_floor
            )));
        }
        Ok(())
    }

    /// The schedule floor as a fraction of the base rate.
    pub fn floor_fraction(&self) -> f64 {
        self.cosine_floor / self.learning_rate
    }
}

/// A fitted (or freshly initialised) implicit network.
#[derive(Debug, Clone, PartialEq)]
pub struct InrParams<S> {
    pub arch: InrArch,
    pub network: Network<S>,
}

impl<S: Scalar> InrParams<S> {
    /// Persist as a directory: `arch.json` plus the network bundle.
    pub fn save_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("arch.json"), serde_json::to_string_pretty(&self.arch)?)?;
        self.network.save_dir(dir)
    }

    pub fn load_dir(dir: impl AsRef<std::path::Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let arch: InrArch = serde_json::from_str(&std::fs::read_to_string(dir.join("arch.json"))?)?;
        arch.validate()?;
        let network = Network::load_dir(dir)?;
        if network.specs() != arch.layer_specs() {
            return Err(Error::Format(
                "network layers do not match the stored architecture".into(),
            ));
        }
        Ok(InrParams { arch, network })
    }
}

/// Result of [`fit_inr`]: the fitted network plus the per-step loss trace.
#[derive(Debug, Clone)]
pub struct FittedInr<S> {
    pub params: InrParams<S>,
    /// Mini-batch loss at every optimizer step (length = steps taken).
    pub loss_trace: Vec<f64>,
}

/// Normalized coordinate of index `i` along an extent: `2i/(extent-1) - 1`,
/// or 0 when the extent is 1.
pub fn pixel_coord(i: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (extent - 1) as f64 - 1.0
    }
}

/// Row-major grid of normalized `(row, column)` coordinates.
pub fn pixel_grid(rows: usize, cols: usize) -> Vec<(f64, f64)> {
    let mut grid = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ci = pixel_coord(i, rows);
        for j in 0..cols {
            grid.push((ci, pixel_coord(j, cols)));
        }
    }
    grid
}

/// Positional encoding of one normalized coordinate:
/// `[sin(2^0 pi d), cos(2^0 pi d), ..., sin(2^{F-1} pi d), cos(2^{F-1} pi d)]`.
pub fn positional_encode<S: Scalar>(d: f64, frequencies: usize, out: &mut Vec<S>) {
    let mut scale = std::f64::consts::PI;
    for _ in 0..frequencies {
        let a = scale * d;
        out.push(S::of_f64(a.sin()));
        out.push(S::of_f64(a.cos()));
        scale *= 2.0;
    }
}

/// Encoded inputs for the full pixel grid: `[rows * cols, 4F]`, row-major
/// over pixels, row coordinate's features first.
pub fn encode_grid<S: Scalar>(rows: usize, cols: usize, frequencies: usize) -> Tensor<S> {
    let width = 4 * frequencies;
    let mut data = Vec::with_capacity(rows * cols * width);
    for (ci, cj) in pixel_grid(rows, cols) {
        positional_encode(ci, frequencies, &mut data);
        positional_encode(cj, frequencies, &mut data);
    }
    Tensor::new(vec![rows * cols, width], data).expect("grid shape consistent")
}

/// The shared starting parameters for a key: every image fitted under one
/// key starts from this same network.
pub fn initial_params<S: Scalar>(key: PrivateKey, arch: &InrArch) -> Result<InrParams<S>> {
    arch.validate()?;
    let mut stream = derive_stream(key, StreamLabel::Init);
    let network = Network::init(arch.layer_specs(), &mut stream)?;
    Ok(InrParams { arch: *arch, network })
}

/// Fit an implicit network to one `[rows, cols, 3]` image.
///
/// Runs exactly `floor(rows*cols / M) * N` Adam steps. Each epoch visits the
/// first `S*M` positions of a fresh key-derived pixel shuffle in order; the
/// step loss is the mini-batch sum of squared colour errors scaled by
/// `1 / (M * rows * cols)`, and the learning rate follows a cosine schedule
/// across all steps. Identical `(image, config, arch)` give bit-identical
/// results.
pub fn fit_inr<S: Scalar>(image: &Tensor<S>, cfg: &FitConfig, arch: &InrArch) -> Result<FittedInr<S>> {
    cfg.validate()?;
    let (rows, cols) = image_extents(image)?;
    if !image.all_finite() {
        return Err(Error::NonFinite("fit_inr input image".into()));
    }

    let pixels = rows * cols;
    let m = cfg.batch_pixels;
    let batches_per_epoch = pixels / m;
    let total_steps = batches_per_epoch * cfg.epochs;

    let mut params = initial_params::<S>(cfg.key, arch)?;
    let coords = encode_grid::<S>(rows, cols, arch.frequencies);
    let width = arch.input_width();

    let mut adam = AdamState::new(params.network.params());
    let mut trace = Vec::with_capacity(total_steps);
    let base_lr = S::of_f64(cfg.learning_rate);
    let floor = S::of_f64(cfg.floor_fraction());
    let grad_scale = S::of_f64(2.0 / (m * pixels) as f64);
    let loss_scale = S::of_f64(1.0 / (m * pixels) as f64);

    let mut batch_in = vec![S::zero(); m * width];
    let mut batch_target = vec![S::zero(); m * COLOR_CHANNELS];
    let mut grads = params.network.zeros_like_params();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let perm =
            derive_stream(cfg.key, StreamLabel::ShuffleEpoch(epoch as u32)).permutation(pixels);
        for batch in 0..batches_per_epoch {
            let idxs = &perm[batch * m..(batch + 1) * m];
            for (slot, &p) in idxs.iter().enumerate() {
                batch_in[slot * width..(slot + 1) * width]
                    .copy_from_slice(&coords.data()[p * width..(p + 1) * width]);
                batch_target[slot * COLOR_CHANNELS..(slot + 1) * COLOR_CHANNELS]
                    .copy_from_slice(&image.data()[p * COLOR_CHANNELS..(p + 1) * COLOR_CHANNELS]);
            }
            let input = Tensor::new(vec![m, width], batch_in.clone())?;
            let (out, cache) = params.network.forward_cached(&input)?;

            let mut loss = S::zero();
            let mut out_grad = out.clone();
            for (g, &t) in out_grad.data_mut().iter_mut().zip(&batch_target) {
                let r = *g - t;
                loss = loss + r * r;
                *g = r * grad_scale;
            }
            loss = loss * loss_scale;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "fit loss at step {step} (epoch {epoch})"
                )));
            }

            params
                .network
                .backward_into(&cache, &out_grad, Some(&mut grads))?;
            let lr = cosine_lr(step, total_steps, base_lr, floor);
            adam_step(params.network.params_mut(), &grads, &mut adam, lr)?;
            trace.push(loss.into_f64());
            step += 1;
        }
    }
    debug_assert_eq!(step, total_steps);
    Ok(FittedInr {
        params,
        loss_trace: trace,
    })
}

/// Post-activation output of hidden layer `repr_layer` (1-based, at most
/// the hidden-layer count) at one normalized coordinate.
pub fn hidden_activations<S: Scalar>(
    params: &InrParams<S>,
    coord: (f64, f64),
    repr_layer: usize,
) -> Result<Vec<S>> {
    check_repr_layer(&params.arch, repr_layer)?;
    let mut data = Vec::with_capacity(params.arch.input_width());
    positional_encode(coord.0, params.arch.frequencies, &mut data);
    positional_encode(coord.1, params.arch.frequencies, &mut data);
    let input = Tensor::new(vec![params.arch.input_width()], data)?;
    // Hidden block k occupies layers 2k-2 (dense) and 2k-1 (relu).
    let out = params.network.forward_prefix(&input, 2 * repr_layer)?;
    Ok(out.into_data())
}

/// Hidden activations of layer `repr_layer` at every grid coordinate,
/// stacked as `[rows, cols, hidden_units]`.
pub fn hidden_activation_grid<S: Scalar>(
    params: &InrParams<S>,
    rows: usize,
    cols: usize,
    repr_layer: usize,
) -> Result<Tensor<S>> {
    check_repr_layer(&params.arch, repr_layer)?;
    let coords = encode_grid::<S>(rows, cols, params.arch.frequencies);
    let out = params.network.forward_prefix(&coords, 2 * repr_layer)?;
    out.reshaped(vec![rows, cols, params.arch.hidden_units])
}

fn check_repr_layer(arch: &InrArch, repr_layer: usize) -> Result<()> {
    if repr_layer < 1 || repr_layer > arch.hidden_layers {
        return Err(Error::InvalidArgument(format!(
            "representation layer {repr_layer} out of range 1..={}",
            arch.hidden_layers
        )));
    }
    Ok(())
}

/// Evaluate the full network on the pixel grid: an approximate colour image
/// `[rows, cols, 3]`.
pub fn reconstruct<S: Scalar>(params: &InrParams<S>, rows: usize, cols: usize) -> Result<Tensor<S>> {
    let coords = encode_grid::<S>(rows, cols, params.arch.frequencies);
    let out = params.network.forward(&coords)?;
    out.reshaped(vec![rows, cols, COLOR_CHANNELS])
}

/// Mean over pixels of the summed squared channel differences.
pub fn reconstruction_error<S: Scalar>(recon: &Tensor<S>, source: &Tensor<S>) -> Result<f64> {
    if recon.dims() != source.dims() {
        return Err(Error::shape(
            "reconstruction_error",
            format!("{:?}", source.dims()),
            format!("{:?}", recon.dims()),
        ));
    }
    let (rows, cols) = image_extents(source)?;
    let mut acc = 0.0f64;
    for (&a, &b) in recon.data().iter().zip(source.data()) {
        let d = a.into_f64() - b.into_f64();
        acc += d * d;
    }
    Ok(acc / (rows * cols) as f64)
}

fn image_extents<S: Scalar>(image: &Tensor<S>) -> Result<(usize, usize)> {
    match image.dims() {
        &[rows, cols, COLOR_CHANNELS] if rows > 0 && cols > 0 => Ok((rows, cols)),
        other => Err(Error::shape(
            "colour image",
            "[rows > 0, cols > 0, 3]",
            format!("{other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: PrivateKey = PrivateKey(-2314326399425823309);

    fn small_arch() -> InrArch {
        InrArch {
            hidden_layers: 2,
            hidden_units: 16,
            frequencies: 2,
        }
    }

    fn textured_image(rows: usize, cols: usize) -> Tensor<f32> {
        // Smooth gradients plus a diagonal stripe; values in [0, 1].
        Tensor::from_fn(vec![rows, cols, 3], |idx| {
            let c = idx % 3;
            let p = idx / 3;
            let (i, j) = (p / cols, p % cols);
            match c {
                0 => i as f32 / rows as f32,
                1 => j as f32 / cols as f32,
                _ => {
                    if (i + j) % 7 < 3 {
                        0.8
                    } else {
                        0.2
                    }
                }
            }
        })
    }

    #[test]
    fn pixel_coords_match_definition() {
        assert_eq!(pixel_coord(0, 2), -1.0);
        assert_eq!(pixel_coord(1, 2), 1.0);
        assert_eq!(pixel_coord(0, 3), -1.0);
        assert_eq!(pixel_coord(1, 3), 0.0);
        assert_eq!(pixel_coord(2, 3), 1.0);
        assert_eq!(pixel_coord(0, 1), 0.0);
    }

    #[test]
    fn positional_encoding_hand_values() {
        let mut out: Vec<f64> = Vec::new();
        positional_encode(0.0, 1, &mut out);
        assert!((out[0]).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);

        out.clear();
        positional_encode(1.0, 2, &mut out);
        // [sin(pi), cos(pi), sin(2pi), cos(2pi)] = [0, -1, 0, 1]
        assert!(out[0].abs() < 1e-9);
        assert!((out[1] + 1.0).abs() < 1e-9);
        assert!(out[2].abs() < 1e-9);
        assert!((out[3] - 1.0).abs() < 1e-9);

        out.clear();
        positional_encode(0.5, 1, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
    }

    #[test]
    fn reference_arch_has_twenty_inputs() {
        let arch = InrArch::reference();
        assert_eq!(arch.input_width(), 20);
        assert_eq!(arch.layer_specs().len(), 11); // 5 dense+relu pairs + head
    }

    #[test]
    fn fit_performs_exactly_floor_steps() {
        let arch = small_arch();
        let image = textured_image(8, 8);
        // 64 pixels, batches of 12 -> floor 5 per epoch, 3 epochs -> 15.
        let cfg = FitConfig {
            epochs: 3,
            batch_pixels: 12,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let fitted = fit_inr(&image, &cfg, &arch).unwrap();
        assert_eq!(fitted.loss_trace.len(), 15);
        assert!(fitted.loss_trace.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn fit_is_deterministic_and_key_sensitive() {
        let arch = small_arch();
        let image = textured_image(6, 6);
        let cfg = FitConfig {
            epochs: 2,
            batch_pixels: 9,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let a = fit_inr(&image, &cfg, &arch).unwrap();
        let b = fit_inr(&image, &cfg, &arch).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_trace, b.loss_trace);

        let other = FitConfig {
            key: PrivateKey(7),
            ..cfg
        };
        let c = fit_inr(&image, &other, &arch).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn shared_start_is_identical_across_images() {
        let arch = small_arch();
        let a = initial_params::<f32>(KEY, &arch).unwrap();
        let b = initial_params::<f32>(KEY, &arch).unwrap();
        assert_eq!(a, b);
        let c = initial_params::<f32>(PrivateKey(1), &arch).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn loss_decreases_on_textured_image() {
        let arch = small_arch();
        let image = textured_image(12, 12);
        let cfg = FitConfig {
            epochs: 10,
            batch_pixels: 16,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let fitted = fit_inr(&image, &cfg, &arch).unwrap();
        let first = fitted.loss_trace[0];
        let last = *fitted.loss_trace.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn zero_image_fits_to_near_zero() {
        let arch = InrArch {
            hidden_layers: 3,
            hidden_units: 32,
            frequencies: 3,
        };
        let image = Tensor::<f32>::zeros(vec![16, 16, 3]);
        let cfg = FitConfig {
            epochs: 300,
            batch_pixels: 32,
            learning_rate: 2e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let fitted = fit_inr(&image, &cfg, &arch).unwrap();
        let recon = reconstruct(&fitted.params, 16, 16).unwrap();
        let err = reconstruction_error(&recon, &image).unwrap();
        assert!(err <= 1e-3, "zero-image reconstruction error {err}");
    }

    #[test]
    fn hidden_activations_shape_sign_and_range_checks() {
        let arch = small_arch();
        let image = textured_image(6, 6);
        let cfg = FitConfig {
            epochs: 1,
            batch_pixels: 6,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let fitted = fit_inr(&image, &cfg, &arch).unwrap();
        for k in 1..=2 {
            let acts = hidden_activations(&fitted.params, (0.25, -0.5), k).unwrap();
            assert_eq!(acts.len(), arch.hidden_units);
            assert!(acts.iter().all(|&a| a >= 0.0), "relu outputs must be >= 0");
            let again = hidden_activations(&fitted.params, (0.25, -0.5), k).unwrap();
            assert_eq!(acts, again);
        }
        assert!(hidden_activations(&fitted.params, (0.0, 0.0), 0).is_err());
        assert!(hidden_activations(&fitted.params, (0.0, 0.0), 3).is_err());
    }

    #[test]
    fn activation_grid_matches_pointwise_path() {
        let arch = small_arch();
        let image = textured_image(5, 4);
        let cfg = FitConfig {
            epochs: 2,
            batch_pixels: 5,
            learning_rate: 1e-3,
            cosine_floor: 1e-4,
            key: KEY,
        };
        let fitted = fit_inr(&image, &cfg, &arch).unwrap();
        let grid = hidden_activation_grid(&fitted.params, 5, 4, 1).unwrap();
        assert_eq!(grid.dims(), &[5, 4, arch.hidden_units]);
        for (pi, coord) in pixel_grid(5, 4).into_iter().enumerate() {
            let point = hidden_activations(&fitted.params, coord, 1).unwrap();
            let (i, j) = (pi / 4, pi % 4);
            let base = grid.offset3(i, j, 0);
            assert_eq!(&grid.data()[base..base + arch.hidden_units], &point[..]);
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let good = FitConfig::reference(KEY);
        assert!(good.validate().is_ok());
        assert!(FitConfig { epochs: 0, ..good }.validate().is_err());
        assert!(FitConfig {
            batch_pixels: 0,
            ..good
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            learning_rate: 0.0,
            ..good
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            cosine_floor: 0.0,
            ..good
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            cosine_floor: 1.5,
            ..good
        }
        .validate()
        .is_err());
        assert!(InrArch {
            hidden_layers: 0,
            hidden_units: 4,
            frequencies: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn reference_schedule_decays_to_absolute_floor() {
        let cfg = FitConfig::reference(KEY);
        assert!((cfg.floor_fraction() - 0.1).abs() < 1e-12);
        let last = crate::optim::cosine_lr(320, 320, cfg.learning_rate, cfg.floor_fraction());
        assert!(
            (last - cfg.cosine_floor).abs() < 1e-12,
            "final lr {last} should equal the configured floor {}",
            cfg.cosine_floor
        );
        let first = crate::optim::cosine_lr(0, 320, cfg.learning_rate, cfg.floor_fraction());
        assert!((first - cfg.learning_rate).abs() < 1e-12);
    }

    #[test]
    fn params_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = initial_params::<f32>(KEY, &small_arch()).unwrap();
        params.save_dir(dir.path()).unwrap();
        let back = InrParams::<f32>::load_dir(dir.path()).unwrap();
        assert_eq!(params, back);
    }
}
