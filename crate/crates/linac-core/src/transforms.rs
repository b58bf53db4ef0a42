//! Input transformations: the keyed activation-image transform, its
//! reconstruction mode, the block pixel shuffle baseline, per-channel
//! normalization, and CutMix augmentation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inr::{
    fit_inr, hidden_activation_grid, reconstruct, FitConfig, InrArch,
};
use crate::rng::{derive_stream, PrivateKey, RngStream, StreamLabel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Full configuration of the keyed activation-image transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinacConfig {
    pub fit: FitConfig,
    pub arch: InrArch,
    /// Hidden layer whose activations become the output channels; must be
    /// strictly below the hidden-layer count (the last layer is reserved
    /// for reconstruction mode).
    pub repr_layer: usize,
}

impl LinacConfig {
    /// Reference setup: middle hidden layer (2) of the reference
    /// architecture under the reference fitting recipe.
    pub fn reference(key: PrivateKey) -> Self {
        LinacConfig {
            fit: FitConfig::reference(key),
            arch: InrArch::reference(),
            repr_layer: 2,
        }
    }

    /// Scaled-down setup for fast experiments: 64-unit network, 5 epochs.
    pub fn desk(key: PrivateKey) -> Self {
        LinacConfig {
            fit: FitConfig {
                epochs: 5,
                ..FitConfig::reference(key)
            },
            arch: InrArch::desk(),
            repr_layer: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.arch.validate()?;
        if self.repr_layer < 1 || self.repr_layer >= self.arch.hidden_layers {
            return Err(Error::InvalidArgument(format!(
                "representation layer {} must lie in 1..{} (use reconstruction mode for the \
                 final layer)",
                self.repr_layer, self.arch.hidden_layers
            )));
        }
        Ok(())
    }

    /// Channel count of the transform output.
    pub fn output_channels(&self) -> usize {
        self.arch.hidden_units
    }
}

/// The keyed transform: fit an implicit network to `x`, then stack hidden
/// activations of the representation layer at every pixel.
///
/// `[rows, cols, 3]` in, `[rows, cols, hidden_units]` out; a pure function
/// of `(x, config)` including the private key inside the config.
pub fn linac_transform<S: Scalar>(x: &Tensor<S>, cfg: &LinacConfig) -> Result<Tensor<S>> {
    cfg.validate()?;
    let fitted = fit_inr(x, &cfg.fit, &cfg.arch)?;
    let (rows, cols) = (x.dims()[0], x.dims()[1]);
    hidden_activation_grid(&fitted.params, rows, cols, cfg.repr_layer)
}

/// Reconstruction mode: fit an implicit network and evaluate its colour
/// output on the grid, giving an approximate `[rows, cols, 3]` copy of `x`.
pub fn linac_reconstruction<S: Scalar>(
    x: &Tensor<S>,
    fit: &FitConfig,
    arch: &InrArch,
) -> Result<Tensor<S>> {
    let fitted = fit_inr(x, fit, arch)?;
    let (rows, cols) = (x.dims()[0], x.dims()[1]);
    reconstruct(&fitted.params, rows, cols)
}

/// Apply a fallible transform across a slice of images in parallel,
/// preserving order. Results are identical for any worker count because
/// each image's work is independent and the collection is index-ordered.
pub fn transform_all<S, F>(images: &[Tensor<S>], f: F) -> Result<Vec<Tensor<S>>>
where
    S: Scalar,
    F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
{
    images.par_iter().map(|img| f(img)).collect()
}

/// Keyed block pixel shuffle: one permutation of in-block positions,
/// applied identically to every block of every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleKeySpec {
    /// Block side length; must divide both image extents.
    pub block: usize,
    pub key: PrivateKey,
}

impl ShuffleKeySpec {
    /// The in-block position permutation this spec induces.
    pub fn permutation(&self) -> Vec<usize> {
        derive_stream(self.key, StreamLabel::Shuffle).permutation(self.block * self.block)
    }
}

/// Permute pixels within every `block x block` tile, channels moving with
/// their pixel. Output position `t` of a tile takes input position
/// `perm[t]`.
pub fn block_pixel_shuffle<S: Scalar>(x: &Tensor<S>, spec: &ShuffleKeySpec) -> Result<Tensor<S>> {
    apply_block_permutation(x, spec.block, &spec.permutation(), false)
}

/// Inverse of [`block_pixel_shuffle`] for the same spec.
pub fn block_pixel_unshuffle<S: Scalar>(x: &Tensor<S>, spec: &ShuffleKeySpec) -> Result<Tensor<S>> {
    apply_block_permutation(x, spec.block, &spec.permutation(), true)
}

fn apply_block_permutation<S: Scalar>(
    x: &Tensor<S>,
    block: usize,
    perm: &[usize],
    inverse: bool,
) -> Result<Tensor<S>> {
    let &[rows, cols, channels] = x.dims() else {
        return Err(Error::shape("block shuffle", "[rows, cols, c]", format!("{:?}", x.dims())));
    };
    if block == 0 || rows % block != 0 || cols % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "block size {block} must divide image extents {rows}x{cols}"
        )));
    }
    let xd = x.data();
    let mut out = vec![S::zero(); x.len()];
    let pixel_of = |tile_row: usize, tile_col: usize, pos: usize| -> usize {
        let (py, px) = (pos / block, pos % block);
        ((tile_row * block + py) * cols + tile_col * block + px) * channels
    };
    for ty in 0..rows / block {
        for tx in 0..cols / block {
            for (t, &s) in perm.iter().enumerate() {
                let (dst, src) = if inverse { (s, t) } else { (t, s) };
                let d = pixel_of(ty, tx, dst);
                let o = pixel_of(ty, tx, src);
                out[d..d + channels].copy_from_slice(&xd[o..o + channels]);
            }
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

/// Per-channel mean and standard deviation over a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Identity statistics (mean 0, std 1) for the given channel count —
    /// the "no normalization" case expressed uniformly.
    pub fn identity(channels: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Compute per-channel statistics over a set of `[rows, cols, c]` images.
///
/// Accumulation runs in fixed image-then-pixel order; statistics are
/// independent of image order all the same (sums commute exactly only in
/// exact arithmetic, so the fixed order is what we pin).
pub fn fit_normalization<S: Scalar>(images: &[Tensor<S>]) -> Result<NormalizationStats> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("fit_normalization on empty set".into()))?;
    let &[_, _, channels] = first.dims() else {
        return Err(Error::shape("fit_normalization", "[rows, cols, c]", format!("{:?}", first.dims())));
    };

    let mut count = 0u64;
    let mut sum = vec![0.0f64; channels];
    for img in images {
        if img.dims().last() != Some(&channels) || img.rank() != 3 {
            return Err(Error::shape(
                "fit_normalization",
                format!("[.., .., {channels}]"),
                format!("{:?}", img.dims()),
            ));
        }
        for px in img.data().chunks_exact(channels) {
            for (acc, &v) in sum.iter_mut().zip(px) {
                *acc += v.into_f64();
            }
        }
        count += (img.len() / channels) as u64;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    let mut sq = vec![0.0f64; channels];
    for img in images {
        for px in img.data().chunks_exact(channels) {
            for ((acc, &v), m) in sq.iter_mut().zip(px).zip(&mean) {
                let d = v.into_f64() - m;
                *acc += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    if let Some(c) = std.iter().position(|&s| s < 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "channel {c} has (near-)zero standard deviation; normalization undefined"
        )));
    }
    Ok(NormalizationStats { mean, std })
}

/// Channel-wise `(x - mean) / std`.
pub fn apply_normalization<S: Scalar>(x: &Tensor<S>, stats: &NormalizationStats) -> Result<Tensor<S>> {
    let channels = stats.channels();
    if x.rank() != 3 || x.dims()[2] != channels {
        return Err(Error::shape(
            "apply_normalization",
            format!("[.., .., {channels}]"),
            format!("{:?}", x.dims()),
        ));
    }
    let mean: Vec<S> = stats.mean.iter().map(|&m| S::of_f64(m)).collect();
    let std: Vec<S> = stats.std.iter().map(|&s| S::of_f64(s)).collect();
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(channels) {
        for ((v, &m), &s) in px.iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

/// Pull a gradient back through [`apply_normalization`]: since the map is
/// `(x - mean) / std` per channel, the input gradient is the output
/// gradient divided by that channel's standard deviation.
pub fn normalization_input_grad<S: Scalar>(
    grad: &Tensor<S>,
    stats: &NormalizationStats,
) -> Result<Tensor<S>> {
    let channels = stats.channels();
    if grad.rank() != 3 || grad.dims()[2] != channels {
        return Err(Error::shape(
            "normalization_input_grad",
            format!("[.., .., {channels}]"),
            format!("{:?}", grad.dims()),
        ));
    }
    let std: Vec<S> = stats.std.iter().map(|&s| S::of_f64(s)).collect();
    let mut out = grad.clone();
    for px in out.data_mut().chunks_exact_mut(channels) {
        for (v, &s) in px.iter_mut().zip(&std) {
            *v = *v / s;
        }
    }
    Ok(out)
}

/// CutMix of two images: a rectangular patch of `xb` pasted into `xa`.
///
/// Returns the mixed image and the weight of `xb`'s label (the realized
/// pasted-area fraction); `xa`'s label carries the complement. The mix
/// ratio is drawn uniformly, the box is centred uniformly over the pixel
/// grid and clipped at the borders, and weights are recomputed from the
/// clipped box so they always reflect what was actually pasted.
///
/// Consumes exactly three draws from the stream: ratio, centre row,
/// centre column.
pub fn cutmix<S: Scalar>(
    xa: &Tensor<S>,
    xb: &Tensor<S>,
    stream: &mut RngStream,
) -> Result<(Tensor<S>, f64)> {
    let lambda: f64 = stream.next_uniform();
    let rows = xa.dims().first().copied().unwrap_or(0);
    let cols = xa.dims().get(1).copied().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return Err(Error::shape("cutmix", "[rows, cols, c]", format!("{:?}", xa.dims())));
    }
    let cy = stream.next_below(rows as u64) as usize;
    let cx = stream.next_below(cols as u64) as usize;
    cutmix_at(xa, xb, lambda, cy, cx)
}

/// Deterministic CutMix core with explicit ratio and box centre; exposed
/// so exact box geometries can be exercised directly.
pub fn cutmix_at<S: Scalar>(
    xa: &Tensor<S>,
    xb: &Tensor<S>,
    lambda: f64,
    cy: usize,
    cx: usize,
) -> Result<(Tensor<S>, f64)> {
    if xa.dims() != xb.dims() {
        return Err(Error::shape(
            "cutmix",
            format!("{:?}", xa.dims()),
            format!("{:?}", xb.dims()),
        ));
    }
    let &[rows, cols, channels] = xa.dims() else {
        return Err(Error::shape("cutmix", "[rows, cols, c]", format!("{:?}", xa.dims())));
    };
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "cutmix ratio {lambda} outside [0, 1]"
        )));
    }
    // Box side fraction sqrt(1 - lambda) gives area fraction (1 - lambda)
    // before clipping.
    let frac = (1.0 - lambda).sqrt();
    let cut_h = (rows as f64 * frac).round() as usize;
    let cut_w = (cols as f64 * frac).round() as usize;
    let y0 = cy.saturating_sub(cut_h / 2);
    let y1 = (y0 + cut_h).min(rows);
    let x0 = cx.saturating_sub(cut_w / 2);
    let x1 = (x0 + cut_w).min(cols);

    let mut out = xa.clone();
    for y in y0..y1 {
        let base = (y * cols + x0) * channels;
        let len = (x1 - x0) * channels;
        out.data_mut()[base..base + len].copy_from_slice(&xb.data()[base..base + len]);
    }
    let area = ((y1 - y0) * (x1 - x0)) as f64 / (rows * cols) as f64;
    Ok((out, area))
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: PrivateKey = PrivateKey(-2314326399425823309);

    fn desk_cfg(key: PrivateKey) -> LinacConfig {
        LinacConfig {
            fit: FitConfig {
                epochs: 2,
                batch_pixels: 8,
                learning_rate: 1e-3,
                cosine_floor: 1e-4,
                key,
            },
            arch: InrArch {
                hidden_layers: 3,
                hidden_units: 12,
                frequencies: 2,
            },
            repr_layer: 2,
        }
    }

    fn test_image(rows: usize, cols: usize, salt: u64) -> Tensor<f32> {
        let mut s = derive_stream(PrivateKey(salt as i64), StreamLabel::Dataset);
        Tensor::from_fn(vec![rows, cols, 3], |_| s.next_uniform::<f32>())
    }

    #[test]
    fn linac_transform_shape_and_determinism() {
        let cfg = desk_cfg(KEY);
        let x = test_image(6, 6, 1);
        let a = linac_transform(&x, &cfg).unwrap();
        assert_eq!(a.dims(), &[6, 6, 12]);
        let b = linac_transform(&x, &cfg).unwrap();
        assert_eq!(
            a.to_lnt_bytes().unwrap(),
            b.to_lnt_bytes().unwrap(),
            "same input and key must give bit-identical activation images"
        );
    }

    #[test]
    fn linac_transform_differs_across_keys() {
        let x = test_image(6, 6, 2);
        let a = linac_transform(&x, &desk_cfg(KEY)).unwrap();
        let b = linac_transform(&x, &desk_cfg(PrivateKey(99))).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-3);
    }

    #[test]
    fn linac_config_rejects_final_layer() {
        let mut cfg = desk_cfg(KEY);
        cfg.repr_layer = 3; // == hidden_layers
        assert!(cfg.validate().is_err());
        cfg.repr_layer = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn reconstruction_mode_outputs_colour_dims() {
        let cfg = desk_cfg(KEY);
        let x = test_image(5, 7, 3);
        let r = linac_reconstruction(&x, &cfg.fit, &cfg.arch).unwrap();
        assert_eq!(r.dims(), &[5, 7, 3]);
        let r2 = linac_reconstruction(&x, &cfg.fit, &cfg.arch).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn transform_all_preserves_order() {
        let imgs: Vec<_> = (0..4).map(|i| test_image(4, 4, 10 + i)).collect();
        let out = transform_all(&imgs, |x| {
            let mut y = x.clone();
            y.map_inplace(|v| v * 2.0);
            Ok(y)
        })
        .unwrap();
        for (i, o) in out.iter().enumerate() {
            assert_eq!(o.data()[0], imgs[i].data()[0] * 2.0);
        }
    }

    #[test]
    fn block_shuffle_round_trips_and_preserves_multiset() {
        let spec = ShuffleKeySpec { block: 4, key: KEY };
        let x = test_image(8, 8, 4);
        let shuffled = block_pixel_shuffle(&x, &spec).unwrap();
        assert_ne!(shuffled, x, "a random 16-position permutation should move pixels");
        let back = block_pixel_unshuffle(&shuffled, &spec).unwrap();
        assert_eq!(
            back.to_lnt_bytes().unwrap(),
            x.to_lnt_bytes().unwrap(),
            "unshuffle must restore the input exactly"
        );

        // Multiset of pixel values inside the first block is preserved.
        let collect_block = |t: &Tensor<f32>| {
            let mut px: Vec<[u32; 3]> = Vec::new();
            for y in 0..4 {
                for x_ in 0..4 {
                    let o = t.offset3(y, x_, 0);
                    px.push([
                        t.data()[o].to_bits(),
                        t.data()[o + 1].to_bits(),
                        t.data()[o + 2].to_bits(),
                    ]);
                }
            }
            px.sort();
            px
        };
        assert_eq!(collect_block(&x), collect_block(&shuffled));
    }

    #[test]
    fn block_shuffle_applies_same_permutation_to_all_blocks() {
        let spec = ShuffleKeySpec { block: 2, key: KEY };
        // Image whose blocks are identical: shuffled blocks must also be.
        let mut x = Tensor::<f32>::zeros(vec![4, 4, 1]);
        for ty in 0..2 {
            for tx in 0..2 {
                for p in 0..4 {
                    let (py, px) = (p / 2, p % 2);
                    let o = x.offset3(ty * 2 + py, tx * 2 + px, 0);
                    x.data_mut()[o] = p as f32;
                }
            }
        }
        let y = block_pixel_shuffle(&x, &spec).unwrap();
        let block = |t: &Tensor<f32>, ty: usize, tx: usize| -> Vec<f32> {
            (0..4)
                .map(|p| t.data()[t.offset3(ty * 2 + p / 2, tx * 2 + p % 2, 0)])
                .collect()
        };
        let b00 = block(&y, 0, 0);
        assert_eq!(b00, block(&y, 0, 1));
        assert_eq!(b00, block(&y, 1, 0));
        assert_eq!(b00, block(&y, 1, 1));
    }

    #[test]
    fn block_shuffle_rejects_indivisible_dims() {
        let spec = ShuffleKeySpec { block: 4, key: KEY };
        let x = test_image(6, 8, 5);
        assert!(block_pixel_shuffle(&x, &spec).is_err());
    }

    #[test]
    fn normalization_centres_the_training_set() {
        let imgs: Vec<_> = (0..5).map(|i| test_image(6, 6, 20 + i)).collect();
        let stats = fit_normalization(&imgs).unwrap();
        let normed: Vec<_> = imgs
            .iter()
            .map(|x| apply_normalization(x, &stats).unwrap())
            .collect();
        let check = fit_normalization(&normed).unwrap();
        for c in 0..3 {
            assert!(check.mean[c].abs() < 1e-5, "channel {c} mean {}", check.mean[c]);
            assert!(
                (check.std[c] - 1.0).abs() < 1e-4,
                "channel {c} std {}",
                check.std[c]
            );
        }
    }

    #[test]
    fn normalization_is_order_independent_and_rejects_constant_channels() {
        let imgs: Vec<_> = (0..4).map(|i| test_image(5, 5, 30 + i)).collect();
        let a = fit_normalization(&imgs).unwrap();
        let reversed: Vec<_> = imgs.iter().rev().cloned().collect();
        let b = fit_normalization(&reversed).unwrap();
        for c in 0..3 {
            assert!((a.mean[c] - b.mean[c]).abs() < 1e-12);
            assert!((a.std[c] - b.std[c]).abs() < 1e-12);
        }

        let constant = vec![Tensor::<f32>::full(vec![4, 4, 3], 0.5)];
        assert!(fit_normalization(&constant).is_err());
        assert!(fit_normalization::<f32>(&[]).is_err());
    }

    #[test]
    fn cutmix_extreme_ratios() {
        let xa = test_image(8, 8, 40);
        let xb = test_image(8, 8, 41);
        // ratio 1: zero-area box, output is xa.
        let (mixed, wb) = cutmix_at(&xa, &xb, 1.0, 4, 4).unwrap();
        assert_eq!(mixed, xa);
        assert_eq!(wb, 0.0);
        // ratio 0 with centred box: full copy of xb.
        let (mixed, wb) = cutmix_at(&xa, &xb, 0.0, 4, 4).unwrap();
        assert_eq!(mixed, xb);
        assert_eq!(wb, 1.0);
    }

    #[test]
    fn cutmix_weights_match_realized_area() {
        let xa = Tensor::<f32>::zeros(vec![10, 10, 3]);
        let xb = Tensor::<f32>::full(vec![10, 10, 3], 1.0);
        let mut s = derive_stream(KEY, StreamLabel::Training);
        for _ in 0..50 {
            let (mixed, wb) = cutmix(&xa, &xb, &mut s).unwrap();
            let ones = mixed.data().iter().filter(|&&v| v == 1.0).count();
            let measured = ones as f64 / mixed.len() as f64;
            assert!(
                (measured - wb).abs() < 1e-12,
                "label weight {wb} vs painted fraction {measured}"
            );
            assert!((0.0..=1.0).contains(&wb));
        }
    }
}
