//! Labelled image sets: container, CIFAR-10 binary ingestion, a keyed
//! procedural dataset for network-free experiments, and on-disk bundles.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, PrivateKey, RngStream, StreamLabel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A set of same-shaped images with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages<S> {
    images: Vec<Tensor<S>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<S: Scalar> LabeledImages<S> {
    pub fn new(images: Vec<Tensor<S>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(
                "LabeledImages::new",
                format!("{} labels", images.len()),
                format!("{}", labels.len()),
            ));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(first) = images.first() {
            let dims = first.dims().to_vec();
            if let Some(other) = images.iter().find(|img| img.dims() != dims) {
                return Err(Error::shape(
                    "LabeledImages::new",
                    format!("{dims:?}"),
                    format!("{:?}", other.dims()),
                ));
            }
        }
        Ok(LabeledImages {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[Tensor<S>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Tensor<S> {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Shape of each image, or `None` for an empty set.
    pub fn image_dims(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.dims())
    }

    /// The first `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        LabeledImages {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    /// Examples at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for {} examples",
                    self.len()
                )));
            }
            images.push(self.images[i].clone());
            labels.push(self.labels[i]);
        }
        Ok(LabeledImages {
            images,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Apply a transform to every image, keeping labels (order preserved,
    /// computed in parallel).
    pub fn transformed<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&Tensor<S>) -> Result<Tensor<S>> + Sync,
    {
        let images = crate::transforms::transform_all(&self.images, f)?;
        LabeledImages::new(images, self.labels.clone(), self.num_classes)
    }

    /// Persist as `images.lnt` (one stacked `[n, ...dims]` tensor) plus
    /// `labels.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let dims = self
            .image_dims()
            .ok_or_else(|| Error::InvalidArgument("cannot save an empty dataset".into()))?
            .to_vec();
        let mut stacked = Vec::with_capacity(self.len() * self.images[0].len());
        for img in &self.images {
            stacked.extend_from_slice(img.data());
        }
        let mut full_dims = vec![self.len()];
        full_dims.extend_from_slice(&dims);
        Tensor::new(full_dims, stacked)?.save_lnt(dir.join("images.lnt"))?;
        let meta = BundleMeta {
            num_classes: self.num_classes,
            labels: self.labels.clone(),
        };
        std::fs::write(dir.join("labels.json"), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stacked = Tensor::<S>::load_lnt(dir.join("images.lnt"))?;
        let meta: BundleMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("labels.json"))?)?;
        let n = *stacked
            .dims()
            .first()
            .ok_or_else(|| Error::Format("images.lnt must have a leading count axis".into()))?;
        if n != meta.labels.len() {
            return Err(Error::Format(format!(
                "images.lnt holds {n} images but labels.json lists {}",
                meta.labels.len()
            )));
        }
        let dims = stacked.dims()[1..].to_vec();
        let per: usize = dims.iter().product();
        let data = stacked.into_data();
        let images = data
            .chunks_exact(per.max(1))
            .map(|chunk| Tensor::new(dims.clone(), chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        LabeledImages::new(images, meta.labels, meta.num_classes)
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    num_classes: usize,
    labels: Vec<usize>,
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

const CIFAR_EXTENT: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_EXTENT * CIFAR_EXTENT;
pub const CIFAR_CLASSES: usize = 10;

/// Read one CIFAR-10 binary batch file (records of a label byte followed by
/// 3072 channel-planar pixel bytes), converting to `[32, 32, 3]` images in
/// `[0, 1]`.
pub fn load_cifar10_file<S: Scalar>(
    path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<LabeledImages<S>> {
    let mut file = std::fs::File::open(path.as_ref())?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a multiple of the {CIFAR_RECORD}-byte record",
            path.as_ref().display(),
            bytes.len()
        )));
    }
    let count = bytes.len() / CIFAR_RECORD;
    let take = limit.unwrap_or(count).min(count);
    let mut images = Vec::with_capacity(take);
    let mut labels = Vec::with_capacity(take);
    let scale = S::of_f64(1.0 / 255.0);
    for rec in bytes.chunks_exact(CIFAR_RECORD).take(take) {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Format(format!("label byte {label} out of range")));
        }
        let planes = &rec[1..];
        let mut data = vec![S::zero(); 3 * CIFAR_EXTENT * CIFAR_EXTENT];
        for y in 0..CIFAR_EXTENT {
            for x in 0..CIFAR_EXTENT {
                let p = y * CIFAR_EXTENT + x;
                for c in 0..3 {
                    data[(p * 3) + c] =
                        S::of_f64(planes[c * CIFAR_EXTENT * CIFAR_EXTENT + p] as f64) * scale;
                }
            }
        }
        images.push(Tensor::new(
            vec![CIFAR_EXTENT, CIFAR_EXTENT, 3],
            data,
        )?);
        labels.push(label);
    }
    LabeledImages::new(images, labels, CIFAR_CLASSES)
}

/// Load the standard CIFAR-10 binary directory layout
/// (`data_batch_1..5.bin` + `test_batch.bin`), optionally limiting each
/// split.
pub fn load_cifar10_dir<S: Scalar>(
    dir: impl AsRef<Path>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<(LabeledImages<S>, LabeledImages<S>)> {
    let dir = dir.as_ref();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut remaining = train_limit;
    for i in 1..=5 {
        if remaining == Some(0) {
            break;
        }
        let batch = load_cifar10_file::<S>(dir.join(format!("data_batch_{i}.bin")), remaining)?;
        if let Some(r) = remaining.as_mut() {
            *r -= batch.len();
        }
        let LabeledImages {
            images: mut im,
            labels: mut la,
            ..
        } = batch;
        images.append(&mut im);
        labels.append(&mut la);
    }
    let train = LabeledImages::new(images, labels, CIFAR_CLASSES)?;
    let test = load_cifar10_file::<S>(dir.join("test_batch.bin"), test_limit)?;
    Ok((train, test))
}

/// Locate a CIFAR-10 binary directory: `LINAC_CIFAR10` env var first, then
/// conventional `data/cifar-10-batches-bin` under the current or workspace
/// directory. Returns `None` when no usable directory exists.
pub fn find_cifar10() -> Option<PathBuf> {
    let mut candidates: Vec<PathBuf> = Vec::new();
    if let Ok(env_dir) = std::env::var("LINAC_CIFAR10") {
        candidates.push(PathBuf::from(env_dir));
    }
    candidates.push(PathBuf::from("data/cifar-10-batches-bin"));
    candidates.push(PathBuf::from("../../data/cifar-10-batches-bin"));
    candidates
        .into_iter()
        .find(|dir| dir.join("test_batch.bin").is_file())
}

// ---------------------------------------------------------------------------
// Procedural dataset
// ---------------------------------------------------------------------------

/// Configuration for the keyed procedural dataset: 10 shape classes drawn
/// with class-specific palettes over gradient backgrounds, plus multi-scale
/// value noise so images have natural-looking texture rather than flat
/// regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub image_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub key: PrivateKey,
    /// Amplitude of the value-noise texture added to every channel.
    pub texture: f64,
}

impl SyntheticConfig {
    /// 32x32 corpus sized like a small natural-image benchmark subset.
    pub fn standard(key: PrivateKey, train_count: usize, test_count: usize) -> Self {
        SyntheticConfig {
            classes: 10,
            image_size: 32,
            train_count,
            test_count,
            key,
            texture: 0.18,
        }
    }

    /// 16x16 corpus for the fastest experiment loops.
    pub fn small(key: PrivateKey, train_count: usize, test_count: usize) -> Self {
        SyntheticConfig {
            classes: 10,
            image_size: 16,
            train_count,
            test_count,
            key,
            texture: 0.18,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > SHAPE_COUNT {
            return Err(Error::InvalidArgument(format!(
                "classes must lie in 1..={SHAPE_COUNT}, got {}",
                self.classes
            )));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidArgument(format!(
                "image_size must be at least 8, got {}",
                self.image_size
            )));
        }
        if self.train_count == 0 && self.test_count == 0 {
            return Err(Error::InvalidArgument("dataset would be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return Err(Error::InvalidArgument(format!(
                "texture must lie in [0, 1], got {}",
                self.texture
            )));
        }
        Ok(())
    }
}

const SHAPE_COUNT: usize = 10;

/// Generate `(train, test)` splits. Classes cycle through the index so both
/// splits stay balanced; every image is a pure function of `(key, class,
/// instance)`, so regenerating any subset is cheap and order-free.
pub fn generate_synthetic<S: Scalar>(
    cfg: &SyntheticConfig,
) -> Result<(LabeledImages<S>, LabeledImages<S>)> {
    cfg.validate()?;
    let root = derive_stream(cfg.key, StreamLabel::Dataset);
    let total = cfg.train_count + cfg.test_count;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % cfg.classes;
        let instance = (i / cfg.classes) as u64;
        let mut rng = root.split(class as u64).split(instance);
        images.push(paint_sample::<S>(class, cfg.image_size, cfg.texture, &mut rng));
        labels.push(class);
    }
    let test_images = images.split_off(cfg.train_count);
    let test_labels = labels.split_off(cfg.train_count);
    Ok((
        LabeledImages::new(images, labels, cfg.classes)?,
        LabeledImages::new(test_images, test_labels, cfg.classes)?,
    ))
}

fn uniform_in(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_uniform::<f64>()
}

/// Bilinearly interpolated lattice of uniform values — one octave of value
/// noise.
struct ValueNoise {
    cell: usize,
    lattice: Vec<f64>,
    width: usize,
}

impl ValueNoise {
    fn draw(size: usize, cell: usize, rng: &mut RngStream) -> Self {
        let width = size / cell + 2;
        let lattice = (0..width * width)
            .map(|_| rng.next_uniform::<f64>())
            .collect();
        ValueNoise {
            cell,
            lattice,
            width,
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let fy = y as f64 / self.cell as f64;
        let fx = x as f64 / self.cell as f64;
        let (iy, ix) = (fy as usize, fx as usize);
        let (ty, tx) = (fy - iy as f64, fx - ix as f64);
        let v = |dy: usize, dx: usize| self.lattice[(iy + dy) * self.width + ix + dx];
        let top = v(0, 0) * (1.0 - tx) + v(0, 1) * tx;
        let bottom = v(1, 0) * (1.0 - tx) + v(1, 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Paint one sample. Draw order (fixed): palette, gradient angle, shape
/// centre and radius, two noise lattices, per-pixel luminance noise.
fn paint_sample<S: Scalar>(
    class: usize,
    size: usize,
    texture: f64,
    rng: &mut RngStream,
) -> Tensor<S> {
    let mut color_a = [0.0f64; 3];
    let mut color_b = [0.0f64; 3];
    for v in &mut color_a {
        *v = uniform_in(rng, 0.1, 0.9);
    }
    for v in &mut color_b {
        *v = uniform_in(rng, 0.1, 0.9);
    }
    // Guarantee palette contrast so the shape never vanishes.
    let l1: f64 = color_a
        .iter()
        .zip(&color_b)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if l1 < 0.6 {
        for (b, a) in color_b.iter_mut().zip(&color_a) {
            *b = 1.0 - a;
        }
    }

    let angle = uniform_in(rng, 0.0, std::f64::consts::TAU);
    let (dir_y, dir_x) = (angle.sin(), angle.cos());
    let s = size as f64;
    let cy = s / 2.0 + uniform_in(rng, -s / 8.0, s / 8.0);
    let cx = s / 2.0 + uniform_in(rng, -s / 8.0, s / 8.0);
    let radius = uniform_in(rng, 0.26, 0.40) * s;

    let coarse = ValueNoise::draw(size, (size / 8).max(2), rng);
    let fine = ValueNoise::draw(size, (size / 16).max(1), rng);

    let mid = [
        (color_a[0] + color_b[0]) / 2.0,
        (color_a[1] + color_b[1]) / 2.0,
        (color_a[2] + color_b[2]) / 2.0,
    ];

    let mut data = vec![S::zero(); size * size * 3];
    for y in 0..size {
        for x in 0..size {
            // Background: gradient from color_a toward the palette midpoint.
            let proj = ((y as f64 - s / 2.0) * dir_y + (x as f64 - s / 2.0) * dir_x) / s + 0.5;
            let g = proj.clamp(0.0, 1.0);
            let mask = shape_mask(class, y as f64, x as f64, cy, cx, radius, size);
            let noise =
                texture * (0.65 * coarse.at(y, x) + 0.35 * fine.at(y, x) - 0.5);
            let lum = 0.02 * rng.next_gaussian::<f64>();
            for c in 0..3 {
                let bg = color_a[c] + g * (mid[c] - color_a[c]);
                let v = bg + mask * (color_b[c] - bg) + noise + lum;
                data[(y * size + x) * 3 + c] = S::of_f64(v.clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("painted image shape")
}

/// Soft-edged membership of pixel `(y, x)` in the class shape; 1 inside,
/// 0 outside, linear over a one-pixel edge band.
fn shape_mask(class: usize, y: f64, x: f64, cy: f64, cx: f64, r: f64, size: usize) -> f64 {
    let soft = |signed_dist_inside: f64| (0.5 + signed_dist_inside).clamp(0.0, 1.0);
    let dy = y - cy;
    let dx = x - cx;
    let dist = (dy * dy + dx * dx).sqrt();
    let s = size as f64;
    match class % SHAPE_COUNT {
        // Filled disc.
        0 => soft(r - dist),
        // Ring.
        1 => {
            let band = r * 0.38;
            soft(band - (dist - r * 0.8).abs())
        }
        // Filled axis-aligned square.
        2 => soft(r * 0.9 - dy.abs().max(dx.abs())),
        // Diamond.
        3 => soft(r * 1.15 - (dy.abs() + dx.abs())),
        // Horizontal stripes through the whole image.
        4 => {
            let period = s / 3.0;
            let phase = ((y + cy / 4.0) / period).fract();
            soft((0.25 - (phase - 0.5).abs()) * period)
        }
        // Vertical stripes.
        5 => {
            let period = s / 3.0;
            let phase = ((x + cx / 4.0) / period).fract();
            soft((0.25 - (phase - 0.5).abs()) * period)
        }
        // Diagonal cross.
        6 => {
            let w = r * 0.3;
            let d1 = (dy - dx).abs() / std::f64::consts::SQRT_2;
            let d2 = (dy + dx).abs() / std::f64::consts::SQRT_2;
            soft(w - d1.min(d2))
        }
        // Checkerboard.
        7 => {
            let cell = (s / 4.0).max(2.0);
            let parity = ((y / cell) as i64 + (x / cell) as i64) % 2;
            if parity == 0 {
                1.0
            } else {
                0.0
            }
        }
        // Upward triangle.
        8 => {
            let inside_v = r * 0.9 - dy.abs().max(dx.abs());
            let under = (dy + r * 0.5) - 1.4 * dx.abs();
            soft(inside_v.min(under))
        }
        // Two small discs.
        _ => {
            let off = r * 0.75;
            let d1 = ((dy - off * 0.4).powi(2) + (dx - off).powi(2)).sqrt();
            let d2 = ((dy + off * 0.4).powi(2) + (dx + off).powi(2)).sqrt();
            soft(r * 0.45 - d1.min(d2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: PrivateKey = PrivateKey(-2314326399425823309);

    #[test]
    fn synthetic_generation_is_deterministic_and_balanced() {
        let cfg = SyntheticConfig::small(KEY, 40, 20);
        let (train_a, test_a) = generate_synthetic::<f32>(&cfg).unwrap();
        let (train_b, _) = generate_synthetic::<f32>(&cfg).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(train_a.len(), 40);
        assert_eq!(test_a.len(), 20);
        assert_eq!(train_a.image_dims().unwrap(), &[16, 16, 3]);

        let mut counts = vec![0usize; 10];
        for &l in train_a.labels() {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4), "balanced classes: {counts:?}");

        // Values live in [0, 1].
        for img in train_a.images() {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn synthetic_splits_do_not_overlap() {
        let cfg = SyntheticConfig::small(KEY, 30, 30);
        let (train, test) = generate_synthetic::<f32>(&cfg).unwrap();
        for tr in train.images() {
            for te in test.images() {
                assert_ne!(tr, te);
            }
        }
    }

    #[test]
    fn synthetic_classes_are_visually_distinct() {
        // Mean interclass pixel distance should comfortably exceed mean
        // intraclass distance, otherwise the corpus is unlearnable.
        let cfg = SyntheticConfig::small(KEY, 100, 0);
        let (train, _) = generate_synthetic::<f32>(&cfg).unwrap();
        let dist = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                / a.len() as f64
        };
        let (mut intra, mut intra_n) = (0.0, 0);
        let (mut inter, mut inter_n) = (0.0, 0);
        for i in 0..train.len() {
            for j in (i + 1)..train.len() {
                let d = dist(train.image(i), train.image(j));
                if train.label(i) == train.label(j) {
                    intra += d;
                    intra_n += 1;
                } else {
                    inter += d;
                    inter_n += 1;
                }
            }
        }
        let intra = intra / intra_n as f64;
        let inter = inter / inter_n as f64;
        assert!(
            inter > intra,
            "interclass distance {inter} must exceed intraclass {intra}"
        );
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(SyntheticConfig {
            classes: 0,
            ..SyntheticConfig::small(KEY, 1, 1)
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            classes: 11,
            ..SyntheticConfig::small(KEY, 1, 1)
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            image_size: 4,
            ..SyntheticConfig::small(KEY, 1, 1)
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            texture: 1.5,
            ..SyntheticConfig::small(KEY, 1, 1)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn labeled_images_validation() {
        let img = Tensor::<f32>::zeros(vec![4, 4, 3]);
        assert!(LabeledImages::new(vec![img.clone()], vec![0], 10).is_ok());
        assert!(LabeledImages::new(vec![img.clone()], vec![10], 10).is_err());
        assert!(LabeledImages::new(vec![img.clone()], vec![0, 1], 10).is_err());
        let other = Tensor::<f32>::zeros(vec![5, 5, 3]);
        assert!(LabeledImages::new(vec![img, other], vec![0, 1], 10).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig::small(KEY, 12, 0);
        let (train, _) = generate_synthetic::<f32>(&cfg).unwrap();
        train.save_dir(dir.path()).unwrap();
        let back = LabeledImages::<f32>::load_dir(dir.path()).unwrap();
        assert_eq!(train, back);
    }

    #[test]
    fn cifar_loader_parses_handmade_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        // Two records: label 3 with all pixels 255 in R plane only,
        // label 7 with everything 128.
        let mut bytes = Vec::new();
        bytes.push(3u8);
        bytes.extend(std::iter::repeat(255u8).take(1024));
        bytes.extend(std::iter::repeat(0u8).take(2048));
        bytes.push(7u8);
        bytes.extend(std::iter::repeat(128u8).take(3072));
        std::fs::write(&path, &bytes).unwrap();

        let set = load_cifar10_file::<f32>(&path, None).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels(), &[3, 7]);
        let first = set.image(0);
        assert_eq!(first.dims(), &[32, 32, 3]);
        let o = first.offset3(0, 0, 0);
        assert_eq!(first.data()[o], 1.0);
        assert_eq!(first.data()[o + 1], 0.0);
        let second = set.image(1);
        assert!((second.data()[0] - 128.0 / 255.0).abs() < 1e-7);

        // Truncated file is rejected.
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_cifar10_file::<f32>(&path, None).is_err());
    }

    #[test]
    fn select_and_take_subsets() {
        let cfg = SyntheticConfig::small(KEY, 10, 0);
        let (train, _) = generate_synthetic::<f32>(&cfg).unwrap();
        let taken = train.take(3);
        assert_eq!(taken.len(), 3);
        let picked = train.select(&[9, 0]).unwrap();
        assert_eq!(picked.label(0), train.label(9));
        assert_eq!(picked.label(1), train.label(0));
        assert!(train.select(&[10]).is_err());
    }
}
