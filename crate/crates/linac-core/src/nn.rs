//! Sequential feed-forward networks with handwritten forward and backward
//! passes.
//!
//! Two properties drive the kernel style:
//!
//! * **Bit determinism.** Every accumulation into a given output element
//!   happens in a fixed order (contribution index ascending), so results are
//!   identical across runs and worker counts.
//! * **Single-pass vectorisability.** Inner loops are written in
//!   "axpy" form — `row += scalar * other_row` over the contiguous trailing
//!   axis — which the compiler can vectorise without reassociating any one
//!   reduction, keeping speed and determinism compatible.
//!
//! Weight layouts are chosen so the axpy form falls out naturally:
//! dense weights are `[in, out]`, convolution weights `[k, k, c_in, c_out]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One stage of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected map over the trailing axis; any leading axes are
    /// treated as batch. Weight `[in, out]`, optional bias `[out]`.
    Dense {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
    /// 2D convolution over a rank-3 `[height, width, channels]` input with
    /// zero "same" padding (output spans `ceil(extent / stride)`).
    /// Weight `[kernel, kernel, c_in, c_out]`, optional bias `[c_out]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    },
    /// Elementwise `max(x, 0)`.
    Relu,
    /// Elementwise `x * sigmoid(x)`.
    Swish,
    /// Spatial mean over a rank-3 input, producing the channel vector.
    GlobalAvgPool,
    /// Reshape to rank 1.
    Flatten,
    /// Shared linear map applied independently to every `block x block`
    /// pixel tile of a rank-3 input, mixing positions and channels within
    /// the tile. Weight `[block^2 * channels, block^2 * channels]`
    /// (`[in, out]` layout), no bias. Output shape equals input shape.
    BlockLinear { block: usize, channels: usize },
}

impl LayerSpec {
    /// Shapes of (weight, bias) parameters, if the layer has them.
    pub fn param_shapes(&self) -> (Option<Vec<usize>>, Option<Vec<usize>>) {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
                bias,
            } => (
                Some(vec![in_features, out_features]),
                bias.then(|| vec![out_features]),
            ),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => (
                Some(vec![kernel, kernel, in_channels, out_channels]),
                bias.then(|| vec![out_channels]),
            ),
            LayerSpec::BlockLinear { block, channels } => {
                let f = block * block * channels;
                (Some(vec![f, f]), None)
            }
            _ => (None, None),
        }
    }

    /// Number of inputs feeding one output unit (init scale).
    fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_features, .. } => Some(in_features),
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => Some(kernel * kernel * in_channels),
            LayerSpec::BlockLinear { block, channels } => Some(block * block * channels),
            _ => None,
        }
    }

    /// Output shape for a given input shape, or an error if incompatible.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if input.last() != Some(&in_features) {
                    return Err(Error::shape(
                        "Dense",
                        format!("[.., {in_features}]"),
                        format!("{input:?}"),
                    ));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = out_features;
                Ok(out)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                stride,
                kernel,
                ..
            } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::InvalidArgument(
                        "Conv2d kernel and stride must be positive".into(),
                    ));
                }
                match input {
                    &[h, w, c] if c == in_channels => {
                        Ok(vec![h.div_ceil(stride), w.div_ceil(stride), out_channels])
                    }
                    _ => Err(Error::shape(
                        "Conv2d",
                        format!("[h, w, {in_channels}]"),
                        format!("{input:?}"),
                    )),
                }
            }
            LayerSpec::Relu | LayerSpec::Swish => Ok(input.to_vec()),
            LayerSpec::GlobalAvgPool => match input {
                &[h, w, c] if h > 0 && w > 0 => {
                    let _ = (h, w);
                    Ok(vec![c])
                }
                _ => Err(Error::shape(
                    "GlobalAvgPool",
                    "[h > 0, w > 0, c]",
                    format!("{input:?}"),
                )),
            },
            LayerSpec::Flatten => {
                let len: usize = input.iter().product();
                Ok(vec![len])
            }
            LayerSpec::BlockLinear { block, channels } => {
                if block == 0 {
                    return Err(Error::InvalidArgument("BlockLinear block must be positive".into()));
                }
                match input {
                    &[h, w, c] if c == channels && h % block == 0 && w % block == 0 => {
                        Ok(input.to_vec())
                    }
                    _ => Err(Error::shape(
                        "BlockLinear",
                        format!("[h % {block} == 0, w % {block} == 0, {channels}]"),
                        format!("{input:?}"),
                    )),
                }
            }
        }
    }

}

/// Parameters (and, reused structurally, gradients) of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

impl<S: Scalar> LayerParams<S> {
    fn empty() -> Self {
        LayerParams {
            weight: None,
            bias: None,
        }
    }

    fn zeros_for(spec: &LayerSpec) -> Self {
        let (w, b) = spec.param_shapes();
        LayerParams {
            weight: w.map(Tensor::zeros),
            bias: b.map(Tensor::zeros),
        }
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// A sequential network: layer specs plus their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams<S>>,
}

/// Saved layer inputs from [`Network::forward_cached`], consumed by
/// [`Network::backward`].
pub struct Cache<S> {
    inputs: Vec<Tensor<S>>,
}

/// Gradients from one backward pass.
pub struct BackwardResult<S> {
    /// Gradient of the loss with respect to the network input.
    pub input_grad: Tensor<S>,
    /// Per-layer parameter gradients; `None` if not requested.
    pub param_grads: Option<Vec<LayerParams<S>>>,
}

impl<S: Scalar> Network<S> {
    /// Initialise parameters from a key-derived stream: weights are
    /// Gaussian with standard deviation `1 / sqrt(fan_in)`, biases zero.
    ///
    /// Draws are consumed layer by layer in spec order, and within each
    /// weight tensor in row-major element order; biases consume no draws.
    /// This ordering is part of the reproducibility contract.
    pub fn init(specs: Vec<LayerSpec>, stream: &mut RngStream) -> Result<Self> {
        Self::init_with_gain(specs, stream, 1.0)
    }

    /// [`Network::init`] with weight standard deviation
    /// `gain / sqrt(fan_in)`. Gains above 1 compensate for
    /// signal-attenuating activations (a swish roughly halves small
    /// activations) when training with plain SGD, whose step sizes are not
    /// scale-invariant.
    pub fn init_with_gain(
        specs: Vec<LayerSpec>,
        stream: &mut RngStream,
        gain: f64,
    ) -> Result<Self> {
        if !(gain > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "init gain must be positive, got {gain}"
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let (wshape, bshape) = spec.param_shapes();
            let mut lp = LayerParams::empty();
            if let Some(shape) = wshape {
                let fan_in = spec.fan_in().expect("parameterised layer has fan-in");
                if fan_in == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "layer {spec:?} has zero fan-in"
                    )));
                }
                let std = S::of_f64(gain / (fan_in as f64).sqrt());
                lp.weight = Some(Tensor::from_fn(shape, |_| stream.next_gaussian::<S>() * std));
            }
            if let Some(shape) = bshape {
                lp.bias = Some(Tensor::zeros(shape));
            }
            params.push(lp);
        }
        Ok(Network { specs, params })
    }

    /// Assemble from existing parameters, validating shapes against specs.
    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<LayerParams<S>>) -> Result<Self> {
        if specs.len() != params.len() {
            return Err(Error::shape(
                "Network::from_parts",
                format!("{} param sets", specs.len()),
                format!("{}", params.len()),
            ));
        }
        for (i, (spec, lp)) in specs.iter().zip(&params).enumerate() {
            let (wshape, bshape) = spec.param_shapes();
            let got_w = lp.weight.as_ref().map(|t| t.dims().to_vec());
            let got_b = lp.bias.as_ref().map(|t| t.dims().to_vec());
            if got_w != wshape || got_b != bshape {
                return Err(Error::shape(
                    "Network::from_parts",
                    format!("layer {i} {spec:?}: weight {wshape:?} bias {bshape:?}"),
                    format!("weight {got_w:?} bias {got_b:?}"),
                ));
            }
        }
        Ok(Network { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[LayerParams<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams<S>] {
        &mut self.params
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flat_map(|lp| lp.tensors())
            .map(|t| t.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .flat_map(|lp| lp.tensors())
            .all(|t| t.all_finite())
    }

    /// Output shape this network produces for `input` (also validates).
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut dims = input.to_vec();
        for spec in &self.specs {
            dims = spec.output_dims(&dims)?;
        }
        Ok(dims)
    }

    /// Run the first `n_layers` layers.
    pub fn forward_prefix(&self, x: &Tensor<S>, n_layers: usize) -> Result<Tensor<S>> {
        if n_layers > self.specs.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix of {n_layers} layers requested from a {}-layer network",
                self.specs.len()
            )));
        }
        let mut cur = x.clone();
        for (spec, lp) in self.specs[..n_layers].iter().zip(&self.params) {
            cur = layer_forward(spec, lp, &cur)?;
        }
        Ok(cur)
    }

    /// Full forward pass.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_prefix(x, self.specs.len())
    }

    /// Forward pass that keeps each layer's input for a later backward pass.
    pub fn forward_cached(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Cache<S>)> {
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut cur = x.clone();
        for (spec, lp) in self.specs.iter().zip(&self.params) {
            let next = layer_forward(spec, lp, &cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, Cache { inputs }))
    }

    /// Backward pass from `out_grad` (gradient of the loss with respect to
    /// the network output) through every layer.
    ///
    /// Parameter gradients are skipped when `want_param_grads` is false —
    /// attack loops only need the input gradient, and the weight-gradient
    /// accumulations are a large share of the work.
    pub fn backward(
        &self,
        cache: &Cache<S>,
        out_grad: &Tensor<S>,
        want_param_grads: bool,
    ) -> Result<BackwardResult<S>> {
        let mut param_grads = want_param_grads.then(|| self.zeros_like_params());
        let input_grad = self.backward_into(cache, out_grad, param_grads.as_deref_mut())?;
        Ok(BackwardResult {
            input_grad,
            param_grads,
        })
    }

    /// Backward pass that accumulates parameter gradients into a
    /// caller-owned buffer (zeroed here), avoiding per-step allocation in
    /// training loops. Pass `None` to compute the input gradient only.
    pub fn backward_into(
        &self,
        cache: &Cache<S>,
        out_grad: &Tensor<S>,
        mut accum: Option<&mut [LayerParams<S>]>,
    ) -> Result<Tensor<S>> {
        if cache.inputs.len() != self.specs.len() {
            return Err(Error::shape(
                "Network::backward",
                format!("cache of {} layers", self.specs.len()),
                format!("{}", cache.inputs.len()),
            ));
        }
        if let Some(acc) = accum.as_deref_mut() {
            if acc.len() != self.specs.len() {
                return Err(Error::shape(
                    "Network::backward_into",
                    format!("{} gradient slots", self.specs.len()),
                    format!("{}", acc.len()),
                ));
            }
            for lp in acc.iter_mut() {
                for t in lp.tensors_mut() {
                    t.data_mut().fill(S::zero());
                }
            }
        }
        let mut grad = out_grad.clone();
        for idx in (0..self.specs.len()).rev() {
            let pg = match accum.as_deref_mut() {
                Some(acc) => Some(&mut acc[idx]),
                None => None,
            };
            grad = layer_backward(
                &self.specs[idx],
                &self.params[idx],
                &cache.inputs[idx],
                &grad,
                pg,
            )?;
        }
        Ok(grad)
    }

    /// Zero-valued gradient accumulators matching this network's parameters.
    pub fn zeros_like_params(&self) -> Vec<LayerParams<S>> {
        self.specs.iter().map(LayerParams::zeros_for).collect()
    }

    /// Save as a directory: `spec.json` plus one LNT1 file per parameter.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let spec_json = serde_json::to_string_pretty(&self.specs)?;
        std::fs::write(dir.join("spec.json"), spec_json)?;
        for (i, lp) in self.params.iter().enumerate() {
            if let Some(w) = &lp.weight {
                w.save_lnt(dir.join(format!("layer_{i:02}_weight.lnt")))?;
            }
            if let Some(b) = &lp.bias {
                b.save_lnt(dir.join(format!("layer_{i:02}_bias.lnt")))?;
            }
        }
        Ok(())
    }

    /// Load a directory written by [`Network::save_dir`].
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec_json = std::fs::read_to_string(dir.join("spec.json"))?;
        let specs: Vec<LayerSpec> = serde_json::from_str(&spec_json)?;
        let mut params = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (wshape, bshape) = spec.param_shapes();
            let mut lp = LayerParams::empty();
            if wshape.is_some() {
                lp.weight = Some(Tensor::load_lnt(dir.join(format!("layer_{i:02}_weight.lnt")))?);
            }
            if bshape.is_some() {
                lp.bias = Some(Tensor::load_lnt(dir.join(format!("layer_{i:02}_bias.lnt")))?);
            }
            params.push(lp);
        }
        Self::from_parts(specs, params)
    }
}

/// `acc += add`, elementwise across matching parameter structures.
pub fn accumulate_params<S: Scalar>(
    acc: &mut [LayerParams<S>],
    add: &[LayerParams<S>],
) -> Result<()> {
    if acc.len() != add.len() {
        return Err(Error::shape(
            "accumulate_params",
            format!("{} layers", acc.len()),
            format!("{}", add.len()),
        ));
    }
    for (a, b) in acc.iter_mut().zip(add) {
        match (&mut a.weight, &b.weight) {
            (Some(aw), Some(bw)) => aw.add_scaled(bw, S::one())?,
            (None, None) => {}
            _ => return Err(Error::shape("accumulate_params", "matching weights", "mismatch")),
        }
        match (&mut a.bias, &b.bias) {
            (Some(ab), Some(bb)) => ab.add_scaled(bb, S::one())?,
            (None, None) => {}
            _ => return Err(Error::shape("accumulate_params", "matching biases", "mismatch")),
        }
    }
    Ok(())
}

/// Multiply every gradient element by `scale` (e.g. 1/batch).
pub fn scale_params<S: Scalar>(params: &mut [LayerParams<S>], scale: S) {
    for lp in params {
        for t in lp.tensors_mut() {
            t.map_inplace(|v| v * scale);
        }
    }
}

// ---------------------------------------------------------------------------
// Layer kernels
// ---------------------------------------------------------------------------

/// `y += a * x` over contiguous rows — one of the two hot loops in the crate.
#[inline]
fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Dot product with eight independent accumulator lanes and a fixed combine
/// tree: vectorizable without reassociating a single serial sum, and the
/// result is identical on every run.
#[inline]
fn dot8<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut tail = S::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

fn layer_forward<S: Scalar>(
    spec: &LayerSpec,
    lp: &LayerParams<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let out_dims = spec.output_dims(x.dims())?;
    match *spec {
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => {
            let w = lp.weight.as_ref().expect("dense weight");
            let n = x.len() / in_features.max(1);
            let mut y = vec![S::zero(); n * out_features];
            if let Some(b) = &lp.bias {
                for row in y.chunks_exact_mut(out_features) {
                    row.copy_from_slice(b.data());
                }
            }
            let wd = w.data();
            let xd = x.data();
            // Input-feature-major order walks the weight matrix exactly once
            // per batch; per output element the accumulation order over i is
            // unchanged. Exact zeros (common after a relu) contribute
            // nothing and are skipped.
            for i in 0..in_features {
                let wrow = &wd[i * out_features..(i + 1) * out_features];
                for s in 0..n {
                    let xv = xd[s * in_features + i];
                    if xv != S::zero() {
                        axpy(&mut y[s * out_features..(s + 1) * out_features], xv, wrow);
                    }
                }
            }
            Tensor::new(out_dims, y)
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            let w = lp.weight.as_ref().expect("conv weight");
            conv2d_forward(
                x,
                w,
                lp.bias.as_ref(),
                in_channels,
                out_channels,
                kernel,
                stride,
                out_dims,
            )
        }
        LayerSpec::Relu => {
            let mut y = x.clone();
            y.map_inplace(|v| if v > S::zero() { v } else { S::zero() });
            Ok(y)
        }
        LayerSpec::Swish => {
            let mut y = x.clone();
            y.map_inplace(|v| v * sigmoid(v));
            Ok(y)
        }
        LayerSpec::GlobalAvgPool => {
            let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
            let mut y = vec![S::zero(); c];
            for row in x.data().chunks_exact(c) {
                axpy(&mut y, S::one(), row);
            }
            let n = S::of_f64((h * w) as f64);
            for v in &mut y {
                *v = *v / n;
            }
            Tensor::new(out_dims, y)
        }
        LayerSpec::Flatten => x.clone().reshaped(out_dims),
        LayerSpec::BlockLinear { block, channels } => {
            let w = lp.weight.as_ref().expect("block-linear weight");
            block_linear_forward(x, w, block, channels)
        }
    }
}

/// Output-column span `lo..hi` for which `ox * stride + kx - pad` lands
/// inside `0..extent`.
#[inline]
fn valid_out_span(kpos: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let need = pad as isize - kpos as isize;
    let lo = if need > 0 {
        (need as usize).div_ceil(stride)
    } else {
        0
    };
    let top = extent as isize - 1 + pad as isize - kpos as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = ((top / stride as isize) as usize + 1).min(out);
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    out_dims: Vec<usize>,
) -> Result<Tensor<S>> {
    let (ih, iw) = (x.dims()[0], x.dims()[1]);
    let (oh, ow) = (out_dims[0], out_dims[1]);
    let (pad_top, pad_left) = same_padding(ih, iw, k, stride);
    let xd = x.data();
    let wd = w.data();
    let mut y = vec![S::zero(); oh * ow * co];
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(co) {
            row.copy_from_slice(b.data());
        }
    }
    // Tap-major over whole output rows: per output element the accumulation
    // order is (ky, kx, ci) ascending, and each weight row stays hot across
    // an entire row of output pixels.
    for oy in 0..oh {
        let iy0 = (oy * stride) as isize - pad_top as isize;
        for ky in 0..k {
            let iy = iy0 + ky as isize;
            if iy < 0 || iy >= ih as isize {
                continue;
            }
            let xbase = (iy as usize) * iw;
            for kx in 0..k {
                let (lo, hi) = valid_out_span(kx, pad_left, stride, iw, ow);
                let wtap = (ky * k + kx) * ci * co;
                for c in 0..ci {
                    let wrow = &wd[wtap + c * co..][..co];
                    for ox in lo..hi {
                        let ix = ox * stride + kx - pad_left;
                        let xv = xd[(xbase + ix) * ci + c];
                        if xv != S::zero() {
                            axpy(&mut y[(oy * ow + ox) * co..][..co], xv, wrow);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_dims, y)
}

/// Zero-padding offsets for "same" convolution semantics: the output grid is
/// `ceil(extent / stride)` and padding is split with the extra cell at the
/// trailing edge.
fn same_padding(ih: usize, iw: usize, k: usize, stride: usize) -> (usize, usize) {
    let pad = |extent: usize| -> usize {
        let out = extent.div_ceil(stride);
        let total = ((out - 1) * stride + k).saturating_sub(extent);
        total / 2
    };
    (pad(ih), pad(iw))
}

fn block_linear_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    block: usize,
    channels: usize,
) -> Result<Tensor<S>> {
    let (h, wd_, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let f = block * block * channels;
    let wdat = w.data();
    let xd = x.data();
    let mut y = vec![S::zero(); x.len()];
    let mut feat = vec![S::zero(); f];
    let mut out = vec![S::zero(); f];
    for ty in 0..h / block {
        for tx in 0..wd_ / block {
            gather_tile(xd, &mut feat, ty, tx, block, wd_, c);
            out.iter_mut().for_each(|v| *v = S::zero());
            for (i, &fi) in feat.iter().enumerate() {
                axpy(&mut out, fi, &wdat[i * f..(i + 1) * f]);
            }
            scatter_tile(&mut y, &out, ty, tx, block, wd_, c);
        }
    }
    Tensor::new(x.dims().to_vec(), y)
}

/// Tile features are packed pixel row-major with channels fastest.
#[inline]
fn gather_tile<S: Copy>(
    img: &[S],
    feat: &mut [S],
    ty: usize,
    tx: usize,
    block: usize,
    img_w: usize,
    c: usize,
) {
    for py in 0..block {
        let src = ((ty * block + py) * img_w + tx * block) * c;
        let dst = py * block * c;
        feat[dst..dst + block * c].copy_from_slice(&img[src..src + block * c]);
    }
}

#[inline]
fn scatter_tile<S: Copy>(
    img: &mut [S],
    feat: &[S],
    ty: usize,
    tx: usize,
    block: usize,
    img_w: usize,
    c: usize,
) {
    for py in 0..block {
        let dst = ((ty * block + py) * img_w + tx * block) * c;
        let src = py * block * c;
        img[dst..dst + block * c].copy_from_slice(&feat[src..src + block * c]);
    }
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// One layer's backward step. When `pgrad` is supplied it must hold zeroed
/// tensors shaped for this layer; gradients are accumulated into it.
fn layer_backward<S: Scalar>(
    spec: &LayerSpec,
    lp: &LayerParams<S>,
    input: &Tensor<S>,
    out_grad: &Tensor<S>,
    mut pgrad: Option<&mut LayerParams<S>>,
) -> Result<Tensor<S>> {
    let input_grad = match *spec {
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => {
            let w = lp.weight.as_ref().expect("dense weight");
            let wd = w.data();
            let xd = input.data();
            let dyd = out_grad.data();
            let n = input.len() / in_features.max(1);
            // dX[s][i] is a dot of the sample's output gradient with weight
            // row i; input-feature-major order keeps each weight row hot
            // while all batch rows stay cache-resident.
            let mut dx = vec![S::zero(); input.len()];
            for i in 0..in_features {
                let wrow = &wd[i * out_features..(i + 1) * out_features];
                for s in 0..n {
                    dx[s * in_features + i] =
                        dot8(&dyd[s * out_features..(s + 1) * out_features], wrow);
                }
            }
            if let Some(pg) = pgrad.as_deref_mut() {
                let dw = pg.weight.as_mut().unwrap().data_mut();
                // Per element the accumulation runs over samples in
                // ascending order; exact-zero inputs contribute nothing.
                for i in 0..in_features {
                    let dwrow = &mut dw[i * out_features..(i + 1) * out_features];
                    for s in 0..n {
                        let xv = xd[s * in_features + i];
                        if xv != S::zero() {
                            axpy(dwrow, xv, &dyd[s * out_features..(s + 1) * out_features]);
                        }
                    }
                }
                if let Some(db) = pg.bias.as_mut() {
                    let dbd = db.data_mut();
                    for dyrow in dyd.chunks_exact(out_features) {
                        axpy(dbd, S::one(), dyrow);
                    }
                }
            }
            Tensor::new(input.dims().to_vec(), dx)?
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            ..
        } => {
            return conv2d_backward(
                input,
                lp.weight.as_ref().expect("conv weight"),
                out_grad,
                in_channels,
                out_channels,
                kernel,
                stride,
                pgrad,
            );
        }
        LayerSpec::Relu => {
            let mut dx = out_grad.clone();
            for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= S::zero() {
                    *g = S::zero();
                }
            }
            dx
        }
        LayerSpec::Swish => {
            let mut dx = out_grad.clone();
            for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                let s = sigmoid(x);
                // d/dx [x * s(x)] = s(x) * (1 + x * (1 - s(x)))
                *g = *g * s * (S::one() + x * (S::one() - s));
            }
            dx
        }
        LayerSpec::GlobalAvgPool => {
            let (h, w, c) = (input.dims()[0], input.dims()[1], input.dims()[2]);
            let inv = S::one() / S::of_f64((h * w) as f64);
            let mut dx = vec![S::zero(); input.len()];
            for row in dx.chunks_exact_mut(c) {
                for (v, &g) in row.iter_mut().zip(out_grad.data()) {
                    *v = g * inv;
                }
            }
            Tensor::new(input.dims().to_vec(), dx)?
        }
        LayerSpec::Flatten => out_grad.clone().reshaped(input.dims().to_vec())?,
        LayerSpec::BlockLinear { block, channels } => {
            let w = lp.weight.as_ref().expect("block-linear weight");
            let f = block * block * channels;
            let wd = w.data();
            let mut wt = vec![S::zero(); wd.len()];
            for i in 0..f {
                for o in 0..f {
                    wt[o * f + i] = wd[i * f + o];
                }
            }
            let (h, iw) = (input.dims()[0], input.dims()[1]);
            let mut dx = vec![S::zero(); input.len()];
            let mut feat = vec![S::zero(); f];
            let mut dout = vec![S::zero(); f];
            let mut dfeat = vec![S::zero(); f];
            for ty in 0..h / block {
                for tx in 0..iw / block {
                    gather_tile(out_grad.data(), &mut dout, ty, tx, block, iw, channels);
                    dfeat.iter_mut().for_each(|v| *v = S::zero());
                    for (o, &go) in dout.iter().enumerate() {
                        axpy(&mut dfeat, go, &wt[o * f..(o + 1) * f]);
                    }
                    scatter_tile(&mut dx, &dfeat, ty, tx, block, iw, channels);
                    if let Some(pg) = pgrad.as_deref_mut() {
                        gather_tile(input.data(), &mut feat, ty, tx, block, iw, channels);
                        let dw = pg.weight.as_mut().unwrap().data_mut();
                        for (i, &fi) in feat.iter().enumerate() {
                            axpy(&mut dw[i * f..(i + 1) * f], fi, &dout);
                        }
                    }
                }
            }
            Tensor::new(input.dims().to_vec(), dx)?
        }
    };
    Ok(input_grad)
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    w: &Tensor<S>,
    out_grad: &Tensor<S>,
    ci: usize,
    co: usize,
    k: usize,
    stride: usize,
    mut pgrad: Option<&mut LayerParams<S>>,
) -> Result<Tensor<S>> {
    let (ih, iw) = (input.dims()[0], input.dims()[1]);
    let (oh, ow) = (out_grad.dims()[0], out_grad.dims()[1]);
    let (pad_top, pad_left) = same_padding(ih, iw, k, stride);
    let xd = input.data();
    let wd = w.data();
    let gd = out_grad.data();

    // Tap-major over whole output rows, mirroring the forward kernel. The
    // input gradient at channel c is a dot of the output-gradient row with
    // weight row (tap, c), both contiguous over the co axis.
    let mut dx = vec![S::zero(); input.len()];
    for oy in 0..oh {
        let iy0 = (oy * stride) as isize - pad_top as isize;
        for ky in 0..k {
            let iy = iy0 + ky as isize;
            if iy < 0 || iy >= ih as isize {
                continue;
            }
            let xbase = (iy as usize) * iw;
            for kx in 0..k {
                let (lo, hi) = valid_out_span(kx, pad_left, stride, iw, ow);
                let wtap = (ky * k + kx) * ci * co;
                for ox in lo..hi {
                    let ix = ox * stride + kx - pad_left;
                    let dyrow = &gd[(oy * ow + ox) * co..][..co];
                    let dxrow = &mut dx[(xbase + ix) * ci..][..ci];
                    for (c, dj) in dxrow.iter_mut().enumerate() {
                        *dj = *dj + dot8(dyrow, &wd[wtap + c * co..][..co]);
                    }
                }
            }
        }
    }

    if let Some(pg) = pgrad.as_deref_mut() {
        // Weight gradients tap-major so each (tap, ci) row stays hot across
        // the whole image; per element the accumulation runs over output
        // pixels in row-major order, exactly as the forward visits them.
        let dw = pg.weight.as_mut().unwrap().data_mut();
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_out_span(kx, pad_left, stride, iw, ow);
                let wtap = (ky * k + kx) * ci * co;
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad_top as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let xbase = (iy as usize) * iw;
                    for ox in lo..hi {
                        let ix = ox * stride + kx - pad_left;
                        let dyrow = &gd[(oy * ow + ox) * co..][..co];
                        let xrow = &xd[(xbase + ix) * ci..][..ci];
                        for (c, &xv) in xrow.iter().enumerate() {
                            if xv != S::zero() {
                                axpy(&mut dw[wtap + c * co..][..co], xv, dyrow);
                            }
                        }
                    }
                }
            }
        }
        if let Some(db) = pg.bias.as_mut() {
            let dbd = db.data_mut();
            for dyrow in gd.chunks_exact(co) {
                axpy(dbd, S::one(), dyrow);
            }
        }
    }
    Tensor::new(input.dims().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Classification losses
// ---------------------------------------------------------------------------

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum = out.iter().fold(S::zero(), |a, &b| a + b);
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

/// Classification target: a hard label or a soft distribution.
pub enum ClassTarget<'a, S> {
    Hard(usize),
    Soft(&'a [S]),
}

/// Cross-entropy of softmax(logits) against the target.
///
/// Returns `(loss, d loss / d logits)`. Loss is computed through
/// `logsumexp` so large logits cannot overflow.
pub fn cross_entropy<S: Scalar>(logits: &[S], target: ClassTarget<'_, S>) -> Result<(S, Vec<S>)> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("cross_entropy on empty logits".into()));
    }
    let m = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let sum = logits
        .iter()
        .fold(S::zero(), |acc, &z| acc + (z - m).exp());
    let log_sum = m + sum.ln();
    let mut grad: Vec<S> = logits.iter().map(|&z| (z - m).exp() / sum).collect();
    let loss = match target {
        ClassTarget::Hard(y) => {
            if y >= logits.len() {
                return Err(Error::InvalidArgument(format!(
                    "label {y} out of range for {} classes",
                    logits.len()
                )));
            }
            grad[y] = grad[y] - S::one();
            log_sum - logits[y]
        }
        ClassTarget::Soft(w) => {
            if w.len() != logits.len() {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("{} target weights", logits.len()),
                    format!("{}", w.len()),
                ));
            }
            let mut loss = S::zero();
            for ((g, &wi), &z) in grad.iter_mut().zip(w).zip(logits) {
                loss = loss + wi * (log_sum - z);
                *g = *g - wi;
            }
            loss
        }
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, PrivateKey, StreamLabel};

    type T64 = Tensor<f64>;

    fn stream(salt: i64) -> RngStream {
        derive_stream(PrivateKey(0x5eed ^ salt), StreamLabel::Init)
    }

    /// Loss used by the finite-difference checks: a fixed random linear
    /// functional of the network output. Its output-gradient is exactly `c`,
    /// so any mismatch is attributable to the layer backward under test.
    fn linear_loss(out: &T64, c: &[f64]) -> f64 {
        out.data().iter().zip(c).map(|(&o, &ci)| o * ci).sum()
    }

    fn random_tensor(dims: Vec<usize>, s: &mut RngStream) -> T64 {
        Tensor::from_fn(dims, |_| s.next_gaussian::<f64>())
    }

    /// Central-difference check of input and parameter gradients for a
    /// single-layer network, probing every element when small or a random
    /// subset otherwise.
    fn fd_check(spec: LayerSpec, input_dims: Vec<usize>, salt: i64) {
        let mut s = stream(salt);
        let mut net = Network::<f64>::init(vec![spec], &mut s).unwrap();
        let x = random_tensor(input_dims, &mut s);
        let out_dims = net.output_dims(x.dims()).unwrap();
        let out_len: usize = out_dims.iter().product();
        let c: Vec<f64> = (0..out_len).map(|_| s.next_gaussian::<f64>()).collect();
        let cg = Tensor::new(out_dims, c.clone()).unwrap();

        let (_, cache) = net.forward_cached(&x).unwrap();
        let back = net.backward(&cache, &cg, true).unwrap();
        let h = 1e-6;

        // Input gradient.
        for idx in probe_indices(x.len(), &mut s) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let lp = linear_loss(&net.forward(&xp).unwrap(), &c);
            xp.data_mut()[idx] -= 2.0 * h;
            let lm = linear_loss(&net.forward(&xp).unwrap(), &c);
            let fd = (lp - lm) / (2.0 * h);
            let an = back.input_grad.data()[idx];
            assert_close(an, fd, &format!("{spec:?} input[{idx}]"));
        }

        // Parameter gradients.
        let pg = back.param_grads.unwrap();
        for which in [0usize, 1] {
            let len = match which {
                0 => net.params()[0].weight.as_ref().map(|t| t.len()),
                _ => net.params()[0].bias.as_ref().map(|t| t.len()),
            };
            let Some(len) = len else { continue };
            for idx in probe_indices(len, &mut s) {
                let orig = {
                    let t = param_mut(&mut net, which);
                    let v = t.data()[idx];
                    t.data_mut()[idx] = v + h;
                    v
                };
                let lp = linear_loss(&net.forward(&x).unwrap(), &c);
                param_mut(&mut net, which).data_mut()[idx] = orig - h;
                let lm = linear_loss(&net.forward(&x).unwrap(), &c);
                param_mut(&mut net, which).data_mut()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = match which {
                    0 => pg[0].weight.as_ref().unwrap().data()[idx],
                    _ => pg[0].bias.as_ref().unwrap().data()[idx],
                };
                assert_close(an, fd, &format!("{spec:?} param{which}[{idx}]"));
            }
        }
    }

    fn param_mut<'a>(net: &'a mut Network<f64>, which: usize) -> &'a mut T64 {
        let lp = &mut net.params_mut()[0];
        match which {
            0 => lp.weight.as_mut().unwrap(),
            _ => lp.bias.as_mut().unwrap(),
        }
    }

    fn probe_indices(len: usize, s: &mut RngStream) -> Vec<usize> {
        if len <= 24 {
            (0..len).collect()
        } else {
            (0..24).map(|_| s.next_below(len as u64) as usize).collect()
        }
    }

    fn assert_close(analytic: f64, fd: f64, what: &str) {
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        let rel = (analytic - fd).abs() / denom;
        assert!(
            rel < 1e-5,
            "{what}: analytic {analytic} vs fd {fd} (rel {rel:.3e})"
        );
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        fd_check(
            LayerSpec::Dense {
                in_features: 7,
                out_features: 5,
                bias: true,
            },
            vec![3, 7],
            1,
        );
        fd_check(
            LayerSpec::Dense {
                in_features: 4,
                out_features: 6,
                bias: false,
            },
            vec![4],
            2,
        );
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for (stride, salt) in [(1usize, 3i64), (2, 4)] {
            fd_check(
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 3,
                    stride,
                    bias: true,
                },
                vec![5, 6, 3],
                salt,
            );
        }
    }

    #[test]
    fn block_linear_gradients_match_finite_differences() {
        fd_check(
            LayerSpec::BlockLinear {
                block: 2,
                channels: 3,
            },
            vec![4, 4, 3],
            5,
        );
    }

    #[test]
    fn pool_and_swish_gradients_match_finite_differences() {
        fd_check(LayerSpec::GlobalAvgPool, vec![3, 4, 5], 6);
        fd_check(LayerSpec::Swish, vec![2, 9], 7);
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        // Keep probe inputs clear of zero so finite differences are valid.
        let mut s = stream(8);
        let net = Network::<f64>::init(vec![LayerSpec::Relu], &mut s).unwrap();
        let mut x = random_tensor(vec![11], &mut s);
        x.map_inplace(|v| v + 0.3 * v.signum());
        let c: Vec<f64> = (0..11).map(|_| s.next_gaussian::<f64>()).collect();
        let cg = Tensor::new(vec![11], c.clone()).unwrap();
        let (_, cache) = net.forward_cached(&x).unwrap();
        let back = net.backward(&cache, &cg, false).unwrap();
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let lp = linear_loss(&net.forward(&xp).unwrap(), &c);
            xp.data_mut()[idx] -= 2.0 * h;
            let lm = linear_loss(&net.forward(&xp).unwrap(), &c);
            assert_close(back.input_grad.data()[idx], (lp - lm) / (2.0 * h), "relu");
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3f64, -1.2, 2.0, 0.05];
        let (_, grad) = cross_entropy(&logits, ClassTarget::Hard(2)).unwrap();
        let h = 1e-7;
        for i in 0..logits.len() {
            let mut zp = logits.clone();
            zp[i] += h;
            let (lp, _) = cross_entropy(&zp, ClassTarget::Hard(2)).unwrap();
            zp[i] -= 2.0 * h;
            let (lm, _) = cross_entropy(&zp, ClassTarget::Hard(2)).unwrap();
            assert_close(grad[i], (lp - lm) / (2.0 * h), "ce grad");
        }
        // Soft target reduces to hard when one-hot.
        let onehot = vec![0.0, 0.0, 1.0, 0.0];
        let (l_soft, g_soft) = cross_entropy(&logits, ClassTarget::Soft(&onehot)).unwrap();
        let (l_hard, g_hard) = cross_entropy(&logits, ClassTarget::Hard(2)).unwrap();
        assert!((l_soft - l_hard).abs() < 1e-12);
        for (a, b) in g_soft.iter().zip(&g_hard) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let logits = vec![1000.0f32, -1000.0, 999.0];
        let (loss, grad) = cross_entropy(&logits, ClassTarget::Hard(0)).unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
        assert!(cross_entropy(&logits, ClassTarget::Hard(5)).is_err());
    }

    #[test]
    fn full_mlp_gradients_match_finite_differences() {
        // Composite check: dense/relu stack ending in cross-entropy, the
        // same shape class as the implicit-network fit path.
        let specs = vec![
            LayerSpec::Dense {
                in_features: 8,
                out_features: 16,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_features: 16,
                out_features: 16,
                bias: true,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                in_features: 16,
                out_features: 4,
                bias: true,
            },
        ];
        let mut s = stream(9);
        let mut net = Network::<f64>::init(specs, &mut s).unwrap();
        let x = random_tensor(vec![8], &mut s);

        // Guard: pre-activations must sit away from relu kinks, otherwise the
        // finite-difference probe is invalid. Holds for this fixed seed.
        for prefix in [1usize, 3] {
            let pre = net.forward_prefix(&x, prefix).unwrap();
            for &v in pre.data() {
                assert!(v.abs() > 1e-3, "pre-activation too close to relu kink");
            }
        }

        let grads_and_loss = |net: &Network<f64>, x: &T64| {
            let (out, cache) = net.forward_cached(x).unwrap();
            let (loss, dlogits) = cross_entropy(out.data(), ClassTarget::Hard(1)).unwrap();
            let og = Tensor::new(out.dims().to_vec(), dlogits).unwrap();
            (loss, net.backward(&cache, &og, true).unwrap())
        };
        let (_, back) = grads_and_loss(&net, &x);
        let h = 1e-6;

        // Input gradient.
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let (lp, _) = grads_and_loss(&net, &xp);
            xp.data_mut()[idx] -= 2.0 * h;
            let (lm, _) = grads_and_loss(&net, &xp);
            assert_close(back.input_grad.data()[idx], (lp - lm) / (2.0 * h), "mlp input");
        }

        // A probe of parameters in every layer.
        let pg = back.param_grads.unwrap();
        for li in [0usize, 2, 4] {
            let len = net.params()[li].weight.as_ref().unwrap().len();
            for idx in probe_indices(len, &mut s) {
                let orig = net.params()[li].weight.as_ref().unwrap().data()[idx];
                net.params_mut()[li].weight.as_mut().unwrap().data_mut()[idx] = orig + h;
                let (lp, _) = grads_and_loss(&net, &x);
                net.params_mut()[li].weight.as_mut().unwrap().data_mut()[idx] = orig - h;
                let (lm, _) = grads_and_loss(&net, &x);
                net.params_mut()[li].weight.as_mut().unwrap().data_mut()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = pg[li].weight.as_ref().unwrap().data()[idx];
                assert_close(an, fd, &format!("mlp layer {li} weight[{idx}]"));
            }
        }
    }

    #[test]
    fn init_statistics_match_fan_in_scaling() {
        let mut s = stream(10);
        let net = Network::<f32>::init(
            vec![LayerSpec::Dense {
                in_features: 20,
                out_features: 256,
                bias: true,
            }],
            &mut s,
        )
        .unwrap();
        let w = net.params()[0].weight.as_ref().unwrap();
        let n = w.len() as f64;
        let mean: f64 = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let expected = 1.0 / 20.0f64.sqrt();
        let std = var.sqrt();
        assert!(
            std > 0.9 * expected && std < 1.1 * expected,
            "weight std {std} vs expected {expected}"
        );
        assert!(net.params()[0]
            .bias
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_reproducible_and_key_sensitive() {
        let specs = || {
            vec![LayerSpec::Dense {
                in_features: 6,
                out_features: 6,
                bias: true,
            }]
        };
        let a = Network::<f32>::init(specs(), &mut stream(11)).unwrap();
        let b = Network::<f32>::init(specs(), &mut stream(11)).unwrap();
        let c = Network::<f32>::init(specs(), &mut stream(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn forward_batch_equals_per_row() {
        // Dense with leading batch axes must equal row-at-a-time application.
        let mut s = stream(13);
        let net = Network::<f32>::init(
            vec![
                LayerSpec::Dense {
                    in_features: 5,
                    out_features: 3,
                    bias: true,
                },
                LayerSpec::Relu,
            ],
            &mut s,
        )
        .unwrap();
        let batch = Tensor::from_fn(vec![4, 5], |_| s.next_gaussian::<f32>());
        let out = net.forward(&batch).unwrap();
        assert_eq!(out.dims(), &[4, 3]);
        for r in 0..4 {
            let row = Tensor::new(vec![5], batch.data()[r * 5..(r + 1) * 5].to_vec()).unwrap();
            let single = net.forward(&row).unwrap();
            assert_eq!(&out.data()[r * 3..(r + 1) * 3], single.data());
        }
    }

    #[test]
    fn conv_same_padding_shapes() {
        let mut s = stream(14);
        let net = |stride| {
            Network::<f32>::init(
                vec![LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride,
                    bias: false,
                }],
                &mut stream(14),
            )
            .unwrap()
        };
        let x = Tensor::from_fn(vec![7, 5, 2], |_| s.next_gaussian::<f32>());
        assert_eq!(net(1).forward(&x).unwrap().dims(), &[7, 5, 3]);
        assert_eq!(net(2).forward(&x).unwrap().dims(), &[4, 3, 3]);
    }

    #[test]
    fn conv_matches_hand_computed_value() {
        // 3x3 single-channel input, 3x3 kernel of ones, stride 1: the centre
        // output is the sum of all nine inputs; the corner sees four.
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            bias: false,
        };
        let w = Tensor::full(vec![3, 3, 1, 1], 1.0f32);
        let net = Network::from_parts(
            vec![spec],
            vec![LayerParams {
                weight: Some(w),
                bias: None,
            }],
        )
        .unwrap();
        let x = Tensor::from_fn(vec![3, 3, 1], |i| (i + 1) as f32); // 1..9
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data()[y.offset3(1, 1, 0)], 45.0);
        assert_eq!(y.data()[y.offset3(0, 0, 0)], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn block_linear_identity_weight_is_identity_map() {
        let f = 2 * 2 * 3;
        let w = Tensor::from_fn(vec![f, f], |i| if i / f == i % f { 1.0f32 } else { 0.0 });
        let net = Network::from_parts(
            vec![LayerSpec::BlockLinear {
                block: 2,
                channels: 3,
            }],
            vec![LayerParams {
                weight: Some(w),
                bias: None,
            }],
        )
        .unwrap();
        let mut s = stream(15);
        let x = Tensor::from_fn(vec![4, 6, 3], |_| s.next_gaussian::<f32>());
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn global_avg_pool_matches_mean() {
        let x = Tensor::from_fn(vec![2, 2, 2], |i| i as f32);
        let net = Network::<f32>::from_parts(
            vec![LayerSpec::GlobalAvgPool],
            vec![LayerParams {
                weight: None,
                bias: None,
            }],
        )
        .unwrap();
        let y = net.forward(&x).unwrap();
        // channel 0: (0 + 2 + 4 + 6)/4, channel 1: (1 + 3 + 5 + 7)/4
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = stream(16);
        let net = Network::<f32>::init(
            vec![
                LayerSpec::Conv2d {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: 3,
                    stride: 2,
                    bias: true,
                },
                LayerSpec::Swish,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features: 4,
                    out_features: 2,
                    bias: true,
                },
            ],
            &mut s,
        )
        .unwrap();
        net.save_dir(dir.path()).unwrap();
        let back = Network::<f32>::load_dir(dir.path()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[-1.0f32]), 0);
    }
}
