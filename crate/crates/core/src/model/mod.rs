//! A small fully convolutional segmentation network with hand-written backprop.
//!
//! Fixed architecture, zero padding so every layer preserves the grid:
//!
//! ```text
//! conv 3x3x3 (1 -> 8) + ReLU -> conv 3x3x3 (8 -> 8) + ReLU -> conv 1x1x1 (8 -> 1) + sigmoid
//! ```
//!
//! On `nz == 1` grids the out-of-plane kernel taps only ever see padding, so the
//! network behaves as a 2D 3x3 model.

mod adam;
mod checkpoint;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    evaluate_set, lambda_grid_search, select_lambda, train, EpochRecord, GridPoint, GridSearch, SetEvaluation,
    TrainConfig, TrainHistory,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::{combined_loss, combined_loss_with_mask, LossSpec};
use crate::rng::{substream, STREAM_INIT};
use crate::scalar::Real;
use crate::volume::{BinaryMask, Dims, ProbMap, Volume};

pub const HIDDEN_CHANNELS: usize = 8;

/// Tag stored in checkpoints.
pub const ARCHITECTURE: &str = "conv3-relu-conv3-relu-conv1-sigmoid/c8";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Cubic kernel edge length (odd).
    pub kernel: usize,
}

impl LayerShape {
    const fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    pub const fn weight_count(&self) -> usize {
        self.out_ch * self.in_ch * self.taps()
    }

    pub const fn param_count(&self) -> usize {
        self.weight_count() + self.out_ch
    }
}

pub const LAYERS: [LayerShape; 3] = [
    LayerShape {
        in_ch: 1,
        out_ch: HIDDEN_CHANNELS,
        kernel: 3,
    },
    LayerShape {
        in_ch: HIDDEN_CHANNELS,
        out_ch: HIDDEN_CHANNELS,
        kernel: 3,
    },
    LayerShape {
        in_ch: HIDDEN_CHANNELS,
        out_ch: 1,
        kernel: 1,
    },
];

pub const NUM_PARAMS: usize = LAYERS[0].param_count() + LAYERS[1].param_count() + LAYERS[2].param_count();

/// Offset of layer `l`'s weights in the flat parameter vector; its biases follow them.
const fn layer_offset(l: usize) -> usize {
    let mut off = 0;
    let mut i = 0;
    while i < l {
        off += LAYERS[i].param_count();
        i += 1;
    }
    off
}

/// All weights and biases in one flat vector, layer by layer, each layer's
/// weights (`[out][in][kz][ky][kx]`) followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    values: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros() -> Self {
        Self {
            values: vec![T::zero(); NUM_PARAMS],
        }
    }

    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() != NUM_PARAMS {
            return Err(Error::LengthMismatch(values.len(), NUM_PARAMS));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn weights(&self, layer: usize) -> &[T] {
        let off = layer_offset(layer);
        &self.values[off..off + LAYERS[layer].weight_count()]
    }

    pub fn biases(&self, layer: usize) -> &[T] {
        let off = layer_offset(layer) + LAYERS[layer].weight_count();
        &self.values[off..off + LAYERS[layer].out_ch]
    }
}

/// Seeded initialization: weights `init_scale * sqrt(2 / fan_in) * N(0, 1)`, biases zero.
pub fn init_params<T: Real>(seed: u64, init_scale: f64) -> Result<ModelParams<T>> {
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::OutOfRange {
            name: "init_scale",
            value: init_scale,
            range: "[0, inf)",
        });
    }
    let mut rng = substream(seed, STREAM_INIT);
    let mut values = Vec::with_capacity(NUM_PARAMS);
    for shape in LAYERS {
        let fan_in = (shape.in_ch * shape.taps()) as f64;
        let std = init_scale * (2.0 / fan_in).sqrt();
        for _ in 0..shape.weight_count() {
            let z: f64 = rng.sample(StandardNormal);
            values.push(T::cast(std * z));
        }
        values.extend(std::iter::repeat_n(T::zero(), shape.out_ch));
    }
    Ok(ModelParams { values })
}

/// Intermediate activations kept for the backward pass.
struct Trace<T> {
    h1: Vec<T>,
    h2: Vec<T>,
    prob: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Half-open range of output coordinates whose input neighbour at offset `d` exists.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Invokes `f(out_start, in_start, run)` for every contiguous x-run of voxel pairs
/// `(v, v + d)` with both inside the grid.
#[inline]
fn for_each_run(dims: Dims, d: [isize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let (x0, x1) = valid_range(dims.nx, d[0]);
    let (y0, y1) = valid_range(dims.ny, d[1]);
    let (z0, z1) = valid_range(dims.nz, d[2]);
    if x0 >= x1 {
        return;
    }
    let run = x1 - x0;
    for z in z0..z1 {
        for y in y0..y1 {
            let o = dims.index(x0, y, z);
            let i = dims.index(
                (x0 as isize + d[0]) as usize,
                (y as isize + d[1]) as usize,
                (z as isize + d[2]) as usize,
            );
            f(o, i, run);
        }
    }
}

fn tap_offset(shape: LayerShape, tap: usize) -> [isize; 3] {
    let k = shape.kernel;
    let r = (k / 2) as isize;
    let kx = tap % k;
    let ky = (tap / k) % k;
    let kz = tap / (k * k);
    [kx as isize - r, ky as isize - r, kz as isize - r]
}

fn conv_forward<T: Real>(shape: LayerShape, w: &[T], b: &[T], dims: Dims, input: &[T], out: &mut [T]) {
    let n = dims.len();
    let taps = shape.taps();
    for co in 0..shape.out_ch {
        let dst = &mut out[co * n..(co + 1) * n];
        dst.fill(b[co]);
        for ci in 0..shape.in_ch {
            let src = &input[ci * n..(ci + 1) * n];
            for tap in 0..taps {
                let wv = w[(co * shape.in_ch + ci) * taps + tap];
                for_each_run(dims, tap_offset(shape, tap), |o, i, run| {
                    for (a, &s) in dst[o..o + run].iter_mut().zip(&src[i..i + run]) {
                        *a += wv * s;
                    }
                });
            }
        }
    }
}

/// Accumulates weight and bias gradients; propagates to `d_input` when given.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    shape: LayerShape,
    w: &[T],
    dims: Dims,
    input: &[T],
    d_out: &[T],
    d_w: &mut [T],
    d_b: &mut [T],
    mut d_input: Option<&mut [T]>,
) {
    let n = dims.len();
    let taps = shape.taps();
    for co in 0..shape.out_ch {
        let g = &d_out[co * n..(co + 1) * n];
        d_b[co] += g.iter().copied().sum::<T>();
        for ci in 0..shape.in_ch {
            let src = &input[ci * n..(ci + 1) * n];
            for tap in 0..taps {
                let widx = (co * shape.in_ch + ci) * taps + tap;
                let wv = w[widx];
                let mut acc = T::zero();
                let d = tap_offset(shape, tap);
                for_each_run(dims, d, |o, i, run| {
                    for (&gv, &s) in g[o..o + run].iter().zip(&src[i..i + run]) {
                        acc += gv * s;
                    }
                });
                d_w[widx] += acc;
                if let Some(d_in) = d_input.as_deref_mut() {
                    let dst = &mut d_in[ci * n..(ci + 1) * n];
                    for_each_run(dims, d, |o, i, run| {
                        for (a, &gv) in dst[i..i + run].iter_mut().zip(&g[o..o + run]) {
                            *a += wv * gv;
                        }
                    });
                }
            }
        }
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for a in v {
        if *a < T::zero() {
            *a = T::zero();
        }
    }
}

fn run<T: Real>(params: &ModelParams<T>, x: &Volume<T>) -> Result<Trace<T>> {
    let dims = x.dims();
    let n = dims.len();
    let mut h1 = vec![T::zero(); HIDDEN_CHANNELS * n];
    conv_forward(LAYERS[0], params.weights(0), params.biases(0), dims, x.data(), &mut h1);
    relu_in_place(&mut h1);
    let mut h2 = vec![T::zero(); HIDDEN_CHANNELS * n];
    conv_forward(LAYERS[1], params.weights(1), params.biases(1), dims, &h1, &mut h2);
    relu_in_place(&mut h2);
    let mut prob = vec![T::zero(); n];
    conv_forward(LAYERS[2], params.weights(2), params.biases(2), dims, &h2, &mut prob);
    for p in prob.iter_mut() {
        *p = sigmoid(*p);
    }
    if prob.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("forward pass"));
    }
    Ok(Trace { h1, h2, prob })
}

/// Foreground probability for every voxel of `x`.
pub fn forward<T: Real>(params: &ModelParams<T>, x: &Volume<T>) -> Result<ProbMap<T>> {
    let t = run(params, x)?;
    ProbMap::new(*x.geometry(), t.prob)
}

/// Backpropagates `d_prob` (dL/dy per voxel) to every parameter.
fn backward<T: Real>(params: &ModelParams<T>, x: &Volume<T>, trace: &Trace<T>, d_prob: &[T]) -> Vec<T> {
    let dims = x.dims();
    let n = dims.len();
    let mut grads = vec![T::zero(); NUM_PARAMS];
    let (g0, rest) = grads.split_at_mut(LAYERS[0].param_count());
    let (g1, g2) = rest.split_at_mut(LAYERS[1].param_count());

    let d_logit: Vec<T> = d_prob
        .iter()
        .zip(&trace.prob)
        .map(|(&g, &p)| g * p * (T::one() - p))
        .collect();

    let mut d_h2 = vec![T::zero(); HIDDEN_CHANNELS * n];
    {
        let (w, b) = g2.split_at_mut(LAYERS[2].weight_count());
        conv_backward(LAYERS[2], params.weights(2), dims, &trace.h2, &d_logit, w, b, Some(&mut d_h2));
    }
    for (g, &a) in d_h2.iter_mut().zip(&trace.h2) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
    let mut d_h1 = vec![T::zero(); HIDDEN_CHANNELS * n];
    {
        let (w, b) = g1.split_at_mut(LAYERS[1].weight_count());
        conv_backward(LAYERS[1], params.weights(1), dims, &trace.h1, &d_h2, w, b, Some(&mut d_h1));
    }
    for (g, &a) in d_h1.iter_mut().zip(&trace.h1) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
    let (w, b) = g0.split_at_mut(LAYERS[0].weight_count());
    conv_backward(LAYERS[0], params.weights(0), dims, x.data(), &d_h1, w, b, None);
    grads
}

/// Loss value, per-parameter gradients and the prediction they were computed from.
#[derive(Debug, Clone)]
pub struct ParamLoss<T> {
    pub value: T,
    pub grads: Vec<T>,
    pub prediction: ProbMap<T>,
}

/// Combined loss of the network's prediction on `x` and its gradient with respect
/// to every weight and bias.
pub fn loss_grad_params<T: Real>(
    params: &ModelParams<T>,
    x: &Volume<T>,
    gt: &BinaryMask,
    spec: &LossSpec,
) -> Result<ParamLoss<T>> {
    loss_grad_impl(params, x, gt, None, spec)
}

/// [`loss_grad_params`] with the MEEP/KL error mask held fixed.
pub fn loss_grad_params_with_mask<T: Real>(
    params: &ModelParams<T>,
    x: &Volume<T>,
    gt: &BinaryMask,
    wrong: &BinaryMask,
    spec: &LossSpec,
) -> Result<ParamLoss<T>> {
    loss_grad_impl(params, x, gt, Some(wrong), spec)
}

fn loss_grad_impl<T: Real>(
    params: &ModelParams<T>,
    x: &Volume<T>,
    gt: &BinaryMask,
    wrong: Option<&BinaryMask>,
    spec: &LossSpec,
) -> Result<ParamLoss<T>> {
    x.geometry().ensure_same_dims(gt.geometry())?;
    let trace = run(params, x)?;
    let prediction = ProbMap::new(*x.geometry(), trace.prob.clone())?;
    let loss = match wrong {
        Some(w) => combined_loss_with_mask(&prediction, gt, w, spec)?,
        None => combined_loss(&prediction, gt, spec)?,
    };
    let grads = backward(params, x, &trace, loss.grad.data());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("parameter gradients"));
    }
    Ok(ParamLoss {
        value: loss.value,
        grads,
        prediction,
    })
}

/// ReLU on/off pattern of both hidden layers; a finite-difference step that
/// changes it straddles a kink.
#[doc(hidden)]
pub fn activation_pattern<T: Real>(params: &ModelParams<T>, x: &Volume<T>) -> Result<Vec<bool>> {
    let t = run(params, x)?;
    Ok(t.h1.iter().chain(&t.h2).map(|&a| a > T::zero()).collect())
}
