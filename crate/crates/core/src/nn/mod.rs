//! The convolutional surrogate: three 3×3 same-size convolutions with ReLU
//! between them, mapping `(u, v, p, σ·dt)` to one-step field increments
//! `(Δu, Δv, Δp)`. The backward pass is written out by hand.

pub mod conv;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inject_sources, DomainSpec, SigmaField, SourceSpec, WaveState};
use crate::real::Real;

pub use conv::KERNEL;

pub const INPUT_CHANNELS: usize = 4;
pub const OUTPUT_CHANNELS: usize = 3;
pub const HIDDEN_CHANNELS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f64> {
    pub out_channels: usize,
    pub in_channels: usize,
    /// `[out][in][3][3]`, row-major.
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            out_channels,
            in_channels,
            weights: vec![T::zero(); out_channels * in_channels * conv::TAPS],
            biases: vec![T::zero(); out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.weights.len() != self.out_channels * self.in_channels * conv::TAPS || self.biases.len() != self.out_channels {
            return Err(Error::Shape(format!(
                "layer {index}: {} weights and {} biases for {}->{} channels",
                self.weights.len(),
                self.biases.len(),
                self.in_channels,
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// Weights and biases of the three layers. The same shape doubles as the
/// container for parameter gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f64> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(hidden: usize) -> Self {
        ModelParams {
            layers: vec![
                ConvLayer::zeros(INPUT_CHANNELS, hidden),
                ConvLayer::zeros(hidden, hidden),
                ConvLayer::zeros(hidden, OUTPUT_CHANNELS),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| ConvLayer {
                out_channels: l.out_channels,
                in_channels: l.in_channels,
                weights: vec![T::zero(); l.weights.len()],
                biases: vec![T::zero(); l.biases.len()],
            })
            .collect();
        ModelParams { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Checks the `4 → h → h → 3` channel chain and every buffer length.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != 3 {
            return Err(Error::Shape(format!("expected 3 layers, found {}", self.layers.len())));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            layer.check(k)?;
        }
        let chain: Vec<usize> = std::iter::once(self.layers[0].in_channels)
            .chain(self.layers.iter().map(|l| l.out_channels))
            .collect();
        let linked = self.layers.windows(2).all(|w| w[0].out_channels == w[1].in_channels);
        if !linked || chain[0] != INPUT_CHANNELS || chain[3] != OUTPUT_CHANNELS || chain[1] != chain[2] {
            return Err(Error::Shape(format!("channel chain {chain:?} is not 4 -> h -> h -> 3")));
        }
        Ok(())
    }

    /// Same layer shapes as `other`.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_channels == b.in_channels
                    && a.out_channels == b.out_channels
                    && a.weights.len() == b.weights.len()
                    && a.biases.len() == b.biases.len()
            })
    }

    /// Mutable parameter tensors in a fixed order: per layer, weights then biases.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.biases])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Vec<T>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.biases])
    }

    /// `self += scale · other`, elementwise.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    out_channels: l.out_channels,
                    in_channels: l.in_channels,
                    weights: conv(&l.weights),
                    biases: conv(&l.biases),
                })
                .collect(),
        }
    }
}

/// He-normal weights with standard deviation `sqrt(2 / (in·9))`, zero biases.
pub fn init_params<T: Real, R: Rng + ?Sized>(rng: &mut R) -> ModelParams<T> {
    init_params_with(HIDDEN_CHANNELS, rng)
}

pub fn init_params_with<T: Real, R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> ModelParams<T> {
    init_params_scheme(hidden, InitScheme::He, rng)
}

/// How a fresh model's weights are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// He-normal in every layer.
    #[default]
    He,
    /// He-normal hidden layers and an all-zero output layer, so the fresh
    /// model predicts no change and cannot feed garbage back into a pool.
    ZeroOutput,
}

pub fn init_params_scheme<T: Real, R: Rng + ?Sized>(hidden: usize, scheme: InitScheme, rng: &mut R) -> ModelParams<T> {
    let mut params = ModelParams::zeros(hidden);
    let drawn = match scheme {
        InitScheme::He => params.layers.len(),
        InitScheme::ZeroOutput => params.layers.len() - 1,
    };
    for layer in &mut params.layers[..drawn] {
        let std = (2.0 / (layer.in_channels * conv::TAPS) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive standard deviation");
        for w in &mut layer.weights {
            *w = T::lit(normal.sample(rng));
        }
    }
    params
}

/// A channel-major stack of same-sized fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldStack<T = f64> {
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

impl<T: Real> FieldStack<T> {
    pub fn zeros(channels: usize, nx: usize, ny: usize) -> Self {
        FieldStack { channels, nx, ny, data: vec![T::zero(); channels * nx * ny] }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.nx * self.ny;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let hw = self.nx * self.ny;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Network input `(u, v, p, σ·dt)`.
    pub fn network_input(state: &WaveState<T>, sigma: &SigmaField<T>, dt: f64) -> Self {
        let (nx, ny) = state.shape();
        let dt = T::lit(dt);
        let mut data = Vec::with_capacity(INPUT_CHANNELS * nx * ny);
        data.extend_from_slice(state.u.as_slice());
        data.extend_from_slice(state.v.as_slice());
        data.extend_from_slice(state.p.as_slice());
        data.extend(sigma.as_slice().iter().map(|&s| s * dt));
        FieldStack { channels: INPUT_CHANNELS, nx, ny, data }
    }
}

/// Layer inputs retained from a forward pass. ReLU masks are recovered from
/// the post-activation values (`relu(z) > 0 ⇔ z > 0`).
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f64> {
    pub input: FieldStack<T>,
    pub hidden1: Vec<T>,
    pub hidden2: Vec<T>,
}

fn relu_in_place<T: Real>(xs: &mut [T]) {
    for x in xs {
        if *x <= T::zero() {
            *x = T::zero();
        }
    }
}

pub fn forward<T: Real>(params: &ModelParams<T>, input: &FieldStack<T>) -> Result<(FieldStack<T>, ForwardCache<T>)> {
    params.validate()?;
    if input.channels != INPUT_CHANNELS || input.data.len() != input.channels * input.nx * input.ny {
        return Err(Error::Shape(format!(
            "network input has {} channels ({} values), expected {INPUT_CHANNELS} channels of {}x{}",
            input.channels,
            input.data.len(),
            input.nx,
            input.ny
        )));
    }
    let (nx, ny) = (input.nx, input.ny);
    let [l1, l2, l3] = [&params.layers[0], &params.layers[1], &params.layers[2]];
    let mut cols = Vec::new();
    let mut hidden1 = conv::forward(&l1.weights, &l1.biases, &input.data, l1.in_channels, l1.out_channels, nx, ny, &mut cols);
    relu_in_place(&mut hidden1);
    let mut hidden2 = conv::forward(&l2.weights, &l2.biases, &hidden1, l2.in_channels, l2.out_channels, nx, ny, &mut cols);
    relu_in_place(&mut hidden2);
    let delta = conv::forward(&l3.weights, &l3.biases, &hidden2, l3.in_channels, l3.out_channels, nx, ny, &mut cols);
    Ok((
        FieldStack { channels: OUTPUT_CHANNELS, nx, ny, data: delta },
        ForwardCache { input: input.clone(), hidden1, hidden2 },
    ))
}

/// Parameter gradients of a scalar loss given `∂loss/∂delta`.
pub fn backward<T: Real>(params: &ModelParams<T>, cache: &ForwardCache<T>, grad_delta: &FieldStack<T>) -> Result<ModelParams<T>> {
    params.validate()?;
    let (nx, ny) = (cache.input.nx, cache.input.ny);
    let hw = nx * ny;
    let hidden = params.layers[0].out_channels;
    if cache.input.channels != INPUT_CHANNELS
        || cache.hidden1.len() != hidden * hw
        || cache.hidden2.len() != params.layers[1].out_channels * hw
    {
        return Err(Error::Shape("forward cache does not match the parameters".into()));
    }
    if grad_delta.channels != OUTPUT_CHANNELS || grad_delta.nx != nx || grad_delta.ny != ny {
        return Err(Error::Shape(format!(
            "output gradient is {}x{}x{}, expected {OUTPUT_CHANNELS}x{nx}x{ny}",
            grad_delta.channels, grad_delta.nx, grad_delta.ny
        )));
    }

    let mut grads = params.zeros_like();
    let mut cols = Vec::new();
    let (g1, rest) = grads.layers.split_at_mut(1);
    let (g2, g3) = rest.split_at_mut(1);
    let [l1, l2, l3] = [&params.layers[0], &params.layers[1], &params.layers[2]];

    let mut d2 = conv::backward(
        &l3.weights, &cache.hidden2, &grad_delta.data, l3.in_channels, l3.out_channels, nx, ny,
        &mut g3[0].weights, &mut g3[0].biases, true, &mut cols,
    )
    .expect("input gradient requested");
    mask_relu(&mut d2, &cache.hidden2);
    let mut d1 = conv::backward(
        &l2.weights, &cache.hidden1, &d2, l2.in_channels, l2.out_channels, nx, ny,
        &mut g2[0].weights, &mut g2[0].biases, true, &mut cols,
    )
    .expect("input gradient requested");
    mask_relu(&mut d1, &cache.hidden1);
    conv::backward(
        &l1.weights, &cache.input.data, &d1, l1.in_channels, l1.out_channels, nx, ny,
        &mut g1[0].weights, &mut g1[0].biases, false, &mut cols,
    );
    Ok(grads)
}

fn mask_relu<T: Real>(grad: &mut [T], activation: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Adds a predicted increment to a state and applies the hard sources at the
/// new time. Returns the new state; the increment itself is not retained.
pub fn apply_delta<T: Real>(
    state: &WaveState<T>,
    delta: &FieldStack<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
) -> Result<WaveState<T>> {
    let (nx, ny) = state.shape();
    let add = |field: &crate::grid::FieldGrid<T>, c: usize| {
        let data = field.as_slice().iter().zip(delta.channel(c)).map(|(&x, &d)| x + d).collect();
        crate::grid::FieldGrid::from_vec(nx, ny, data)
    };
    let mut next = WaveState { u: add(&state.u, 0)?, v: add(&state.v, 1)?, p: add(&state.p, 2)?, step: state.step + 1 };
    inject_sources(&mut next, sources, spec)?;
    Ok(next)
}

/// One surrogate step together with the forward cache needed for training.
pub fn predict_step_cached<T: Real>(
    params: &ModelParams<T>,
    state: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
) -> Result<(WaveState<T>, ForwardCache<T>)> {
    state.check_shape(spec.nx, spec.ny)?;
    let input = FieldStack::network_input(state, sigma, spec.dt);
    let (delta, cache) = forward(params, &input)?;
    Ok((apply_delta(state, &delta, spec, sources)?, cache))
}

pub fn predict_step<T: Real>(
    params: &ModelParams<T>,
    state: &WaveState<T>,
    sigma: &SigmaField<T>,
    spec: &DomainSpec,
    sources: &[SourceSpec],
) -> Result<WaveState<T>> {
    predict_step_cached(params, state, sigma, spec, sources).map(|(s, _)| s)
}

pub fn save_params<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    crate::io::write_checkpoint(path, &crate::io::Checkpoint { params: params.clone(), adam: None })
}

pub fn load_params<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    crate::io::read_checkpoint::<T>(path).map(|c| c.params)
}
