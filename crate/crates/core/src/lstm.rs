//! Stacked many-to-one LSTM regressor with backpropagation through time.
//!
//! Each layer computes, for `v = [h_{t-1}; x_t]`,
//!
//! ```text
//! [a_i; a_f; a_o; a_g] = W v + b
//! i = σ(a_i), f = σ(a_f), o = σ(a_o), g = tanh(a_g)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! and the prediction is `head_w · h_T + head_b` on the top layer.
//!
//! Parameters live in one flat vector. Layout, per layer `k` in order:
//! `W_k` (`4H × (H + D_k)`, row-major, row blocks in gate order i, f, o, g),
//! then `b_k` (`4H`, absent without bias); followed by `head_w` (`H`) and
//! `head_b` (1). Gradients and checkpoints use the same layout.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub use_bias: bool,
}

impl LstmConfig {
    /// Two layers of 64 units.
    pub fn desk(input_size: usize) -> Self {
        Self {
            input_size,
            hidden_size: 64,
            num_layers: 2,
            use_bias: true,
        }
    }

    /// Two layers of 1000 units.
    pub fn full_size(input_size: usize) -> Self {
        Self {
            hidden_size: 1000,
            ..Self::desk(input_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::invalid(
                "lstm config",
                "input size, hidden size and layer count must be positive",
            ));
        }
        Ok(())
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_size
        } else {
            self.hidden_size
        }
    }

    fn weight_len(&self, layer: usize) -> usize {
        4 * self.hidden_size * (self.hidden_size + self.layer_input(layer))
    }

    fn layer_len(&self, layer: usize) -> usize {
        self.weight_len(layer)
            + if self.use_bias {
                4 * self.hidden_size
            } else {
                0
            }
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|k| self.layer_len(k)).sum()
    }

    fn head_offset(&self) -> usize {
        self.layer_offset(self.num_layers)
    }

    pub fn num_params(&self) -> usize {
        self.head_offset() + self.hidden_size + 1
    }
}

/// Borrowed view of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerParams<'a> {
    pub hidden_size: usize,
    pub input_size: usize,
    /// `4H × (H + D_in)`, row-major.
    pub w: &'a [f64],
    pub b: Option<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct LstmNetwork {
    config: LstmConfig,
    params: Vec<f64>,
    /// Identifies the current parameter values for cache checks.
    generation: u64,
}

impl PartialEq for LstmNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl LstmNetwork {
    /// All parameters zero.
    pub fn zeros(config: LstmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            params: vec![0.0; config.num_params()],
            generation: next_generation(),
        })
    }

    /// Weights uniform in `±1/√(H + D_in)`, biases zero except the forget
    /// gate (1.0), head weights uniform in `±1/√H`, head bias zero.
    pub fn new(config: LstmConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let h = config.hidden_size;
        for k in 0..config.num_layers {
            let off = config.layer_offset(k);
            let bound = 1.0 / libm::sqrt((h + config.layer_input(k)) as f64);
            for w in &mut net.params[off..off + config.weight_len(k)] {
                *w = rng.random_range(-bound..bound);
            }
            if config.use_bias {
                let b = off + config.weight_len(k);
                net.params[b + h..b + 2 * h].fill(1.0);
            }
        }
        let head = config.head_offset();
        let bound = 1.0 / libm::sqrt(h as f64);
        for w in &mut net.params[head..head + h] {
            *w = rng.random_range(-bound..bound);
        }
        Ok(net)
    }

    pub fn from_params(config: LstmConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return Err(Error::DimensionMismatch {
                what: "lstm parameters",
                expected: config.num_params(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("lstm parameters"));
        }
        Ok(Self {
            config,
            params,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &LstmConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn layer(&self, k: usize) -> LayerParams<'_> {
        let c = &self.config;
        let off = c.layer_offset(k);
        let wl = c.weight_len(k);
        LayerParams {
            hidden_size: c.hidden_size,
            input_size: c.layer_input(k),
            w: &self.params[off..off + wl],
            b: c.use_bias
                .then(|| &self.params[off + wl..off + wl + 4 * c.hidden_size]),
        }
    }

    pub fn head_w(&self) -> &[f64] {
        let off = self.config.head_offset();
        &self.params[off..off + self.config.hidden_size]
    }

    pub fn head_b(&self) -> f64 {
        self.params[self.config.num_params() - 1]
    }

    fn stamp(&self) -> (LstmConfig, u64) {
        (self.config, self.generation)
    }
}

/// Numerically safe `e^x / (e^x + 1)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (e + 1.0)
    }
}

/// One step of one layer, writing activated gates `[i, f, o, g]`, the new
/// cell state, `tanh(c_t)` and `h_t` into the output slices.
#[allow(clippy::too_many_arguments)]
fn step_into(
    p: &LayerParams<'_>,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
    v: &mut Vec<f64>,
    gates: &mut [f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
) {
    let hs = p.hidden_size;
    v.clear();
    v.extend_from_slice(h_prev);
    v.extend_from_slice(x);
    let cols = v.len();
    for (r, row) in p.w.chunks_exact(cols).enumerate() {
        let mut a = p.b.map_or(0.0, |b| b[r]);
        for (w, vi) in row.iter().zip(v.iter()) {
            a += w * vi;
        }
        gates[r] = if r < 3 * hs {
            sigmoid(a)
        } else {
            libm::tanh(a)
        };
    }
    for j in 0..hs {
        let (i, f, o, g) = (
            gates[j],
            gates[hs + j],
            gates[2 * hs + j],
            gates[3 * hs + j],
        );
        c[j] = f * c_prev[j] + i * g;
        tanh_c[j] = libm::tanh(c[j]);
        h[j] = o * tanh_c[j];
    }
}

fn check_layer(p: &LayerParams<'_>, state: &LayerState, x: &[f64]) -> Result<()> {
    let hs = p.hidden_size;
    if state.h.len() != hs || state.c.len() != hs {
        return Err(Error::DimensionMismatch {
            what: "layer state",
            expected: hs,
            found: state.h.len().max(state.c.len()),
        });
    }
    if x.len() != p.input_size {
        return Err(Error::DimensionMismatch {
            what: "layer input",
            expected: p.input_size,
            found: x.len(),
        });
    }
    if p.w.len() != 4 * hs * (hs + p.input_size) || p.b.is_some_and(|b| b.len() != 4 * hs) {
        return Err(Error::invalid(
            "layer parameters",
            "shape inconsistent with sizes",
        ));
    }
    let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
    if !finite(p.w) || !p.b.map_or(true, finite) {
        return Err(Error::NonFinite("layer parameters"));
    }
    if !finite(x) || !finite(&state.h) || !finite(&state.c) {
        return Err(Error::NonFinite("layer input"));
    }
    Ok(())
}

/// A single LSTM cell update.
pub fn cell_step(p: &LayerParams<'_>, state: &LayerState, x: &[f64]) -> Result<LayerState> {
    check_layer(p, state, x)?;
    let hs = p.hidden_size;
    let mut out = LayerState::zeros(hs);
    let mut gates = vec![0.0; 4 * hs];
    let mut tanh_c = vec![0.0; hs];
    let mut v = Vec::with_capacity(hs + x.len());
    step_into(
        p,
        &state.h,
        &state.c,
        x,
        &mut v,
        &mut gates,
        &mut out.c,
        &mut tanh_c,
        &mut out.h,
    );
    Ok(out)
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// `T × 4H` activated gates.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Activations of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: (LstmConfig, u64),
    num_frames: usize,
    input: Vec<f64>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    /// Hidden states `h_t` of `layer`, frame-major.
    pub fn hidden(&self, layer: usize) -> &[f64] {
        &self.layers[layer].h
    }

    pub fn cell(&self, layer: usize) -> &[f64] {
        &self.layers[layer].c
    }
}

/// Runs the sequence from zero initial states and returns the regression
/// output along with the activations needed for backpropagation.
pub fn forward(net: &LstmNetwork, seq: &FeatureSequence) -> Result<(f64, ForwardCache)> {
    let cfg = net.config;
    if seq.num_features() != cfg.input_size {
        return Err(Error::DimensionMismatch {
            what: "sequence features",
            expected: cfg.input_size,
            found: seq.num_features(),
        });
    }
    let t_len = seq.num_frames();
    let hs = cfg.hidden_size;
    let zeros = vec![0.0; hs];
    let mut v = Vec::with_capacity(hs + cfg.input_size.max(hs));
    let mut layers: Vec<LayerCache> = Vec::with_capacity(cfg.num_layers);

    for k in 0..cfg.num_layers {
        let p = net.layer(k);
        let mut lc = LayerCache {
            gates: vec![0.0; t_len * 4 * hs],
            c: vec![0.0; t_len * hs],
            tanh_c: vec![0.0; t_len * hs],
            h: vec![0.0; t_len * hs],
        };
        for t in 0..t_len {
            let x = match layers.last() {
                None => seq.frame(t),
                Some(below) => &below.h[t * hs..(t + 1) * hs],
            };
            let (c_done, c_rest) = lc.c.split_at_mut(t * hs);
            let (h_done, h_rest) = lc.h.split_at_mut(t * hs);
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&h_done[(t - 1) * hs..], &c_done[(t - 1) * hs..])
            };
            step_into(
                &p,
                h_prev,
                c_prev,
                x,
                &mut v,
                &mut lc.gates[t * 4 * hs..(t + 1) * 4 * hs],
                &mut c_rest[..hs],
                &mut lc.tanh_c[t * hs..(t + 1) * hs],
                &mut h_rest[..hs],
            );
        }
        layers.push(lc);
    }

    let top = &layers[cfg.num_layers - 1].h[(t_len - 1) * hs..];
    let prediction = net
        .head_w()
        .iter()
        .zip(top)
        .fold(net.head_b(), |acc, (w, h)| acc + w * h);

    Ok((
        prediction,
        ForwardCache {
            stamp: net.stamp(),
            num_frames: t_len,
            input: seq.values().to_vec(),
            layers,
        },
    ))
}

pub fn predict(net: &LstmNetwork, seq: &FeatureSequence) -> Result<f64> {
    forward(net, seq).map(|(y, _)| y)
}

/// Parameter gradients in the network's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(config: &LstmConfig) -> Self {
        Self(vec![0.0; config.num_params()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self += other`, element-wise in index order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Gradients of `d_prediction × prediction` with respect to every parameter.
pub fn backward(net: &LstmNetwork, cache: &ForwardCache, d_prediction: f64) -> Result<Gradients> {
    let mut grads = Gradients::zeros(&net.config);
    backward_into(net, cache, d_prediction, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but adds into an existing gradient buffer.
pub fn backward_into(
    net: &LstmNetwork,
    cache: &ForwardCache,
    d_prediction: f64,
    grads: &mut Gradients,
) -> Result<()> {
    if cache.stamp != net.stamp() {
        return Err(Error::StaleCache);
    }
    let cfg = net.config;
    if grads.0.len() != cfg.num_params() {
        return Err(Error::DimensionMismatch {
            what: "gradient buffer",
            expected: cfg.num_params(),
            found: grads.0.len(),
        });
    }
    let hs = cfg.hidden_size;
    let t_len = cache.num_frames;
    let g = &mut grads.0;

    let head = cfg.head_offset();
    let top_h = &cache.layers[cfg.num_layers - 1].h[(t_len - 1) * hs..];
    for (gw, h) in g[head..head + hs].iter_mut().zip(top_h) {
        *gw += d_prediction * h;
    }
    g[head + hs] += d_prediction;

    // Gradient arriving at each h_t of the current layer from above.
    let mut dh_above = vec![0.0; t_len * hs];
    for (d, w) in dh_above[(t_len - 1) * hs..].iter_mut().zip(net.head_w()) {
        *d = d_prediction * w;
    }

    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];
    let mut dz = vec![0.0; 4 * hs];
    let mut v = Vec::with_capacity(hs + cfg.input_size.max(hs));
    let mut dv = Vec::with_capacity(hs + cfg.input_size.max(hs));

    for k in (0..cfg.num_layers).rev() {
        let p = net.layer(k);
        let d_in = p.input_size;
        let cols = hs + d_in;
        let lc = &cache.layers[k];
        let w_off = cfg.layer_offset(k);
        let b_off = w_off + cfg.weight_len(k);
        let mut dx_below = if k > 0 {
            vec![0.0; t_len * hs]
        } else {
            Vec::new()
        };
        dh_next.fill(0.0);
        dc_next.fill(0.0);

        for t in (0..t_len).rev() {
            let gates = &lc.gates[t * 4 * hs..(t + 1) * 4 * hs];
            let tanh_c = &lc.tanh_c[t * hs..(t + 1) * hs];
            for j in 0..hs {
                let (i, f, o, gg) = (
                    gates[j],
                    gates[hs + j],
                    gates[2 * hs + j],
                    gates[3 * hs + j],
                );
                let c_prev = if t == 0 { 0.0 } else { lc.c[(t - 1) * hs + j] };
                let dh = dh_above[t * hs + j] + dh_next[j];
                let d_o = dh * tanh_c[j];
                let dc = dc_next[j] + dh * o * (1.0 - tanh_c[j] * tanh_c[j]);
                dz[j] = dc * gg * i * (1.0 - i);
                dz[hs + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * hs + j] = d_o * o * (1.0 - o);
                dz[3 * hs + j] = dc * i * (1.0 - gg * gg);
                dc_next[j] = dc * f;
            }

            v.clear();
            if t == 0 {
                v.resize(hs, 0.0);
            } else {
                v.extend_from_slice(&lc.h[(t - 1) * hs..t * hs]);
            }
            if k == 0 {
                v.extend_from_slice(&cache.input[t * d_in..(t + 1) * d_in]);
            } else {
                v.extend_from_slice(&cache.layers[k - 1].h[t * hs..(t + 1) * hs]);
            }
            dv.clear();
            dv.resize(cols, 0.0);

            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let row = &p.w[r * cols..(r + 1) * cols];
                let grow = &mut g[w_off + r * cols..w_off + (r + 1) * cols];
                for ((gw, vi), (dvi, w)) in grow.iter_mut().zip(&v).zip(dv.iter_mut().zip(row)) {
                    *gw += dzr * vi;
                    *dvi += dzr * w;
                }
                if cfg.use_bias {
                    g[b_off + r] += dzr;
                }
            }
            dh_next.copy_from_slice(&dv[..hs]);
            if k > 0 {
                dx_below[t * hs..(t + 1) * hs].copy_from_slice(&dv[hs..]);
            }
        }
        if k > 0 {
            dh_above = dx_below;
        }
    }
    Ok(())
}
