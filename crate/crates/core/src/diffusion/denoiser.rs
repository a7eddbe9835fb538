//! Reference temporal-convolution denoiser with hand-written backprop.
//!
//! ```text
//! input  [5, L] = x_t (2) | v0 (2) | broadcast(w_c·z + b_c) (1)
//! h1 = silu(conv1(input) + time_proj(emb(t)) + cond_proj(z))     [32, L]
//! h2 = silu(conv2(h1))                                            [32, L]
//! h3 = silu(conv3(h2))                                            [32, L]
//! ε̂  = out · h3 + b                                               [2, L]
//! ```
//!
//! Convolutions use kernel width 5 with zero "same" padding, so any sequence
//! length is accepted. All parameters live in one flat vector laid out in
//! [`ReferenceDenoiser::specs`] order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::process::Conditioning;
use crate::embedding::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::gaze::Signal2;

pub const HIDDEN_WIDTH: usize = 32;
pub const KERNEL_WIDTH: usize = 5;
pub const TIME_EMBEDDING_DIM: usize = 16;
const IN_CHANNELS: usize = 5;
const OUT_CHANNELS: usize = 2;
const PAD: isize = (KERNEL_WIDTH / 2) as isize;

/// Noise predictor ε_θ(x_t, t, cond).
pub trait Denoiser: Sync {
    fn predict_noise(&self, xt: &Signal2, t: usize, cond: &Conditioning) -> Signal2;
}

/// Name, shape and fan-in of one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub shape: &'static [usize],
    fan_in: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

const H: usize = HIDDEN_WIDTH;
const K: usize = KERNEL_WIDTH;

const SPECS: [TensorSpec; 14] = [
    TensorSpec { name: "conv1.weight", shape: &[H, IN_CHANNELS, K], fan_in: IN_CHANNELS * K },
    TensorSpec { name: "conv1.bias", shape: &[H], fan_in: IN_CHANNELS * K },
    TensorSpec { name: "time_proj.weight", shape: &[H, TIME_EMBEDDING_DIM], fan_in: TIME_EMBEDDING_DIM },
    TensorSpec { name: "time_proj.bias", shape: &[H], fan_in: TIME_EMBEDDING_DIM },
    TensorSpec { name: "cond_proj.weight", shape: &[H, EMBEDDING_DIM], fan_in: EMBEDDING_DIM },
    TensorSpec { name: "cond_proj.bias", shape: &[H], fan_in: EMBEDDING_DIM },
    TensorSpec { name: "cond_channel.weight", shape: &[EMBEDDING_DIM], fan_in: EMBEDDING_DIM },
    TensorSpec { name: "cond_channel.bias", shape: &[1], fan_in: EMBEDDING_DIM },
    TensorSpec { name: "conv2.weight", shape: &[H, H, K], fan_in: H * K },
    TensorSpec { name: "conv2.bias", shape: &[H], fan_in: H * K },
    TensorSpec { name: "conv3.weight", shape: &[H, H, K], fan_in: H * K },
    TensorSpec { name: "conv3.bias", shape: &[H], fan_in: H * K },
    TensorSpec { name: "out.weight", shape: &[OUT_CHANNELS, H], fan_in: H },
    TensorSpec { name: "out.bias", shape: &[OUT_CHANNELS], fan_in: H },
];

const fn offsets() -> [usize; 15] {
    let mut out = [0; 15];
    let mut i = 0;
    while i < SPECS.len() {
        let mut n = 1;
        let mut d = 0;
        while d < SPECS[i].shape.len() {
            n *= SPECS[i].shape[d];
            d += 1;
        }
        out[i + 1] = out[i] + n;
        i += 1;
    }
    out
}

const OFFSETS: [usize; 15] = offsets();
const PARAM_COUNT: usize = OFFSETS[14];

// Tensor indices into SPECS / OFFSETS.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const TIME_W: usize = 2;
const TIME_B: usize = 3;
const COND_W: usize = 4;
const COND_B: usize = 5;
const CHAN_W: usize = 6;
const CHAN_B: usize = 7;
const CONV2_W: usize = 8;
const CONV2_B: usize = 9;
const CONV3_W: usize = 10;
const CONV3_B: usize = 11;
const OUT_W: usize = 12;
const OUT_B: usize = 13;

/// `[sin(t·ω_0..7), cos(t·ω_0..7)]` with ω_k = 10000^(−k/8).
pub fn sinusoidal_time_embedding(t: usize) -> [f64; TIME_EMBEDDING_DIM] {
    let half = TIME_EMBEDDING_DIM / 2;
    let mut out = [0.0; TIME_EMBEDDING_DIM];
    for k in 0..half {
        let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * w).sin();
        out[k + half] = (t as f64 * w).cos();
    }
    out
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

/// Same-padded 1-D convolution. `input` is `[c_in, len]`, `w` is
/// `[c_out, c_in, K]`; result is added into `out` (`[c_out, len]`).
fn conv_add(input: &[f64], c_in: usize, len: usize, w: &[f64], c_out: usize, out: &mut [f64]) {
    for o in 0..c_out {
        let row = &mut out[o * len..(o + 1) * len];
        for c in 0..c_in {
            let x = &input[c * len..(c + 1) * len];
            for k in 0..K {
                let wk = w[(o * c_in + c) * K + k];
                let shift = k as isize - PAD;
                let (dst, src) = shifted(row, x, shift);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
    }
}

/// Aligns `row[i]` with `x[i + shift]` over the overlapping range.
fn shifted<'a, 'b>(row: &'a mut [f64], x: &'b [f64], shift: isize) -> (&'a mut [f64], &'b [f64]) {
    let len = row.len();
    let s = shift.unsigned_abs().min(len);
    if shift >= 0 {
        (&mut row[..len - s], &x[s..])
    } else {
        (&mut row[s..], &x[..len - s])
    }
}

/// Backward of [`conv_add`]: accumulates weight gradients into `gw` and,
/// when requested, input gradients into `gin`.
fn conv_backward(
    input: &[f64],
    c_in: usize,
    len: usize,
    w: &[f64],
    c_out: usize,
    g: &[f64],
    gw: &mut [f64],
    mut gin: Option<&mut [f64]>,
) {
    for o in 0..c_out {
        let go = &g[o * len..(o + 1) * len];
        for c in 0..c_in {
            let x = &input[c * len..(c + 1) * len];
            for k in 0..K {
                let shift = k as isize - PAD;
                let s = shift.unsigned_abs().min(len);
                let (gs, xs) = if shift >= 0 {
                    (&go[..len - s], &x[s..])
                } else {
                    (&go[s..], &x[..len - s])
                };
                let idx = (o * c_in + c) * K + k;
                gw[idx] += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                if let Some(gin) = gin.as_deref_mut() {
                    let wk = w[idx];
                    let gi = &mut gin[c * len..(c + 1) * len];
                    let (dst, src) = if shift >= 0 {
                        (&mut gi[s..], &go[..len - s])
                    } else {
                        (&mut gi[..len - s], &go[s..])
                    };
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += wk * v;
                    }
                }
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    len: usize,
    input: Vec<f64>,
    temb: [f64; TIME_EMBEDDING_DIM],
    z: Vec<f64>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    a3: Vec<f64>,
    h3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDenoiser {
    params: Vec<f64>,
}

impl ReferenceDenoiser {
    pub const PARAM_COUNT: usize = PARAM_COUNT;

    /// Uniform(±1/√fan_in) initialization for every tensor.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for spec in &SPECS {
            let bound = 1.0 / (spec.fan_in as f64).sqrt();
            params.extend((0..spec.numel()).map(|_| rng.random_range(-bound..bound)));
        }
        Self { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::Shape(format!(
                "denoiser expects {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { params })
    }

    pub fn specs() -> &'static [TensorSpec] {
        &SPECS
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named views of the parameter vector in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&'static TensorSpec, &[f64])> {
        SPECS
            .iter()
            .enumerate()
            .map(move |(i, s)| (s, &self.params[OFFSETS[i]..OFFSETS[i + 1]]))
    }

    /// Rebuilds a denoiser from named tensors; every tensor must be present
    /// exactly once with the expected shape.
    pub fn from_tensors(tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut params = vec![0.0; PARAM_COUNT];
        for (i, spec) in SPECS.iter().enumerate() {
            let mut found = tensors.iter().filter(|(n, _, _)| n == spec.name);
            let (_, shape, data) = found
                .next()
                .ok_or_else(|| Error::Container(format!("missing tensor {}", spec.name)))?;
            if found.next().is_some() {
                return Err(Error::Container(format!("duplicate tensor {}", spec.name)));
            }
            if shape.as_slice() != spec.shape || data.len() != spec.numel() {
                return Err(Error::Container(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    spec.name, shape, spec.shape
                )));
            }
            params[OFFSETS[i]..OFFSETS[i + 1]].copy_from_slice(data);
        }
        Ok(Self { params })
    }

    fn tensor(&self, i: usize) -> &[f64] {
        &self.params[OFFSETS[i]..OFFSETS[i + 1]]
    }

    pub fn forward(&self, xt: &Signal2, t: usize, cond: &Conditioning) -> (Signal2, ForwardCache) {
        let len = xt.len();
        let z = cond.z.as_slice();
        let v0 = &*cond.v0;
        assert_eq!(v0.len(), len, "conditioning length must match x_t");

        let zc = self.tensor(CHAN_B)[0]
            + self.tensor(CHAN_W).iter().zip(z).map(|(w, a)| w * a).sum::<f64>();
        let mut input = Vec::with_capacity(IN_CHANNELS * len);
        input.extend_from_slice(&xt.h);
        input.extend_from_slice(&xt.v);
        input.extend_from_slice(&v0.h);
        input.extend_from_slice(&v0.v);
        input.extend(std::iter::repeat_n(zc, len));

        let temb = sinusoidal_time_embedding(t);
        let (tw, tb) = (self.tensor(TIME_W), self.tensor(TIME_B));
        let (cw, cb) = (self.tensor(COND_W), self.tensor(COND_B));
        let b1 = self.tensor(CONV1_B);
        let mut a1 = vec![0.0; H * len];
        for o in 0..H {
            let tp: f64 = tb[o]
                + (0..TIME_EMBEDDING_DIM)
                    .map(|j| tw[o * TIME_EMBEDDING_DIM + j] * temb[j])
                    .sum::<f64>();
            let cp: f64 =
                cb[o] + (0..EMBEDDING_DIM).map(|j| cw[o * EMBEDDING_DIM + j] * z[j]).sum::<f64>();
            a1[o * len..(o + 1) * len].fill(b1[o] + tp + cp);
        }
        conv_add(&input, IN_CHANNELS, len, self.tensor(CONV1_W), H, &mut a1);
        let h1: Vec<f64> = a1.iter().map(|&a| silu(a)).collect();

        let a2 = self.conv_layer(&h1, len, CONV2_W, CONV2_B);
        let h2: Vec<f64> = a2.iter().map(|&a| silu(a)).collect();
        let a3 = self.conv_layer(&h2, len, CONV3_W, CONV3_B);
        let h3: Vec<f64> = a3.iter().map(|&a| silu(a)).collect();

        let (ow, ob) = (self.tensor(OUT_W), self.tensor(OUT_B));
        let mut out = [vec![0.0; len], vec![0.0; len]];
        for (o, row) in out.iter_mut().enumerate() {
            row.fill(ob[o]);
            for c in 0..H {
                let w = ow[o * H + c];
                for (r, x) in row.iter_mut().zip(&h3[c * len..(c + 1) * len]) {
                    *r += w * x;
                }
            }
        }
        let [oh, ov] = out;
        let cache = ForwardCache {
            len,
            input,
            temb,
            z: z.to_vec(),
            a1,
            h1,
            a2,
            h2,
            a3,
            h3,
        };
        (Signal2 { h: oh, v: ov }, cache)
    }

    fn conv_layer(&self, input: &[f64], len: usize, w: usize, b: usize) -> Vec<f64> {
        let bias = self.tensor(b);
        let mut a = vec![0.0; H * len];
        for o in 0..H {
            a[o * len..(o + 1) * len].fill(bias[o]);
        }
        conv_add(input, H, len, self.tensor(w), H, &mut a);
        a
    }

    /// Gradient of `Σ grad_out · ε̂` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Signal2) -> Vec<f64> {
        let len = cache.len;
        let mut g = vec![0.0; PARAM_COUNT];

        // Output layer.
        let ow = self.tensor(OUT_W);
        let mut gh3 = vec![0.0; H * len];
        for (o, go) in [&grad_out.h, &grad_out.v].into_iter().enumerate() {
            g[OFFSETS[OUT_B] + o] = go.iter().sum();
            for c in 0..H {
                let x = &cache.h3[c * len..(c + 1) * len];
                g[OFFSETS[OUT_W] + o * H + c] = go.iter().zip(x).map(|(a, b)| a * b).sum();
                let w = ow[o * H + c];
                for (d, v) in gh3[c * len..(c + 1) * len].iter_mut().zip(go.iter()) {
                    *d += w * v;
                }
            }
        }

        let ga3: Vec<f64> = gh3.iter().zip(&cache.a3).map(|(g, &a)| g * silu_grad(a)).collect();
        let mut gh2 = vec![0.0; H * len];
        {
            let r = OFFSETS[CONV3_W]..OFFSETS[CONV3_W + 1];
            conv_backward(&cache.h2, H, len, self.tensor(CONV3_W), H, &ga3, &mut g[r], Some(&mut gh2));
            for o in 0..H {
                g[OFFSETS[CONV3_B] + o] = ga3[o * len..(o + 1) * len].iter().sum();
            }
        }

        let ga2: Vec<f64> = gh2.iter().zip(&cache.a2).map(|(g, &a)| g * silu_grad(a)).collect();
        let mut gh1 = vec![0.0; H * len];
        {
            let r = OFFSETS[CONV2_W]..OFFSETS[CONV2_W + 1];
            conv_backward(&cache.h1, H, len, self.tensor(CONV2_W), H, &ga2, &mut g[r], Some(&mut gh1));
            for o in 0..H {
                g[OFFSETS[CONV2_B] + o] = ga2[o * len..(o + 1) * len].iter().sum();
            }
        }

        let ga1: Vec<f64> = gh1.iter().zip(&cache.a1).map(|(g, &a)| g * silu_grad(a)).collect();
        let mut gin = vec![0.0; IN_CHANNELS * len];
        {
            let r = OFFSETS[CONV1_W]..OFFSETS[CONV1_W + 1];
            conv_backward(&cache.input, IN_CHANNELS, len, self.tensor(CONV1_W), H, &ga1, &mut g[r], Some(&mut gin));
        }
        for o in 0..H {
            let s: f64 = ga1[o * len..(o + 1) * len].iter().sum();
            g[OFFSETS[CONV1_B] + o] = s;
            g[OFFSETS[TIME_B] + o] = s;
            g[OFFSETS[COND_B] + o] = s;
            for j in 0..TIME_EMBEDDING_DIM {
                g[OFFSETS[TIME_W] + o * TIME_EMBEDDING_DIM + j] = s * cache.temb[j];
            }
            for j in 0..EMBEDDING_DIM {
                g[OFFSETS[COND_W] + o * EMBEDDING_DIM + j] = s * cache.z[j];
            }
        }

        let gzc: f64 = gin[4 * len..5 * len].iter().sum();
        g[OFFSETS[CHAN_B]] = gzc;
        for j in 0..EMBEDDING_DIM {
            g[OFFSETS[CHAN_W] + j] = gzc * cache.z[j];
        }
        g
    }
}

impl Denoiser for ReferenceDenoiser {
    fn predict_noise(&self, xt: &Signal2, t: usize, cond: &Conditioning) -> Signal2 {
        self.forward(xt, t, cond).0
    }
}
