//! Deterministic 128-d user embedding.
//!
//! The descriptor concatenates six blocks computed from a velocity signal and
//! L2-normalizes the result:
//!
//! | block            | size | content                                                   |
//! |------------------|------|-----------------------------------------------------------|
//! | speed histogram  | 32   | log-spaced bins over [0.1, 1000] deg/s, sample fractions  |
//! | direction        | 16   | movement direction of samples faster than 0.1 deg/s       |
//! | spectrum H, V    | 16+16| Hann-windowed band powers, log bands over [0.2, 250] Hz   |
//! | acceleration     | 32   | log-spaced bins over [10, 1e6] deg/s²                     |
//! | speed quantiles  | 16   | `log10(1 + q)/3` at evenly spaced quantiles 0..=1         |
//!
//! Histogram blocks are piecewise constant, so their gradient is zero almost
//! everywhere; the spectral and quantile blocks carry the gradient used by the
//! identity-guidance loss (see [`Encoder::backward`]).

use std::f64::consts::PI;
use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{Signal2, WindowKey, DT, SAMPLE_RATE_HZ};
use crate::util::quantile_weights;

pub const EMBEDDING_DIM: usize = 128;

const SPEED_BINS: usize = 32;
const DIRECTION_BINS: usize = 16;
const SPECTRAL_BANDS: usize = 16;
const ACCEL_BINS: usize = 32;
const QUANTILES: usize = 16;

const SPEED_LOG_RANGE: (f64, f64) = (-1.0, 3.0);
const ACCEL_LOG_RANGE: (f64, f64) = (1.0, 6.0);
const BAND_RANGE_HZ: (f64, f64) = (0.2, 250.0);
/// Samples slower than this have no defined direction.
const DIRECTION_MIN_SPEED: f64 = 0.1;

const OFF_SPEED: usize = 0;
const OFF_DIRECTION: usize = OFF_SPEED + SPEED_BINS;
const OFF_SPEC_H: usize = OFF_DIRECTION + DIRECTION_BINS;
const OFF_SPEC_V: usize = OFF_SPEC_H + SPECTRAL_BANDS;
const OFF_ACCEL: usize = OFF_SPEC_V + SPECTRAL_BANDS;
const OFF_QUANTILE: usize = OFF_ACCEL + ACCEL_BINS;
const _: () = assert!(OFF_QUANTILE + QUANTILES == EMBEDDING_DIM);

/// Unit-norm identity descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEmbedding(Vec<f64>);

impl UserEmbedding {
    /// Normalizes `raw`; a zero vector maps to the first basis vector.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.len() != EMBEDDING_DIM {
            return Err(Error::Shape(format!(
                "embedding has {} components, expected {EMBEDDING_DIM}",
                raw.len()
            )));
        }
        if raw.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric {
                context: "embedding component".into(),
            });
        }
        let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            log::debug!("degenerate embedding input, using e1");
            return Ok(Self::degenerate());
        }
        Ok(Self(raw.into_iter().map(|a| a / norm).collect()))
    }

    pub fn degenerate() -> Self {
        let mut e = vec![0.0; EMBEDDING_DIM];
        e[0] = 1.0;
        Self(e)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity of two unit embeddings: their dot product, clamped to
/// [-1, 1] against rounding.
pub fn cosine_similarity(a: &UserEmbedding, b: &UserEmbedding) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Frozen encoder interface used by the identity-guidance loss.
pub trait Encoder: Sync {
    fn encode(&self, v: &Signal2) -> UserEmbedding;

    /// Vector-Jacobian product: the gradient of `upstream · encode(v)` with
    /// respect to `v`.
    fn backward(&self, v: &Signal2, upstream: &[f64]) -> Signal2;
}

/// Raw (unnormalized) blocks, exposed for block-wise inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlocks {
    pub speed_hist: Vec<f64>,
    pub direction_hist: Vec<f64>,
    pub spectral_h: Vec<f64>,
    pub spectral_v: Vec<f64>,
    pub accel_hist: Vec<f64>,
    pub speed_quantiles: Vec<f64>,
}

impl EmbeddingBlocks {
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(EMBEDDING_DIM);
        out.extend_from_slice(&self.speed_hist);
        out.extend_from_slice(&self.direction_hist);
        out.extend_from_slice(&self.spectral_h);
        out.extend_from_slice(&self.spectral_v);
        out.extend_from_slice(&self.accel_hist);
        out.extend_from_slice(&self.speed_quantiles);
        out
    }
}

/// The statistical encoder described in the module docs.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatisticalEncoder;

fn log_bin(value: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    if value <= 0.0 {
        return 0;
    }
    let pos = (value.log10() - lo) / (hi - lo) * bins as f64;
    if pos < 0.0 {
        0
    } else {
        (pos as usize).min(bins - 1)
    }
}

fn band_edges() -> Vec<f64> {
    let (lo, hi) = BAND_RANGE_HZ;
    (0..=SPECTRAL_BANDS)
        .map(|b| lo * (hi / lo).powf(b as f64 / SPECTRAL_BANDS as f64))
        .collect()
}

/// Band index of each one-sided FFT bin `k` (1..=n/2); `None` outside the
/// analysed range.
fn bin_bands(n: usize) -> Vec<Option<usize>> {
    let edges = band_edges();
    (0..=n / 2)
        .map(|k| {
            if k == 0 {
                return None;
            }
            let f = k as f64 * SAMPLE_RATE_HZ / n as f64;
            if f < edges[0] || f > edges[SPECTRAL_BANDS] {
                return None;
            }
            let b = edges.partition_point(|&e| e <= f);
            Some((b.max(1) - 1).min(SPECTRAL_BANDS - 1))
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

struct Spectrum {
    window: Vec<f64>,
    /// FFT of the windowed, mean-removed channel.
    coeffs: Vec<Complex<f64>>,
    band_of: Vec<Option<usize>>,
    band_power: [f64; SPECTRAL_BANDS],
    total: f64,
}

fn spectrum(x: &[f64]) -> Spectrum {
    let n = x.len();
    let window = hann(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut coeffs: Vec<Complex<f64>> = x
        .iter()
        .zip(&window)
        .map(|(&a, &w)| Complex::new(w * (a - mean), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut coeffs);
    let band_of = bin_bands(n);
    let mut band_power = [0.0; SPECTRAL_BANDS];
    let mut total = 0.0;
    for k in 1..=n / 2 {
        let p = coeffs[k].norm_sqr();
        total += p;
        if let Some(b) = band_of[k] {
            band_power[b] += p;
        }
    }
    Spectrum {
        window,
        coeffs,
        band_of,
        band_power,
        total,
    }
}

impl Spectrum {
    fn normalized(&self) -> Vec<f64> {
        if self.total > 0.0 {
            self.band_power.iter().map(|p| p / self.total).collect()
        } else {
            vec![0.0; SPECTRAL_BANDS]
        }
    }

    /// Gradient w.r.t. the raw channel of `g · normalized()`.
    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let n = self.coeffs.len();
        if self.total <= 0.0 {
            return vec![0.0; n];
        }
        let weighted: f64 = g.iter().zip(&self.band_power).map(|(a, p)| a * p).sum();
        let common = -weighted / (self.total * self.total);
        let mut spec = vec![Complex::new(0.0, 0.0); n];
        for k in 1..=n / 2 {
            let direct = self.band_of[k].map_or(0.0, |b| g[b] / self.total);
            spec[k] = self.coeffs[k] * (direct + common);
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
        // d|X_k|²/dc_n = 2·Re(conj(X_k)·e^{-2πikn/N}); summed over k this is
        // twice the real part of the unnormalized inverse transform.
        let grad_c: Vec<f64> = spec.iter().map(|c| 2.0 * c.re).collect();
        let grad_w: Vec<f64> = grad_c.iter().zip(&self.window).map(|(g, w)| g * w).collect();
        let mean_term = grad_w.iter().sum::<f64>() / n as f64;
        grad_w.iter().map(|g| g - mean_term).collect()
    }
}

fn speed_order(speed: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..speed.len()).collect();
    order.sort_by(|&a, &b| speed[a].total_cmp(&speed[b]));
    order
}

fn quantile_value(s: f64) -> f64 {
    (1.0 + s).log10() / 3.0
}

impl StatisticalEncoder {
    pub fn blocks(&self, v: &Signal2) -> EmbeddingBlocks {
        let n = v.len();
        let mut blocks = EmbeddingBlocks {
            speed_hist: vec![0.0; SPEED_BINS],
            direction_hist: vec![0.0; DIRECTION_BINS],
            spectral_h: vec![0.0; SPECTRAL_BANDS],
            spectral_v: vec![0.0; SPECTRAL_BANDS],
            accel_hist: vec![0.0; ACCEL_BINS],
            speed_quantiles: vec![0.0; QUANTILES],
        };
        if n == 0 {
            return blocks;
        }
        let speed = v.magnitude();
        for (i, &s) in speed.iter().enumerate() {
            blocks.speed_hist[log_bin(s, SPEED_LOG_RANGE, SPEED_BINS)] += 1.0;
            if s >= DIRECTION_MIN_SPEED {
                let angle = v.v[i].atan2(v.h[i]);
                let bin = ((angle + PI) / (2.0 * PI) * DIRECTION_BINS as f64) as usize;
                blocks.direction_hist[bin.min(DIRECTION_BINS - 1)] += 1.0;
            }
        }
        for c in blocks.speed_hist.iter_mut().chain(&mut blocks.direction_hist) {
            *c /= n as f64;
        }
        blocks.spectral_h = spectrum(&v.h).normalized();
        blocks.spectral_v = spectrum(&v.v).normalized();
        if n > 1 {
            for i in 0..n - 1 {
                let a = (v.h[i + 1] - v.h[i]).hypot(v.v[i + 1] - v.v[i]) / DT;
                blocks.accel_hist[log_bin(a, ACCEL_LOG_RANGE, ACCEL_BINS)] += 1.0;
            }
            for c in &mut blocks.accel_hist {
                *c /= (n - 1) as f64;
            }
        }
        let order = speed_order(&speed);
        for (j, slot) in blocks.speed_quantiles.iter_mut().enumerate() {
            let q = j as f64 / (QUANTILES - 1) as f64;
            let (lo, hi, wl, wh) = quantile_weights(n, q);
            *slot = quantile_value(wl * speed[order[lo]] + wh * speed[order[hi]]);
        }
        blocks
    }
}

impl Encoder for StatisticalEncoder {
    fn encode(&self, v: &Signal2) -> UserEmbedding {
        UserEmbedding::from_raw(self.blocks(v).concat())
            .unwrap_or_else(|_| UserEmbedding::degenerate())
    }

    fn backward(&self, v: &Signal2, upstream: &[f64]) -> Signal2 {
        let n = v.len();
        let mut grad = Signal2::zeros(n);
        if n == 0 {
            return grad;
        }
        let raw = self.blocks(v).concat();
        let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return grad;
        }
        // u = r/|r|  =>  dL/dr = (g - (g·u)u)/|r|
        let gu: f64 = upstream.iter().zip(&raw).map(|(g, r)| g * r / norm).sum();
        let g_raw: Vec<f64> = upstream
            .iter()
            .zip(&raw)
            .map(|(g, r)| (g - gu * r / norm) / norm)
            .collect();

        let gh = spectrum(&v.h).backward(&g_raw[OFF_SPEC_H..OFF_SPEC_H + SPECTRAL_BANDS]);
        let gv = spectrum(&v.v).backward(&g_raw[OFF_SPEC_V..OFF_SPEC_V + SPECTRAL_BANDS]);
        for i in 0..n {
            grad.h[i] += gh[i];
            grad.v[i] += gv[i];
        }

        let speed = v.magnitude();
        let order = speed_order(&speed);
        let mut g_speed = vec![0.0; n];
        for j in 0..QUANTILES {
            let q = j as f64 / (QUANTILES - 1) as f64;
            let (lo, hi, wl, wh) = quantile_weights(n, q);
            let s = wl * speed[order[lo]] + wh * speed[order[hi]];
            let d = g_raw[OFF_QUANTILE + j] / (3.0 * std::f64::consts::LN_10 * (1.0 + s));
            g_speed[order[lo]] += d * wl;
            g_speed[order[hi]] += d * wh;
        }
        for i in 0..n {
            if speed[i] > 0.0 && g_speed[i] != 0.0 {
                grad.h[i] += g_speed[i] * v.h[i] / speed[i];
                grad.v[i] += g_speed[i] * v.v[i] / speed[i];
            }
        }
        grad
    }
}

/// Writes `subject_id,session,round,task,window_index,e0..e127` rows.
pub fn write_embeddings<W: Write>(mut out: W, rows: &[(WindowKey, UserEmbedding)]) -> Result<()> {
    let io = |e| Error::io("writing embeddings", e);
    write!(out, "subject_id,session,round,task,window_index").map_err(io)?;
    for i in 0..EMBEDDING_DIM {
        write!(out, ",e{i}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for (key, emb) in rows {
        let r = key.record;
        write!(
            out,
            "{},{},{},{},{}",
            r.subject_id, r.session, r.round, r.task, key.window_index
        )
        .map_err(io)?;
        for c in emb.as_slice() {
            write!(out, ",{c}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64, scale: f64) -> Signal2 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for _ in 0..n {
            a = 0.9 * a + rng.random_range(-1.0..1.0) * scale;
            b = 0.9 * b + rng.random_range(-1.0..1.0) * scale;
            h.push(a + 0.3 * scale);
            v.push(b);
        }
        Signal2 { h, v }
    }

    fn norm(e: &UserEmbedding) -> f64 {
        e.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let s = random_signal(5000, 1, 40.0);
        let a = StatisticalEncoder.encode(&s);
        let b = StatisticalEncoder.encode(&s);
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert!(a.as_slice().iter().all(|c| c.is_finite()));
    }

    #[test]
    fn zero_velocity_puts_mass_in_lowest_speed_bin() {
        let blocks = StatisticalEncoder.blocks(&Signal2::zeros(5000));
        assert_eq!(blocks.speed_hist[0], 1.0);
        assert!(blocks.speed_hist[1..].iter().all(|&c| c == 0.0));
        assert!(blocks.spectral_h.iter().chain(&blocks.spectral_v).all(|&c| c == 0.0));
        assert!(blocks.direction_hist.iter().all(|&c| c == 0.0));
        let e = StatisticalEncoder.encode(&Signal2::zeros(5000));
        assert!((norm(&e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_signal_maps_to_e1() {
        let e = StatisticalEncoder.encode(&Signal2::zeros(0));
        assert_eq!(e, UserEmbedding::degenerate());
    }

    #[test]
    fn time_reversal_preserves_every_block() {
        let s = random_signal(5000, 2, 25.0);
        let fwd = StatisticalEncoder.blocks(&s);
        let rev = StatisticalEncoder.blocks(&s.reversed());
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert_eq!(fwd.speed_hist, rev.speed_hist);
        assert!(close(&fwd.direction_hist, &rev.direction_hist));
        assert!(close(&fwd.accel_hist, &rev.accel_hist));
        assert!(close(&fwd.speed_quantiles, &rev.speed_quantiles));
        assert!(close(&fwd.spectral_h, &rev.spectral_h));
        assert!(close(&fwd.spectral_v, &rev.spectral_v));
    }

    #[test]
    fn histograms_are_permutation_invariant() {
        let s = random_signal(3000, 3, 60.0);
        let mut idx: Vec<usize> = (0..s.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let shuffled = Signal2 {
            h: idx.iter().map(|&i| s.h[i]).collect(),
            v: idx.iter().map(|&i| s.v[i]).collect(),
        };
        let a = StatisticalEncoder.blocks(&s);
        let b = StatisticalEncoder.blocks(&shuffled);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&a.speed_hist, &b.speed_hist));
        assert!(close(&a.direction_hist, &b.direction_hist));
        assert!(close(&a.speed_quantiles, &b.speed_quantiles));
    }

    #[test]
    fn cosine_of_identical_and_orthogonal() {
        let e = StatisticalEncoder.encode(&random_signal(500, 4, 10.0));
        assert!((cosine_similarity(&e, &e) - 1.0).abs() < 1e-12);
        let mut a = vec![0.0; EMBEDDING_DIM];
        let mut b = vec![0.0; EMBEDDING_DIM];
        a[3] = 1.0;
        b[77] = 2.0;
        let (a, b) = (
            UserEmbedding::from_raw(a).unwrap(),
            UserEmbedding::from_raw(b).unwrap(),
        );
        assert_eq!(cosine_similarity(&a, &b), 0.0);
    }

    #[test]
    fn cosine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ea, eb) = (
                UserEmbedding::from_raw(a.clone()).unwrap(),
                UserEmbedding::from_raw(b.clone()).unwrap(),
            );
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut dot = 0.0;
            for i in 0..EMBEDDING_DIM {
                dot += (a[i] / na) * (b[i] / nb);
            }
            let c = cosine_similarity(&ea, &eb);
            assert!((c - dot).abs() < 1e-12);
            assert!((cosine_similarity(&eb, &ea) - c).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = random_signal(96, 6, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let upstream: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |sig: &Signal2| -> f64 {
            StatisticalEncoder
                .encode(sig)
                .as_slice()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum()
        };
        let grad = StatisticalEncoder.backward(&s, &upstream);
        let h = 1e-6;
        let mut checked = 0;
        for ch in 0..2 {
            for i in 0..s.len() {
                let mut plus = s.clone();
                let mut minus = s.clone();
                let (p, m) = if ch == 0 {
                    (&mut plus.h[i], &mut minus.h[i])
                } else {
                    (&mut plus.v[i], &mut minus.v[i])
                };
                *p += h;
                *m -= h;
                let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
                let analytic = if ch == 0 { grad.h[i] } else { grad.v[i] };
                // 1e-9 absolute slack covers rounding in the difference quotient.
                let tol = 1e-4 * numeric.abs().max(analytic.abs()) + 1e-9;
                assert!(
                    (numeric - analytic).abs() < tol,
                    "ch={ch} i={i}: analytic {analytic} numeric {numeric}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 192);
    }
}
