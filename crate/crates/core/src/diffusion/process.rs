use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Denoiser, NoiseSchedule};
use crate::embedding::UserEmbedding;
use crate::error::{Error, Result};
use crate::gaze::{IdentityRemovedSignal, Signal2};

/// Gaussian noise (or a prediction of it) with the shape of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor(pub Signal2);

impl Deref for NoiseTensor {
    type Target = Signal2;

    fn deref(&self) -> &Signal2 {
        &self.0
    }
}

impl NoiseTensor {
    pub fn standard_normal(len: usize, rng: &mut impl rand::Rng) -> Self {
        let mut draw = || -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(rng)).collect() };
        let h = draw();
        let v = draw();
        Self(Signal2 { h, v })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyState {
    pub xt: Signal2,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub v0: IdentityRemovedSignal,
    pub z: UserEmbedding,
}

/// Variance of the ancestral reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// σ_t² = β_t·(1 − ᾱ_{t−1})/(1 − ᾱ_t)
    #[default]
    PosteriorTilde,
    /// σ_t² = β_t
    Beta,
}

fn same_shape(a: &Signal2, b: &Signal2, what: &str) -> Result<()> {
    if a.len() != b.len() || a.h.len() != a.v.len() || b.h.len() != b.v.len() {
        return Err(Error::Shape(format!(
            "{what}: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·ε
pub fn forward_noising(
    x0: &Signal2,
    t: usize,
    eps: &NoiseTensor,
    sched: &NoiseSchedule,
) -> Result<NoisyState> {
    sched.check_step(t)?;
    same_shape(x0, eps, "forward_noising")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(NoisyState {
        xt: x0.zip_map(eps, |x, e| a * x + b * e),
        t,
    })
}

/// x̂0 = (x_t − √(1 − ᾱ_t)·ε̂)/√ᾱ_t
pub fn predict_x0(xt: &NoisyState, eps_hat: &NoiseTensor, sched: &NoiseSchedule) -> Result<Signal2> {
    sched.check_step(xt.t)?;
    same_shape(&xt.xt, eps_hat, "predict_x0")?;
    let ab = sched.alpha_bar(xt.t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(xt.xt.zip_map(eps_hat, |x, e| (x - b * e) / a))
}

fn sigma(t: usize, sched: &NoiseSchedule, mode: VarianceMode) -> f64 {
    if t <= 1 {
        return 0.0;
    }
    match mode {
        VarianceMode::PosteriorTilde => {
            (sched.beta(t) * (1.0 - sched.alpha_bar(t - 1)) / (1.0 - sched.alpha_bar(t))).sqrt()
        }
        VarianceMode::Beta => sched.beta(t).sqrt(),
    }
}

/// Ancestral step t → t−1:
/// mean = (x_t − β_t/√(1 − ᾱ_t)·ε̂)/√α_t, x_{t−1} = mean + σ_t·noise, σ_1 = 0.
pub fn reverse_step(
    xt: &NoisyState,
    eps_hat: &NoiseTensor,
    noise: &NoiseTensor,
    sched: &NoiseSchedule,
    mode: VarianceMode,
) -> Result<NoisyState> {
    sched.check_step(xt.t)?;
    same_shape(&xt.xt, eps_hat, "reverse_step")?;
    same_shape(&xt.xt, noise, "reverse_step noise")?;
    let t = xt.t;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let s = sigma(t, sched, mode);
    let mean = xt.xt.zip_map(eps_hat, |x, e| (x - coef * e) * inv_sqrt_alpha);
    Ok(NoisyState {
        xt: mean.zip_map(noise, |m, n| m + s * n),
        t: t - 1,
    })
}

/// Full reverse chain from x_T ~ N(0, I). All noise comes from a ChaCha
/// stream seeded with `seed`: first x_T, then one draw per step with t > 1.
pub fn sample(
    denoiser: &impl Denoiser,
    cond: &Conditioning,
    sched: &NoiseSchedule,
    mode: VarianceMode,
    len: usize,
    seed: u64,
) -> Result<Signal2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = NoisyState {
        xt: NoiseTensor::standard_normal(len, &mut rng).0,
        t: sched.steps(),
    };
    let zeros = NoiseTensor(Signal2::zeros(len));
    while state.t > 0 {
        let eps_hat = NoiseTensor(denoiser.predict_noise(&state.xt, state.t, cond));
        if !eps_hat.is_finite() {
            return Err(Error::Numeric {
                context: format!("denoiser output at step {}", state.t),
            });
        }
        let noise = if state.t > 1 {
            NoiseTensor::standard_normal(len, &mut rng)
        } else {
            zeros.clone()
        };
        state = reverse_step(&state, &eps_hat, &noise, sched, mode)?;
    }
    Ok(state.xt)
}
