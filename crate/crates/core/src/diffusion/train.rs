use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::ReferenceDenoiser;
use super::loss::{combined_loss, combined_loss_grad_eps_hat};
use super::process::{forward_noising, predict_x0, sample, Conditioning, NoiseTensor, VarianceMode};
use super::NoiseSchedule;
use crate::embedding::{Encoder, StatisticalEncoder};
use crate::error::{Error, Result};
use crate::gaze::{identity_removal, position_to_velocity, GazeWindow, Signal2, VelocitySignal};
use crate::par;
use crate::util::derive_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// Stream tags for derive_seed.
const SEED_INIT: u64 = 0;
const SEED_SHUFFLE: u64 = 1;
const SEED_DRAW: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Identity-guidance weight λ.
    pub lambda: f64,
    pub rng_seed: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Velocities are divided by this (deg/s) before diffusion.
    pub velocity_scale: f64,
    pub variance: VarianceMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0002,
            batch_size: 32,
            epochs: 450,
            lambda: 0.1,
            rng_seed: 0,
            timesteps: 50,
            beta_start: 0.0001,
            beta_end: 0.05,
            velocity_scale: 100.0,
            variance: VarianceMode::PosteriorTilde,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.velocity_scale > 0.0 && self.velocity_scale.is_finite()) {
            return Err(Error::Config(format!(
                "velocity_scale must be > 0, got {}",
                self.velocity_scale
            )));
        }
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end).map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// A trained (or freshly initialized) denoiser plus everything needed to
/// sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: ReferenceDenoiser,
    pub schedule: NoiseSchedule,
    pub velocity_scale: f64,
    pub variance: VarianceMode,
}

impl DiffusionModel {
    pub fn init(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            denoiser: ReferenceDenoiser::new(derive_seed(cfg.rng_seed, &[SEED_INIT])),
            schedule: cfg.schedule()?,
            velocity_scale: cfg.velocity_scale,
            variance: cfg.variance,
        })
    }

    /// Samples a velocity signal (deg/s) of the conditioning's length.
    pub fn synthesize(&self, cond: &Conditioning, seed: u64) -> Result<VelocitySignal> {
        let x0 = sample(&self.denoiser, cond, &self.schedule, self.variance, cond.v0.len(), seed)?;
        Ok(VelocitySignal(x0.scale(self.velocity_scale)))
    }
}

impl Conditioning {
    /// Identity-removed signal and embedding of a velocity signal.
    pub fn from_velocity(v: &VelocitySignal, encoder: &dyn Encoder) -> Self {
        Self {
            v0: identity_removal(v),
            z: encoder.encode(v),
        }
    }
}

/// One training window in model units.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    /// Velocity in deg/s.
    pub v: Signal2,
    /// `v / velocity_scale`.
    pub x0: Signal2,
    pub cond: Conditioning,
}

impl TrainingExample {
    pub fn from_velocity(v: &VelocitySignal, velocity_scale: f64, encoder: &dyn Encoder) -> Self {
        Self {
            v: v.0.clone(),
            x0: v.scale(1.0 / velocity_scale),
            cond: Conditioning::from_velocity(v, encoder),
        }
    }

    pub fn from_window(w: &GazeWindow, velocity_scale: f64, encoder: &dyn Encoder) -> Self {
        Self::from_velocity(&position_to_velocity(w), velocity_scale, encoder)
    }
}

/// Diffusion step and injected noise for one example.
#[derive(Debug, Clone)]
pub struct TrainingDraw {
    pub t: usize,
    pub eps: NoiseTensor,
}

impl TrainingDraw {
    pub fn sample(seed: u64, len: usize, steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(1..=steps);
        Self {
            t,
            eps: NoiseTensor::standard_normal(len, &mut rng),
        }
    }
}

fn example_loss(
    model: &DiffusionModel,
    ex: &TrainingExample,
    draw: &TrainingDraw,
    lambda: f64,
    encoder: &dyn Encoder,
) -> Result<f64> {
    let state = forward_noising(&ex.x0, draw.t, &draw.eps, &model.schedule)?;
    let eps_hat = NoiseTensor(model.denoiser.forward(&state.xt, draw.t, &ex.cond).0);
    let v_hat = predict_x0(&state, &eps_hat, &model.schedule)?.scale(model.velocity_scale);
    combined_loss(&draw.eps, &eps_hat, &ex.v, &v_hat, lambda, encoder)
}

fn example_loss_and_grad(
    model: &DiffusionModel,
    ex: &TrainingExample,
    draw: &TrainingDraw,
    lambda: f64,
    encoder: &dyn Encoder,
) -> Result<(f64, Vec<f64>)> {
    let sched = &model.schedule;
    let state = forward_noising(&ex.x0, draw.t, &draw.eps, sched)?;
    let (eps_hat, cache) = model.denoiser.forward(&state.xt, draw.t, &ex.cond);
    let eps_hat = NoiseTensor(eps_hat);
    let v_hat = predict_x0(&state, &eps_hat, sched)?.scale(model.velocity_scale);
    let ab = sched.alpha_bar(draw.t);
    let dvhat_deps = -model.velocity_scale * (1.0 - ab).sqrt() / ab.sqrt();
    let (loss, g) =
        combined_loss_grad_eps_hat(&draw.eps, &eps_hat, &ex.cond.z, &v_hat, lambda, encoder, dvhat_deps)?;
    Ok((loss, model.denoiser.backward(&cache, &g)))
}

fn check_batch(examples: &[TrainingExample], draws: &[TrainingDraw]) -> Result<()> {
    if examples.len() != draws.len() || examples.is_empty() {
        return Err(Error::Shape(format!(
            "batch has {} examples and {} draws",
            examples.len(),
            draws.len()
        )));
    }
    Ok(())
}

/// Mean combined loss over a batch.
pub fn batch_loss(
    model: &DiffusionModel,
    examples: &[TrainingExample],
    draws: &[TrainingDraw],
    lambda: f64,
    encoder: &dyn Encoder,
) -> Result<f64> {
    check_batch(examples, draws)?;
    let idx: Vec<usize> = (0..examples.len()).collect();
    let losses = par::map(&idx, |&i| example_loss(model, &examples[i], &draws[i], lambda, encoder));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean combined loss and its gradient. Per-example gradients are computed
/// in parallel and summed in index order, so the result does not depend on
/// thread scheduling.
pub fn batch_loss_and_grad(
    model: &DiffusionModel,
    examples: &[TrainingExample],
    draws: &[TrainingDraw],
    lambda: f64,
    encoder: &dyn Encoder,
) -> Result<(f64, Vec<f64>)> {
    check_batch(examples, draws)?;
    let idx: Vec<usize> = (0..examples.len()).collect();
    let parts = par::map(&idx, |&i| {
        example_loss_and_grad(model, &examples[i], &draws[i], lambda, encoder)
    });
    let mut total = 0.0;
    let mut grad = vec![0.0; ReferenceDenoiser::PARAM_COUNT];
    for part in parts {
        let (l, g) = part?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let k = 1.0 / examples.len() as f64;
    grad.iter_mut().for_each(|g| *g *= k);
    Ok((total * k, grad))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    /// Mean per-example loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam on the combined loss with the statistical encoder.
pub fn train(windows: &[GazeWindow], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "training needs at least batch_size = {} windows, got {}",
            cfg.batch_size,
            windows.len()
        )));
    }
    let encoder = StatisticalEncoder;
    let examples = par::map(windows, |w| TrainingExample::from_window(w, cfg.velocity_scale, &encoder));
    let mut model = DiffusionModel::init(cfg)?;
    let mut adam = Adam::new(ReferenceDenoiser::PARAM_COUNT);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let steps = model.schedule.steps();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.rng_seed,
            &[SEED_SHUFFLE, epoch as u64],
        )));
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let draws: Vec<TrainingDraw> = chunk
                .iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.rng_seed, &[SEED_DRAW, epoch as u64, i as u64]);
                    TrainingDraw::sample(seed, examples[i].x0.len(), steps)
                })
                .collect();
            let (loss, grad) = batch_loss_and_grad(&model, &batch, &draws, cfg.lambda, &encoder)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    context: format!("training loss at epoch {epoch}, batch {b}"),
                });
            }
            epoch_total += loss * chunk.len() as f64;
            adam.update(model.denoiser.params_mut(), &grad, cfg.learning_rate);
        }
        let mean = epoch_total / examples.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}
