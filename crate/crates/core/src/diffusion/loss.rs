//! Combined noise-prediction and identity-guidance objective:
//! `L = MSE(ε, ε̂) + λ·(1 − cos(enc(v̂), enc(v)))`.

use crate::embedding::{cosine_similarity, Encoder, UserEmbedding};
use crate::error::{Error, Result};
use crate::gaze::Signal2;

fn check(a: &Signal2, b: &Signal2, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{what}: lengths {} and {} differ", a.len(), b.len())));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Mean squared error over both channels.
pub fn noise_mse(eps: &Signal2, eps_hat: &Signal2) -> Result<f64> {
    check(eps, eps_hat, "noise_mse")?;
    let n = 2 * eps.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sse: f64 = eps
        .h
        .iter()
        .zip(&eps_hat.h)
        .chain(eps.v.iter().zip(&eps_hat.v))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / n as f64)
}

pub fn combined_loss(
    eps: &Signal2,
    eps_hat: &Signal2,
    v: &Signal2,
    v_hat: &Signal2,
    lambda: f64,
    encoder: &dyn Encoder,
) -> Result<f64> {
    check(v, v_hat, "combined_loss")?;
    check_lambda(lambda)?;
    let mse = noise_mse(eps, eps_hat)?;
    if lambda == 0.0 {
        return Ok(mse);
    }
    let cos = cosine_similarity(&encoder.encode(v_hat), &encoder.encode(v));
    Ok(mse + lambda * (1.0 - cos))
}

/// Loss and its gradient with respect to ε̂, given `target = enc(v)` and
/// `dvhat_deps = ∂v̂/∂ε̂` (a scalar, since v̂ is affine in ε̂).
pub fn combined_loss_grad_eps_hat(
    eps: &Signal2,
    eps_hat: &Signal2,
    target: &UserEmbedding,
    v_hat: &Signal2,
    lambda: f64,
    encoder: &dyn Encoder,
    dvhat_deps: f64,
) -> Result<(f64, Signal2)> {
    check(eps, v_hat, "combined_loss_grad_eps_hat")?;
    check_lambda(lambda)?;
    let mse = noise_mse(eps, eps_hat)?;
    let n = 2 * eps.len();
    let k = if n == 0 { 0.0 } else { 2.0 / n as f64 };
    let mut grad = eps_hat.zip_map(eps, |a, b| k * (a - b));
    if lambda == 0.0 {
        return Ok((mse, grad));
    }
    let cos = cosine_similarity(&encoder.encode(v_hat), target);
    let dcos = encoder.backward(v_hat, target.as_slice());
    let s = -lambda * dvhat_deps;
    for (g, d) in grad.h.iter_mut().zip(&dcos.h).chain(grad.v.iter_mut().zip(&dcos.v)) {
        *g += s * d;
    }
    Ok((mse + lambda * (1.0 - cos), grad))
}
