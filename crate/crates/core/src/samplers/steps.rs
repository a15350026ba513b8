//! Single-step update rules.
//!
//! Continuous solvers use the variance-exploding probability flow
//! `dx/dsigma = eps(x, sigma)` with `eps = -sigma * score`, so one Euler step
//! is `x + (sigma_to - sigma_from) * eps / lambda`.

use crate::schedules::DiscreteNoiseSchedule;
use crate::world::ScoreField;
use crate::{Error, Result};

pub(crate) struct Scratch {
    eps: Vec<f64>,
    eps2: Vec<f64>,
    pred: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            eps: vec![0.0; d],
            eps2: vec![0.0; d],
            pred: vec![0.0; d],
        }
    }
}

pub fn apply_epsilon_scaling(epsilon: &[f64], lambda: f64) -> Vec<f64> {
    epsilon.iter().map(|e| e / lambda).collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda = {lambda} must be positive")))
    }
}

pub(crate) fn check_interval(sigma_from: f64, sigma_to: f64) -> Result<()> {
    if sigma_from > sigma_to && sigma_to >= 0.0 && sigma_from.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sigma must decrease: {sigma_from} -> {sigma_to}"
        )))
    }
}

/// `eps = -sigma * field(x, sigma)` into `eps`; returns `||eps||`.
pub(crate) fn extract_eps(
    field: &dyn ScoreField,
    x: &[f64],
    sigma: f64,
    eps: &mut [f64],
) -> Result<f64> {
    field.evaluate_into(x, sigma, eps)?;
    let mut ss = 0.0;
    for e in eps.iter_mut() {
        *e *= -sigma;
        ss += *e * *e;
    }
    Ok(ss.sqrt())
}

pub(crate) fn ancestral_update(
    x: &mut [f64],
    t: usize,
    schedule: &DiscreteNoiseSchedule,
    eps: &[f64],
    lambda: f64,
    z: &[f64],
) -> Result<()> {
    let alpha = schedule.alpha(t)?;
    let coef = schedule.beta(t)? / (1.0 - schedule.alpha_bar(t)?).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let noise = schedule.posterior_beta(t)?.sqrt();
    for ((xi, e), zi) in x.iter_mut().zip(eps).zip(z) {
        *xi = inv_sqrt_alpha * (*xi - coef * (e / lambda)) + noise * zi;
    }
    Ok(())
}

/// One DDPM ancestral step from `x_t` to `x_{t-1}` with scaled noise prediction.
pub fn ancestral_step(
    x_t: &[f64],
    t: usize,
    schedule: &DiscreteNoiseSchedule,
    eps_hat: &[f64],
    lambda: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_dims(x_t.len(), &[eps_hat.len(), z.len()])?;
    let mut x = x_t.to_vec();
    ancestral_update(&mut x, t, schedule, eps_hat, lambda, z)?;
    Ok(x)
}

/// Ancestral step with `eps` taken from a variance-exploding score field:
/// `x_t / sqrt(alpha_bar_t)` is a VE state at `sigma_t = sqrt((1 - ab) / ab)`.
pub(crate) fn ancestral_in_place(
    x: &mut [f64],
    t: usize,
    schedule: &DiscreteNoiseSchedule,
    field: &dyn ScoreField,
    lambda: f64,
    z: &[f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    let sigma = schedule.equivalent_sigma(t)?;
    let inv = 1.0 / schedule.alpha_bar(t)?.sqrt();
    for (p, xi) in scratch.pred.iter_mut().zip(x.iter()) {
        *p = xi * inv;
    }
    let norm = extract_eps(field, &scratch.pred, sigma, &mut scratch.eps)?;
    ancestral_update(x, t, schedule, &scratch.eps, lambda, z)?;
    Ok(norm)
}

pub(crate) fn euler_in_place(
    x: &mut [f64],
    sigma_from: f64,
    sigma_to: f64,
    field: &dyn ScoreField,
    lambda: f64,
    scratch: &mut Scratch,
) -> Result<f64> {
    check_interval(sigma_from, sigma_to)?;
    let norm = extract_eps(field, x, sigma_from, &mut scratch.eps)?;
    let h = sigma_to - sigma_from;
    for (xi, e) in x.iter_mut().zip(&scratch.eps) {
        *xi += h * (e / lambda);
    }
    Ok(norm)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn heun_in_place(
    x: &mut [f64],
    sigma_from: f64,
    sigma_to: f64,
    predictor: &dyn ScoreField,
    corrector: &dyn ScoreField,
    lambda: f64,
    corrector_lambda: f64,
    scratch: &mut Scratch,
) -> Result<f64> {
    check_interval(sigma_from, sigma_to)?;
    let norm = extract_eps(predictor, x, sigma_from, &mut scratch.eps)?;
    let h = sigma_to - sigma_from;
    for (e, (p, xi)) in scratch.eps.iter_mut().zip(scratch.pred.iter_mut().zip(x.iter())) {
        *e /= lambda;
        *p = xi + h * *e;
    }
    if sigma_to == 0.0 {
        x.copy_from_slice(&scratch.pred);
        return Ok(norm);
    }
    extract_eps(corrector, &scratch.pred, sigma_to, &mut scratch.eps2)?;
    for (xi, (d1, e2)) in x.iter_mut().zip(scratch.eps.iter().zip(&scratch.eps2)) {
        *xi += h * (d1 + e2 / corrector_lambda) / 2.0;
    }
    Ok(norm)
}

pub(crate) fn sde_in_place(
    x: &mut [f64],
    sigma_from: f64,
    sigma_to: f64,
    field: &dyn ScoreField,
    lambda: f64,
    z: &[f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    check_interval(sigma_from, sigma_to)?;
    let norm = extract_eps(field, x, sigma_from, &mut scratch.eps)?;
    let dt = sigma_from - sigma_to;
    let noise = (2.0 * sigma_from * dt).sqrt();
    for ((xi, e), zi) in x.iter_mut().zip(&scratch.eps).zip(z) {
        *xi += -2.0 * dt * (e / lambda) + noise * zi;
    }
    Ok(norm)
}

fn check_dims(expected: usize, others: &[usize]) -> Result<()> {
    for &actual in others {
        if actual != expected {
            return Err(Error::DimensionMismatch { expected, actual });
        }
    }
    Ok(())
}

/// One probability-flow Euler step.
pub fn pf_euler_step(
    x: &[f64],
    sigma_from: f64,
    sigma_to: f64,
    field: &dyn ScoreField,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_dims(field.dim(), &[x.len()])?;
    let mut out = x.to_vec();
    euler_in_place(&mut out, sigma_from, sigma_to, field, lambda, &mut Scratch::new(x.len()))?;
    Ok(out)
}

/// One probability-flow Heun step; the last interval (`sigma_to = 0`) is plain Euler.
pub fn pf_heun_step(
    x: &[f64],
    sigma_from: f64,
    sigma_to: f64,
    predictor: &dyn ScoreField,
    corrector: &dyn ScoreField,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_dims(predictor.dim(), &[x.len(), corrector.dim()])?;
    let mut out = x.to_vec();
    heun_in_place(
        &mut out,
        sigma_from,
        sigma_to,
        predictor,
        corrector,
        lambda,
        lambda,
        &mut Scratch::new(x.len()),
    )?;
    Ok(out)
}

/// One Euler-Maruyama step of the variance-exploding reverse SDE.
pub fn reverse_sde_step(
    x: &[f64],
    sigma_from: f64,
    sigma_to: f64,
    field: &dyn ScoreField,
    lambda: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    check_dims(field.dim(), &[x.len(), z.len()])?;
    let mut out = x.to_vec();
    sde_in_place(&mut out, sigma_from, sigma_to, field, lambda, z, &mut Scratch::new(x.len()))?;
    Ok(out)
}
