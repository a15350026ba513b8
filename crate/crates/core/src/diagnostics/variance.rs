//! One-step variance inflation under an imperfect x0 prediction.
//!
//! With `x0_hat = x0 + e * eps0` the reverse step from `t + 1` draws
//! `x_t ~ N(mu_tilde(x_{t+1}, x0_hat), beta_tilde_{t+1})`, whose variance
//! given `x0` exceeds the training-time `1 - alpha_bar_t` by
//! `(sqrt(alpha_bar_t) beta_{t+1} / (1 - alpha_bar_{t+1}) * e)^2`.

use serde::{Deserialize, Serialize};

use crate::rng;
use crate::schedules::DiscreteNoiseSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub t: usize,
    pub e_next: f64,
    pub empirical: f64,
    pub predicted: f64,
    /// Standard error of `empirical`.
    pub stderr: f64,
    pub n: usize,
}

impl VarianceCheck {
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.predicted) / self.stderr
    }
}

fn check_t(schedule: &DiscreteNoiseSchedule, t: usize) -> Result<()> {
    if t == 0 || t + 1 > schedule.step_count() {
        return Err(Error::invalid(format!(
            "t = {t} needs 1 <= t and t + 1 <= T = {}",
            schedule.step_count()
        )));
    }
    Ok(())
}

/// Excess variance of `x_t` over `1 - alpha_bar_t` for prediction error `e_next`.
pub fn inflation_term(schedule: &DiscreteNoiseSchedule, t: usize, e_next: f64) -> Result<f64> {
    check_t(schedule, t)?;
    let c = schedule.alpha_bar(t)?.sqrt() * schedule.beta(t + 1)? / (1.0 - schedule.alpha_bar(t + 1)?);
    Ok((c * e_next).powi(2))
}

pub fn predicted_variance(schedule: &DiscreteNoiseSchedule, t: usize, e_next: f64) -> Result<f64> {
    Ok(1.0 - schedule.alpha_bar(t)? + inflation_term(schedule, t, e_next)?)
}

/// Simulates `n` one-step reverse transitions from `t + 1` to `t` at a fixed
/// `x0 = 1` and compares the sample variance of `x_t` with the prediction.
pub fn variance_inflation_check(
    schedule: &DiscreteNoiseSchedule,
    t: usize,
    e_next: f64,
    n: usize,
    seed: u64,
) -> Result<VarianceCheck> {
    check_t(schedule, t)?;
    if !(e_next >= 0.0) || !e_next.is_finite() {
        return Err(Error::invalid(format!("e_next = {e_next} must be >= 0")));
    }
    if n < 2 {
        return Err(Error::invalid("variance check needs n >= 2"));
    }
    let x0 = 1.0;
    let ab_next = schedule.alpha_bar(t + 1)?;
    let (c_x0, c_xt) = schedule.posterior_mean_coefficients(t + 1)?;
    let noise = schedule.posterior_beta(t + 1)?.sqrt();
    let mut rng = rng::stream(seed, t as u64);
    let mut draw = [0.0; 3];
    let values: Vec<f64> = (0..n)
        .map(|_| {
            rng::fill_standard_normal(&mut rng, &mut draw);
            let x_next = ab_next.sqrt() * x0 + (1.0 - ab_next).sqrt() * draw[0];
            let x0_hat = x0 + e_next * draw[1];
            c_x0 * x0_hat + c_xt * x_next + noise * draw[2]
        })
        .collect();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / nf;
    let empirical = m2 * nf / (nf - 1.0);
    let stderr = ((m4 - m2 * m2) / nf).sqrt();
    Ok(VarianceCheck {
        t,
        e_next,
        empirical,
        predicted: predicted_variance(schedule, t, e_next)?,
        stderr,
        n,
    })
}
