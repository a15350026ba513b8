//! Noise schedules.
//!
//! [`DiscreteNoiseSchedule`] drives the ancestral (DDPM) sampler and
//! [`ContinuousTimeGrid`] drives the probability-flow and reverse-SDE
//! samplers. Both are computed eagerly and never mutated afterwards.
//!
//! Discrete steps are indexed `1..=T`. Internally arrays are zero-based, so
//! `betas[t - 1]` is the variance added at step `t`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_betas: Vec<f64>,
}

impl DiscreteNoiseSchedule {
    /// Builds a schedule from explicit per-step variances.
    ///
    /// The cumulative product uses `alpha_bar_0 = 1`, which makes the first
    /// posterior variance exactly zero: the last ancestral step adds no noise.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::invalid(format!(
                "beta at step {} is {b}, must lie in (0, 1)",
                i + 1
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut posterior_betas = Vec::with_capacity(betas.len());
        let mut prev = 1.0;
        for (b, ab) in betas.iter().zip(&alpha_bars) {
            posterior_betas.push((1.0 - prev) / (1.0 - ab) * b);
            prev = *ab;
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_betas,
        })
    }

    pub fn step_count(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.betas.len() {
            return Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.betas.len()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    /// Cumulative product up to `t`; `t = 0` returns 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.idx(t)?])
    }

    pub fn posterior_beta(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_betas[self.idx(t)?])
    }

    /// Equivalent variance-exploding noise level of step `t`:
    /// `x_t / sqrt(alpha_bar_t) = x_0 + sigma_t * eps`.
    pub fn equivalent_sigma(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(((1.0 - ab) / ab).sqrt())
    }

    /// Coefficients `(c_x0, c_xt)` of the forward-process posterior mean
    /// `mu_tilde = c_x0 * x_0 + c_xt * x_t` at step `t`.
    pub fn posterior_mean_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        let i = self.idx(t)?;
        let ab_prev = self.alpha_bar(t - 1)?;
        let ab = self.alpha_bars[i];
        let c_x0 = ab_prev.sqrt() * self.betas[i] / (1.0 - ab);
        let c_xt = self.alphas[i].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c_x0, c_xt))
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_betas(&self) -> &[f64] {
        &self.posterior_betas
    }
}

/// Linearly spaced betas from `beta_start` (step 1) to `beta_end` (step T).
pub fn linear_beta_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiscreteNoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    for (name, v) in [("beta_start", beta_start), ("beta_end", beta_end)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    if beta_start > beta_end {
        return Err(Error::invalid(format!(
            "beta_start {beta_start} exceeds beta_end {beta_end}"
        )));
    }
    let betas = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (steps - 1) as f64;
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / span))
            .collect()
    };
    DiscreteNoiseSchedule::from_betas(betas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTimeGrid {
    sigmas: Vec<f64>,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
}

impl ContinuousTimeGrid {
    /// Number of nodes before the terminal zero.
    pub fn node_count(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// All nodes including the terminal zero.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Consecutive `(sigma_from, sigma_to)` pairs in sampling order; the last
    /// interval ends at zero.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sigmas.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// EDM-style power interpolation between `sigma_max` and `sigma_min` in
/// `sigma^(1/rho)` space, with a terminal zero appended.
pub fn power_sigma_grid(
    nodes: usize,
    sigma_min: f64,
    sigma_max: f64,
    rho: f64,
) -> Result<ContinuousTimeGrid> {
    if nodes < 2 {
        return Err(Error::invalid(format!("grid needs at least 2 nodes, got {nodes}")));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::invalid(format!(
            "need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho = {rho} must be positive")));
    }
    let inv = 1.0 / rho;
    let hi = sigma_max.powf(inv);
    let lo = sigma_min.powf(inv);
    let span = (nodes - 1) as f64;
    let mut sigmas: Vec<f64> = (0..nodes)
        .map(|i| (hi + (i as f64 / span) * (lo - hi)).powf(rho))
        .collect();
    // pin the endpoints against powf round-off
    sigmas[0] = sigma_max;
    sigmas[nodes - 1] = sigma_min;
    sigmas.push(0.0);
    Ok(ContinuousTimeGrid {
        sigmas,
        sigma_min,
        sigma_max,
        rho,
    })
}

/// Plain JSON record of a run's schedule, for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    #[serde(rename = "T")]
    pub steps: usize,
    pub betas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl ScheduleRecord {
    pub fn new(discrete: Option<&DiscreteNoiseSchedule>, grid: Option<&ContinuousTimeGrid>) -> Self {
        let betas = discrete.map(|s| s.betas().to_vec()).unwrap_or_default();
        let sigmas = grid.map(|g| g.sigmas().to_vec()).unwrap_or_default();
        let steps = match (discrete, grid) {
            (Some(s), _) => s.step_count(),
            (None, Some(g)) => g.node_count(),
            (None, None) => 0,
        };
        Self { steps, betas, sigmas }
    }
}
