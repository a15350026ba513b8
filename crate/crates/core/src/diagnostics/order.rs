//! Empirical order of accuracy of the probability-flow solvers.
//!
//! For a single Gaussian `N(0, v)` the flow from `sigma_max` to `sigma_min`
//! is exactly `x * sqrt((v + sigma_min^2) / (v + sigma_max^2))`, so terminal
//! error can be measured without a reference solve. Integration stops at
//! `sigma_min` because the final Euler step to 0 would dominate Heun's error.

use serde::{Deserialize, Serialize};

use crate::samplers::{pf_euler_step, pf_heun_step, SamplerKind};
use crate::schedules::power_sigma_grid;
use crate::world::IsotropicGaussianMixture;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub kind: SamplerKind,
    pub node_counts: Vec<usize>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderProblem {
    pub variance: f64,
    pub start: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for OrderProblem {
    fn default() -> Self {
        Self {
            variance: 1.0,
            start: 80.0,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope needs two or more paired points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Terminal error of one solve with `nodes` grid nodes.
pub fn terminal_error(kind: SamplerKind, nodes: usize, problem: &OrderProblem) -> Result<f64> {
    let world = IsotropicGaussianMixture::gaussian(vec![0.0], problem.variance)?;
    let grid = power_sigma_grid(nodes, problem.sigma_min, problem.sigma_max, problem.rho)?;
    let sigmas = &grid.sigmas()[..nodes];
    let mut x = vec![problem.start];
    for w in sigmas.windows(2) {
        x = match kind {
            SamplerKind::PfEuler => pf_euler_step(&x, w[0], w[1], &world, 1.0)?,
            SamplerKind::PfHeun => pf_heun_step(&x, w[0], w[1], &world, &world, 1.0)?,
            other => {
                return Err(Error::invalid(format!(
                    "order check is defined for ODE solvers, not {}",
                    other.name()
                )))
            }
        };
    }
    let v = problem.variance;
    let exact = problem.start
        * ((v + problem.sigma_min.powi(2)) / (v + problem.sigma_max.powi(2))).sqrt();
    Ok((x[0] - exact).abs())
}

pub fn solver_order(kind: SamplerKind, node_counts: &[usize], problem: &OrderProblem) -> Result<OrderFit> {
    let errors = node_counts
        .iter()
        .map(|&n| terminal_error(kind, n, problem))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = node_counts.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&xs, &errors)?;
    Ok(OrderFit {
        kind,
        node_counts: node_counts.to_vec(),
        errors,
        slope,
    })
}
